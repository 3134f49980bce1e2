"""Time the sampler on the numba and pure-numpy backends.

Each backend runs in its own interpreter (the backend is fixed at import
time). The script reports wall time per iteration and checks that both
backends produced identical posterior draws.

    python benchmarks/bench_backends.py --grid 6 --trips 200 --iterations 200
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def child(grid: int, trips: int, iterations: int, seed: int) -> None:
    import numpy as np

    from arctime import _jit
    from arctime.model import default_hyperparams
    from arctime.sampler import SamplerConfig, run_chain
    from arctime.simulator import build_grid_scenario, simulate_trips

    sc = build_grid_scenario(grid, grid, 200.0, regime="good", seed=seed)
    data = [s.trip for s in simulate_trips(sc, trips, seed + 1)]
    hyper = default_hyperparams(sc.net)
    cfg = SamplerConfig(iterations=iterations, burn_in=iterations // 2, thin=5, seed=seed, n_chains=1)
    # warm-up so compilation is not timed
    run_chain(sc.net, data[:5], hyper, SamplerConfig(iterations=4, burn_in=2, thin=1, seed=0, n_chains=1))
    t0 = time.perf_counter()
    post = run_chain(sc.net, data, hyper, cfg)
    elapsed = time.perf_counter() - t0
    digest = hashlib.sha256(np.ascontiguousarray(post.mu).tobytes()
                            + np.ascontiguousarray(post.path_len).tobytes()).hexdigest()
    print(json.dumps({"backend": _jit.BACKEND, "seconds": elapsed, "per_iter_ms": 1e3 * elapsed / iterations,
                      "digest": digest}))


def run_backend(no_numba: bool, args) -> dict:
    env = dict(os.environ)
    env.pop("ARCTIME_NO_NUMBA", None)
    if no_numba:
        env["ARCTIME_NO_NUMBA"] = "1"
    cmd = [sys.executable, __file__, "--child", "--grid", str(args.grid), "--trips", str(args.trips),
           "--iterations", str(args.iterations), "--seed", str(args.seed)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--grid", type=int, default=6)
    p.add_argument("--trips", type=int, default=200)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args(argv)
    if args.child:
        child(args.grid, args.trips, args.iterations, args.seed)
        return 0
    fast = run_backend(False, args)
    slow = run_backend(True, args)
    for r in (fast, slow):
        print(f"{r['backend']:>6}: {r['seconds']:8.2f} s  ({r['per_iter_ms']:.2f} ms/iteration)")
    print(f"speed-up: {slow['seconds'] / fast['seconds']:.1f}x")
    same = fast["digest"] == slow["digest"]
    print("draws identical across backends:", same)
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
