"""Command-line pipeline: simulate, fit, predict, evaluate and map outputs.

Every command writes ``manifest.json`` next to its outputs with the resolved
configuration, its hash, the seed and library versions, so a directory is
enough to rerun the command exactly.

Exit status is 0 on success, 1 for invalid input or configuration and 2 for
failures while running.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__, _jit
from .budge import BinModel, fit_budge_bins
from .config import ConfigError, RunConfig, load_config
from .data_io import DataError, load_dataset, split_folds, write_dataset
from .evaluation import (
    BayesPredictor, BudgePredictor, LocalPredictor, OraclePredictor, TravelTimeEstimate, coverage_map,
    estimate_trips, evaluate_methods, map_match_marginals, trip_rng, write_estimates, write_marginals,
)
from .local import fit_local, load_local
from .model import Hyperparams, default_hyperparams
from .network import NetworkError, load_network, write_network
from .sampler import PosteriorSamples, SamplerConfig, gelman_rubin, run_chains
from .simulator import (
    ClassPattern, Scenario, build_grid_scenario, make_noise, read_true_params, read_true_paths, simulate_trips,
    write_ground_truth,
)

logger = logging.getLogger("arctime")

METHODS = ("bayes", "harmonic", "mle", "budge")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors are validation errors: exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------- helpers

def hyper_from_config(net, cfg: RunConfig) -> Hyperparams:
    m = cfg.model
    return default_hyperparams(net, cfg.prior_speeds(), s2=m.s2, b1=m.b1, b2=m.b2, b3=m.b3, b4=m.b4, C=m.C,
                               alpha=cfg.sampler.alpha, alpha_prime=cfg.sampler.alpha_prime,
                               sigma_xy=np.diag([m.location_var, m.location_var]))


def sampler_config_from(cfg: RunConfig, seed: int, threads: int = 1) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(iterations=s.iterations, burn_in=s.burn_in, thin=s.thin, K=s.K, alpha=s.alpha,
                         alpha_prime=s.alpha_prime, eta2=s.eta2, nu2=s.nu2, seed=seed, n_chains=s.chains,
                         threads=threads)


def fit_model(method: str, net, trips, cfg: RunConfig, seed: int, threads: int = 1):
    """Fit one method; Bayes returns the list of chains."""
    if method == "bayes":
        return run_chains(net, trips, hyper_from_config(net, cfg), sampler_config_from(cfg, seed, threads))
    if method in ("harmonic", "mle"):
        return fit_local(net, trips, method)
    if method == "budge":
        return fit_budge_bins(net, trips, cfg.evaluate.n_bins, cfg.evaluate.min_per_bin)
    raise UsageError(f"unknown method {method!r}")


def predictor_for(method: str, net, fitted):
    if method == "bayes":
        return BayesPredictor(net, fitted)
    if method in ("harmonic", "mle"):
        return LocalPredictor(fitted)
    if method == "budge":
        return BudgePredictor(net, fitted)
    raise UsageError(f"unknown method {method!r}")


def save_model(method: str, fitted, out_dir: str) -> list[str]:
    written = []
    if method == "bayes":
        for k, chain in enumerate(fitted):
            prefix = os.path.join(out_dir, f"chain{k}")
            chain.save(prefix)
            written += [prefix + s for s in ("_params.csv", "_zeta2.csv", "_paths.csv", "_manifest.json")]
        if len(fitted) >= 2:
            psrf, _ = gelman_rubin(fitted, selector=lambda c: c.mu)
            path = os.path.join(out_dir, "psrf.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["arc_id", "psrf_mu"])
                for a, r in zip(fitted[0].arc_ids, psrf):
                    w.writerow([int(a), repr(float(r))])
            written.append(path)
    elif method in ("harmonic", "mle"):
        path = os.path.join(out_dir, f"{method}_estimates.csv")
        side = os.path.join(out_dir, f"{method}_speeds.csv") if method == "harmonic" else None
        fitted.save(path, side)
        written += [path] + ([side] if side else [])
    else:
        path = os.path.join(out_dir, "budge_bins.csv")
        fitted.save(path)
        written.append(path)
    return written


def load_model(method: str, net, model_dir: str):
    if method == "bayes":
        prefixes = [p[: -len("_params.csv")] for p in glob.glob(os.path.join(model_dir, "chain*_params.csv"))]
        prefixes.sort(key=lambda p: int(os.path.basename(p)[len("chain"):]))
        if not prefixes:
            raise UsageError(f"no posterior chains in {model_dir}")
        return [PosteriorSamples.load(p) for p in prefixes]
    if method in ("harmonic", "mle"):
        side = os.path.join(model_dir, f"{method}_speeds.csv")
        return load_local(net, os.path.join(model_dir, f"{method}_estimates.csv"),
                          side if os.path.exists(side) else None)
    if method == "budge":
        return BinModel.load(os.path.join(model_dir, "budge_bins.csv"))
    raise UsageError(f"unknown method {method!r}")


def load_inputs(cfg: RunConfig):
    d = cfg.data
    for p in (d.nodes, d.arcs, d.trips, d.gps):
        if not os.path.exists(p):
            raise UsageError(f"input file not found: {p}")
    net = load_network(d.nodes, d.arcs)
    trips = load_dataset(net, d.trips, d.gps, max_gap_s=d.max_gap_s, min_gap_speed=d.min_gap_speed)
    return net, trips


def _versions() -> dict:
    import scipy

    numba = _jit._numba
    return {"arctime": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__ if numba else None, "backend": _jit.BACKEND}


def write_manifest(out_dir: str, command: str, args: argparse.Namespace, cfg: RunConfig, outputs) -> None:
    argd = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    man = {
        "command": command,
        "arguments": argd,
        "seed": args.seed,
        "config_sha256": cfg.digest(),
        "config": cfg.as_dict(),
        "versions": _versions(),
        "outputs": sorted(os.path.relpath(p, out_dir) for p in outputs),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"grid must look like 8x8, got {text!r}") from None
    if r < 2 or c < 2:
        raise UsageError("grid needs at least 2 rows and 2 columns")
    return r, c


# --------------------------------------------------------------- commands

def cmd_simulate(args, cfg: RunConfig) -> list[str]:
    s = cfg.simulate
    rows, cols = _parse_grid(s.grid)
    if s.regime not in ("good", "bad"):
        raise UsageError(f"unknown regime {s.regime!r}")
    seeds = np.random.SeedSequence(args.seed).generate_state(2)
    scenario = build_grid_scenario(rows, cols, s.block_m, ClassPattern(), s.regime, int(seeds[0]))
    sims = simulate_trips(scenario, s.trips, int(seeds[1]), mode=s.mode, path_model=s.path_model,
                          C=cfg.model.C)
    out = args.out_dir
    files = [os.path.join(out, f) for f in ("nodes.csv", "arcs.csv", "trips.csv", "gps.csv",
                                             "true_times.csv", "true_params.csv")]
    write_network(scenario.net, files[0], files[1])
    write_dataset([st.trip for st in sims], files[2], files[3])
    write_ground_truth(scenario, sims, files[4], files[5])
    print(f"simulated {len(sims)} trips on a {rows}x{cols} grid ({s.regime} GPS) into {out}")
    return files


def cmd_fit(args, cfg: RunConfig) -> list[str]:
    net, trips = load_inputs(cfg)
    if args.training_only:
        plan = split_folds(trips, args.seed)
        keep = set(plan.training)
        trips = [t for t in trips if t.trip_id in keep]
    fitted = fit_model(args.method, net, trips, cfg, args.seed, args.threads)
    files = save_model(args.method, fitted, args.out_dir)
    print(f"fitted {args.method} on {len(trips)} trips; wrote {len(files)} files")
    return files


def _read_pairs(path):
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        for k, r in enumerate(csv.DictReader(fh)):
            try:
                pairs.append((int(r["origin_node"]), int(r["destination_node"])))
            except (KeyError, ValueError):
                raise UsageError(f"{path}: row {k + 2} needs integer origin_node,destination_node") from None
    return pairs


def cmd_predict(args, cfg: RunConfig) -> list[str]:
    net = load_network(cfg.data.nodes, cfg.data.arcs)
    pairs = list(args.od or []) + (_read_pairs(args.pairs) if args.pairs else [])
    if not pairs:
        raise UsageError("give origin-destination pairs with --od or --pairs")
    for s, t in pairs:
        if s not in net.node_pos or t not in net.node_pos:
            raise UsageError(f"unknown node in pair ({s}, {t})")
    model = predictor_for(args.method, net, load_model(args.method, net, args.model_dir))
    out = []
    for k, (s, t) in enumerate(pairs):
        path = model.route(s, t)
        lo, hi = model.interval(path, cfg.evaluate.n_draws, 0.95, trip_rng(args.seed, k))
        out.append(TravelTimeEstimate(k, model.tag, model.point(path), lo, hi, path))
    path = os.path.join(args.out_dir, f"predictions_{args.method}.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_node", "destination_node", "method", "point_s", "lo_s", "hi_s", "path"])
        for (s, t), e in zip(pairs, out):
            w.writerow([s, t, e.method, repr(e.point), repr(e.lo), repr(e.hi), " ".join(map(str, e.path))])
    print(f"wrote {len(out)} predictions to {path}")
    return [path]


def cmd_evaluate(args, cfg: RunConfig) -> list[str]:
    net, trips = load_inputs(cfg)
    methods = [m.strip() for m in (args.methods or cfg.evaluate.methods).split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    plan = split_folds(trips, args.seed)
    byid = {t.trip_id: t for t in trips}
    train = [byid[t] for t in plan.training]
    vt = [byid[t] for t in plan.validation_test]
    truth = {t.trip_id: t.duration for t in vt}
    paths = None
    predictors = {}
    if cfg.data.true_times:
        true = read_true_paths(cfg.data.true_times)
        paths = {t.trip_id: true[t.trip_id][0] for t in vt}
        if cfg.data.true_params:
            ids, mu, s2 = read_true_params(cfg.data.true_params)
            if not np.array_equal(ids, net.arc_ids):
                raise UsageError("true parameter file does not match the network")
            sc = Scenario(net, mu, s2, make_noise("good"), 0.0, "custom")
            predictors["oracle"] = OraclePredictor(sc)
    for m in methods:
        predictors[m] = predictor_for(m, net, fit_model(m, net, train, cfg, args.seed, args.threads))
    files = []
    estimates = {}
    for name, pred in predictors.items():
        estimates[name] = estimate_trips(pred, vt, paths, cfg.evaluate.n_draws, args.seed, args.threads)
        p = os.path.join(args.out_dir, f"estimates_{name}.csv")
        write_estimates(p, [estimates[name][t.trip_id] for t in vt])
        files.append(p)
    report = evaluate_methods(plan, estimates, truth)
    p = os.path.join(args.out_dir, "metrics.csv")
    report.write_csv(p)
    files.append(p)
    p = os.path.join(args.out_dir, "metrics.txt")
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(report.table() + "\n")
    files.append(p)
    print(report.table())
    return files


def cmd_coverage_map(args, cfg: RunConfig) -> list[str]:
    net = load_network(cfg.data.nodes, cfg.data.arcs)
    if args.start not in net.node_pos:
        raise UsageError(f"unknown start node {args.start}")
    if not args.threshold > 0:
        raise UsageError("threshold must be positive")
    model = predictor_for(args.method, net, load_model(args.method, net, args.model_dir))
    cmap = coverage_map(model, args.start, args.threshold, args.draws or cfg.evaluate.map_draws, args.seed)
    path = os.path.join(args.out_dir, f"coverage_{args.method}.csv")
    cmap.write_csv(path)
    unreachable = int((~cmap.reachable).sum())
    if unreachable:
        logger.warning("%d nodes unreachable from %d (probability 0)", unreachable, args.start)
    print(f"wrote coverage map for {net.n_nodes} nodes to {path}")
    return [path]


def cmd_map_match(args, cfg: RunConfig) -> list[str]:
    chains = load_model("bayes", None, args.model_dir)
    ids = args.trip_ids or [int(t) for t in chains[0].trip_ids]
    rows = {}
    for t in ids:
        try:
            rows[t] = map_match_marginals(chains, t)
        except KeyError:
            raise UsageError(f"unknown trip id {t}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    path = os.path.join(args.out_dir, "marginals.csv")
    write_marginals(path, rows)
    print(f"wrote path marginals for {len(rows)} trips to {path}")
    return [path]


def cmd_config(args, cfg: RunConfig) -> list[str]:
    print((RunConfig() if args.print_defaults else cfg).to_ini(), end="")
    return []


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    def global_flags(defaults: bool) -> argparse.ArgumentParser:
        # accepted before or after the subcommand; only the top level sets defaults
        g = argparse.ArgumentParser(add_help=False)
        d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
        g.add_argument("--seed", type=int, default=d(0), help="master random seed")
        g.add_argument("--threads", type=int, default=d(1), help="worker threads")
        g.add_argument("--out-dir", default=d("."), help="directory for outputs and manifest")
        g.add_argument("--config", default=d(None), help="INI configuration file")
        g.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return g

    common = global_flags(False)
    p = _Parser(prog="arctime", description=__doc__.splitlines()[0], parents=[global_flags(True)])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a grid scenario with GPS trips")
    s.add_argument("--regime", choices=("good", "bad"))
    s.add_argument("--grid", help="rows x cols, e.g. 8x8")
    s.add_argument("--trips", type=int)
    s.add_argument("--block-m", type=float)
    s.add_argument("--mode", choices=("by_distance", "by_time"))
    s.add_argument("--path-model", choices=("greedy", "logit"))
    s.set_defaults(func=cmd_simulate)

    data_flags = argparse.ArgumentParser(add_help=False)
    data_flags.add_argument("--nodes")
    data_flags.add_argument("--arcs")
    data_flags.add_argument("--trips-file", dest="trips_file")
    data_flags.add_argument("--gps")

    f = sub.add_parser("fit", parents=[common, data_flags], help="fit one estimation method")
    f.add_argument("--method", required=True, choices=METHODS)
    f.add_argument("--chains", type=int)
    f.add_argument("--iterations", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--training-only", action="store_true", help="fit on the training half of the fold plan")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", parents=[common, data_flags], help="point and interval predictions")
    pr.add_argument("--method", required=True, choices=METHODS)
    pr.add_argument("--model-dir", required=True)
    pr.add_argument("--od", type=int, nargs=2, action="append", metavar=("ORIGIN", "DEST"))
    pr.add_argument("--pairs", help="CSV with origin_node,destination_node")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", parents=[common, data_flags], help="cross-validated comparison")
    e.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    e.add_argument("--true-times")
    e.add_argument("--true-params")
    e.add_argument("--iterations", type=int)
    e.add_argument("--burn-in", type=int)
    e.add_argument("--thin", type=int)
    e.add_argument("--chains", type=int)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("coverage-map", parents=[common, data_flags], help="probability-of-arrival map")
    c.add_argument("--method", required=True, choices=METHODS)
    c.add_argument("--model-dir", required=True)
    c.add_argument("--start", type=int, required=True)
    c.add_argument("--threshold", type=float, required=True, help="seconds")
    c.add_argument("--draws", type=int)
    c.set_defaults(func=cmd_coverage_map)

    m = sub.add_parser("map-match", parents=[common], help="per-arc path marginals from a posterior")
    m.add_argument("--model-dir", required=True)
    m.add_argument("--trip-ids", type=int, nargs="*")
    m.set_defaults(func=cmd_map_match)

    g = sub.add_parser("config", parents=[common], help="show the resolved configuration")
    g.add_argument("--print-defaults", action="store_true")
    g.set_defaults(func=cmd_config)
    return p


def resolve_config(args) -> RunConfig:
    """Config file values with command-line flags layered on top."""
    cfg = load_config(args.config)
    get = lambda name: getattr(args, name, None)
    for key, flag in (("nodes", "nodes"), ("arcs", "arcs"), ("trips", "trips_file"), ("gps", "gps"),
                      ("true_times", "true_times"), ("true_params", "true_params")):
        if get(flag) is not None:
            setattr(cfg.data, key, get(flag))
    if args.command == "simulate":
        for key in ("regime", "grid", "trips", "block_m", "mode", "path_model"):
            if get(key) is not None:
                setattr(cfg.simulate, key, get(key))
    for key, flag in (("iterations", "iterations"), ("burn_in", "burn_in"), ("thin", "thin"), ("chains", "chains")):
        if get(flag) is not None:
            setattr(cfg.sampler, key, get(flag))
    if args.command not in ("simulate", "config"):
        # relative data paths in a config file are taken relative to that file
        if args.config:
            base = os.path.dirname(os.path.abspath(args.config))
            for key in ("nodes", "arcs", "trips", "gps", "true_times", "true_params"):
                v = getattr(cfg.data, key)
                if v and not os.path.isabs(v) and get({"trips": "trips_file"}.get(key, key)) is None:
                    setattr(cfg.data, key, os.path.join(base, v))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = resolve_config(args)
        os.makedirs(args.out_dir, exist_ok=True)
        outputs = args.func(args, cfg)
        if args.command != "config":
            write_manifest(args.out_dir, args.command, args, cfg, outputs)
    except (UsageError, ConfigError, NetworkError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
