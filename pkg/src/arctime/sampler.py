"""Data-augmentation MCMC over paths, arc times and arc parameters.

Each iteration visits every trip (one reversible-jump path move and one
two-arc time move), then draws every ``mu_j`` from its conjugate normal
conditional, makes a lognormal random-walk Metropolis-Hastings move on every
``sigma_j**2`` and finally on ``zeta**2``. Proposal variances for the last
two are tuned during burn-in only.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _jit
from . import _kernels as K
from .data_io import Trip
from .model import GpsNoise, Hyperparams, lognormal_logpdf, trip_reading_arrays
from .network import RoadNetwork, local_route_table, nearest_node, shortest_path_tree, tree_path

logger = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    iterations: int = 50_000
    burn_in: int = 25_000
    thin: int = 10
    K: int = 6
    alpha: float = 1.0
    alpha_prime: float = 0.5
    eta2: float = 0.25
    nu2: float = 0.01
    target_accept: float = 0.23
    adapt_every: int = 100
    seed: int = 0
    n_chains: int = 2
    threads: int = 1
    debug: bool = False

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must be in [0, iterations)")
        if self.K < 1 or self.thin < 1:
            raise ValueError("K and thin must be >= 1")
        if not (self.eta2 > 0 and self.nu2 > 0 and 0 < self.target_accept < 1):
            raise ValueError("bad proposal settings")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ChainState:
    """Latent paths and times for every trip plus all model parameters.

    Paths are stored as arc positions in a padded array (-1 beyond
    ``plen[i]``); ``times`` shares the layout.
    """

    paths: np.ndarray
    plen: np.ndarray
    times: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    zeta2: float

    def copy(self) -> "ChainState":
        return ChainState(self.paths.copy(), self.plen.copy(), self.times.copy(),
                          self.mu.copy(), self.sigma2.copy(), self.zeta2)


@dataclass
class PosteriorSamples:
    arc_ids: np.ndarray
    trip_ids: np.ndarray
    mu: np.ndarray  # (draws, arcs)
    sigma2: np.ndarray
    zeta2: np.ndarray
    path_len: np.ndarray  # (draws, trips)
    path_arcs: list[np.ndarray]  # per draw, concatenated arc ids
    acceptance: dict[str, float] = field(default_factory=dict)
    trip_skip_rate: np.ndarray | None = None
    moves_per_iteration: int = 0
    config: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.mu.shape[0]

    def theta_draws(self) -> np.ndarray:
        return np.exp(self.mu + 0.5 * self.sigma2)

    def theta_hat(self) -> np.ndarray:
        """Posterior mean of each arc's expected travel time."""
        return self.theta_draws().mean(axis=0)

    def trip_paths(self, trip_id: int) -> list[tuple[int, ...]]:
        idx = np.flatnonzero(self.trip_ids == trip_id)
        if idx.size == 0:
            raise KeyError(f"unknown trip id {trip_id}")
        k = int(idx[0])
        out = []
        for d in range(self.n_draws):
            offs = np.concatenate([[0], np.cumsum(self.path_len[d])])
            out.append(tuple(int(a) for a in self.path_arcs[d][offs[k] : offs[k + 1]]))
        return out

    # ---- persistence
    def save(self, prefix) -> None:
        """Write ``<prefix>_params.csv``, ``_zeta2.csv``, ``_paths.csv``, ``_manifest.json``."""
        prefix = str(prefix)
        with open(prefix + "_params.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "arc_id", "mu", "sigma2"])
            for d in range(self.n_draws):
                for j, a in enumerate(self.arc_ids):
                    w.writerow([d, int(a), repr(float(self.mu[d, j])), repr(float(self.sigma2[d, j]))])
        with open(prefix + "_zeta2.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "zeta2"])
            for d in range(self.n_draws):
                w.writerow([d, repr(float(self.zeta2[d]))])
        with open(prefix + "_paths.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "trip_id", "arc_seq", "arc_id"])
            for d in range(self.n_draws):
                pos = 0
                for t, n in zip(self.trip_ids, self.path_len[d]):
                    for s in range(int(n)):
                        w.writerow([d, int(t), s, int(self.path_arcs[d][pos + s])])
                    pos += int(n)
        manifest = {
            "config": self.config,
            "acceptance": self.acceptance,
            "moves_per_iteration": self.moves_per_iteration,
            "n_draws": self.n_draws,
            "backend": _jit.BACKEND,
        }
        with open(prefix + "_manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, prefix) -> "PosteriorSamples":
        prefix = str(prefix)
        rows = np.loadtxt(prefix + "_params.csv", delimiter=",", skiprows=1, ndmin=2)
        draws = rows[:, 0].astype(int)
        arc_ids = np.unique(rows[:, 1].astype(np.int64))
        D, J = draws.max() + 1, arc_ids.size
        mu = rows[:, 2].reshape(D, J)
        sigma2 = rows[:, 3].reshape(D, J)
        z = np.loadtxt(prefix + "_zeta2.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1]
        p = np.loadtxt(prefix + "_paths.csv", delimiter=",", skiprows=1, ndmin=2).astype(np.int64)
        trip_ids = np.unique(p[:, 1]) if p.size else np.array([], dtype=np.int64)
        # keep the stored trip order of draw 0
        if p.size:
            first = p[p[:, 0] == 0][:, 1]
            _, idx = np.unique(first, return_index=True)
            trip_ids = first[np.sort(idx)]
        path_len = np.zeros((D, trip_ids.size), dtype=np.int64)
        path_arcs = []
        order = {int(t): k for k, t in enumerate(trip_ids)}
        for d in range(D):
            sub = p[p[:, 0] == d]
            for t in sub[:, 1]:
                path_len[d, order[int(t)]] += 1
            path_arcs.append(sub[:, 3].copy())
        with open(prefix + "_manifest.json", encoding="utf-8") as fh:
            man = json.load(fh)
        return cls(arc_ids, trip_ids, mu, sigma2, z, path_len, path_arcs,
                   acceptance=man.get("acceptance", {}), config=man.get("config", {}),
                   moves_per_iteration=man.get("moves_per_iteration", 0))


class Sampler:
    """Posterior sampler for one chain.

    Parameters
    ----------
    net : RoadNetwork
    trips : list of Trip
        Preprocessed trips; trips whose endpoints are disconnected are
        dropped (see :attr:`excluded`).
    hyper : Hyperparams
    config : SamplerConfig
    """

    def __init__(self, net: RoadNetwork, trips: list[Trip], hyper: Hyperparams, config: SamplerConfig):
        self.net = net
        self.hyper = hyper
        self.config = config
        self.trips = list(trips)
        self.excluded: list[int] = []
        self.routes = local_route_table(net, config.K)
        self.net_arrays = (net.arc_from, net.arc_to, net.node_x, net.node_y, net.arc_length)
        self.state: ChainState | None = None
        self.eta2 = config.eta2
        self.nu2 = config.nu2

    # ---------------------------------------------------------- setup
    def _build_reads(self):
        ptr, ts, xs, ys, lvs = [0], [], [], [], []
        for trip in self.trips:
            t, x, y, lv = trip_reading_arrays(trip, self.hyper.speed_floor)
            ts.append(t), xs.append(x), ys.append(y), lvs.append(lv)
            ptr.append(ptr[-1] + t.size)
        cat = lambda a: np.concatenate(a) if a else np.zeros(0)
        self.reads = (np.array(ptr, dtype=np.int64), cat(ts), cat(xs), cat(ys), cat(lvs))
        self.total_time = np.array([t.duration for t in self.trips])

    def initial_paths(self) -> list[tuple[int, ...]]:
        """Route each trip through the node nearest its middle reading.

        Legs are shortest by distance; a concatenation that repeats a node
        falls back to the direct shortest-distance path.
        """
        net = self.net
        trees: dict[int, tuple] = {}

        def leg(s, t):
            if s not in trees:
                trees[s] = shortest_path_tree(net, net.arc_length, s)
            dist, pred = trees[s]
            if not np.isfinite(dist[net.node_pos[t]]):
                return None
            return tree_path(net, pred, t)

        paths, keep = [], []
        for trip in self.trips:
            direct = leg(trip.start_node, trip.end_node)
            if direct is None:
                logger.warning("trip %s: endpoints disconnected, excluded", trip.trip_id)
                self.excluded.append(trip.trip_id)
                continue
            path = direct
            if trip.readings:
                mid = trip.readings[len(trip.readings) // 2]
                m = nearest_node(net, mid.x, mid.y)
                if m not in (trip.start_node, trip.end_node):
                    a, b = leg(trip.start_node, m), leg(m, trip.end_node)
                    if a is not None and b is not None:
                        nodes = net.path_nodes(a + b)
                        if len(set(nodes)) == len(nodes):
                            path = a + b
            paths.append(path)
            keep.append(trip)
        self.trips = keep
        return paths

    def init_state(self, seed: int | None = None) -> ChainState:
        """Initial paths and times, parameters drawn from their priors."""
        seed = self.config.seed if seed is None else seed
        self.rng = np.random.default_rng(seed)
        paths = self.initial_paths()
        self._build_reads()
        h, net = self.hyper, self.net
        n = len(self.trips)
        max_len = net.n_nodes
        P = np.full((n, max_len), -1, dtype=np.int64)
        T = np.zeros((n, max_len))
        L = np.zeros(n, dtype=np.int64)
        for i, (trip, path) in enumerate(zip(self.trips, paths)):
            pos = net.arc_positions(path)
            P[i, : pos.size] = pos
            L[i] = pos.size
            w = net.arc_length[pos]
            T[i, : pos.size] = trip.duration * w / w.sum()
            T[i, pos.size - 1] = trip.duration - T[i, : pos.size - 1].sum()
        J = net.n_arcs
        mu = h.m + math.sqrt(h.s2) * self.rng.standard_normal(J)
        sigma2 = self.rng.uniform(h.b1, h.b2, J) ** 2
        zeta2 = float(self.rng.uniform(h.b3, h.b4) ** 2)
        self.state = ChainState(P, L, T, mu, sigma2, zeta2)
        _jit.seed(int(self.rng.integers(2**32)))
        self.counters = np.zeros((n, 4), dtype=np.int64)
        return self.state

    # ---------------------------------------------------------- helpers
    def _gps(self) -> np.ndarray:
        return GpsNoise(self.hyper.sigma_xy, self.state.zeta2).kernel_constants()

    def trip_path(self, i: int) -> tuple[int, ...]:
        s = self.state
        return tuple(int(a) for a in self.net.arc_ids[s.paths[i, : s.plen[i]]])

    def trip_times(self, i: int) -> np.ndarray:
        return self.state.times[i, : self.state.plen[i]].copy()

    def check_state(self) -> None:
        """Assert path contiguity, endpoints, time totals and prior support."""
        s, net, h = self.state, self.net, self.hyper
        for i, trip in enumerate(self.trips):
            path = self.trip_path(i)
            assert net.is_valid_path(path, trip.start_node, trip.end_node), f"trip {trip.trip_id}: bad path"
            tm = self.trip_times(i)
            assert np.all(tm > 0), f"trip {trip.trip_id}: nonpositive time"
            assert abs(tm.sum() - trip.duration) <= 1e-9 * max(1.0, trip.duration), f"trip {trip.trip_id}: total"
        sd = np.sqrt(s.sigma2)
        assert np.all((sd >= h.b1) & (sd <= h.b2)), "sigma outside prior support"
        assert h.b3 <= math.sqrt(s.zeta2) <= h.b4, "zeta outside prior support"

    def _kernel_seed(self, rng: np.random.Generator | None):
        if rng is not None:
            _jit.seed(int(rng.integers(2**32)))

    # ---------------------------------------------------------- moves
    def _single(self, i: int, path: bool, times: bool) -> int:
        s = self.state
        sl = slice(i, i + 1)
        ptr = self.reads[0]
        reads = (ptr[i : i + 2] - ptr[i], *(r[ptr[i] : ptr[i + 1]] for r in self.reads[1:]))
        c = np.zeros((1, 4), dtype=np.int64)
        P, L, T = s.paths[sl], s.plen[sl], s.times[sl]
        K.sweep(P, L, T, self.net_arrays, reads, self._gps(), self.routes, s.mu, s.sigma2,
                self.hyper.C, self.config.alpha, self.config.alpha_prime, self.config.K, path, times, c)
        self.counters[i] += c[0]
        if self.config.debug:
            self.check_state()
        if path:
            return 1 if c[0, 0] else (-1 if c[0, 1] else 0)
        return 1 if c[0, 2] else (-1 if c[0, 3] else 0)

    def propose_path(self, i: int, rng: np.random.Generator | None = None) -> dict:
        """Run one path move on trip ``i`` and report the proposal.

        Returns the current and proposed (path, times), the kernel's log
        acceptance ratio and the outcome code. A skipped move has no
        proposal. Intended for diagnostics and tests.
        """
        self._kernel_seed(rng)
        s, net = self.state, self.net
        ptr = self.reads[0]
        reads = (ptr[i : i + 2] - ptr[i], *(r[ptr[i] : ptr[i + 1]] for r in self.reads[1:]))
        cur_path, cur_times = self.trip_path(i), self.trip_times(i)
        width = s.paths.shape[1]
        buf_path = np.full(width, -1, dtype=np.int64)
        buf_times = np.zeros(width)
        mark = np.zeros(net.n_nodes, dtype=np.int64)
        cand = np.zeros(self.routes[0][-1] + 1, dtype=np.int64)
        work_a = np.zeros(self.config.K + width)
        work_x = np.zeros(self.config.K + width)
        info = np.zeros(5)
        theta = np.array([math.exp(m + 0.5 * v) for m, v in zip(s.mu, s.sigma2)])
        sl = slice(i, i + 1)
        code = K.path_move(0, s.paths[sl], s.plen[sl], s.times[sl], self.net_arrays, reads, self._gps(),
                           self.routes, s.mu, s.sigma2, theta, self.hyper.C, self.config.alpha, self.config.K,
                           buf_path, buf_times, mark, cand, work_a, work_x, info)
        out = {"code": int(code), "current": (cur_path, cur_times)}
        if code != K.SKIP:
            n2 = len(cur_path) - int(info[1]) + int(info[2])
            out["proposed"] = (tuple(int(a) for a in net.arc_ids[buf_path[:n2]]), buf_times[:n2].copy())
            out["log_ratio"] = float(info[0])
            out["section"] = (int(info[4]), int(info[1]), int(info[2]), float(info[3]))
        return out

    def path_log_ratio(self, i: int, p: int, w: int, new_path, new_times) -> float:
        """Kernel log acceptance ratio for moving trip ``i`` to ``new_path``.

        The move replaces the ``w`` arcs starting at index ``p`` of the
        current path; ``new_path`` (arc ids) and ``new_times`` give the full
        proposed state. The state itself is not changed.
        """
        s, net = self.state, self.net
        ptr = self.reads[0]
        reads = (ptr[i : i + 2] - ptr[i], *(r[ptr[i] : ptr[i + 1]] for r in self.reads[1:]))
        n2 = len(new_path)
        width = max(s.paths.shape[1], n2)
        buf_path = np.full(width, -1, dtype=np.int64)
        buf_path[:n2] = net.arc_positions(new_path)
        buf_times = np.zeros(width)
        buf_times[:n2] = new_times
        work = np.zeros(self.config.K + width)
        theta = np.array([math.exp(m + 0.5 * v) for m, v in zip(s.mu, s.sigma2)])
        return float(K.section_log_ratio(0, s.paths[i], s.times[i], int(s.plen[i]), p, w, buf_path, buf_times, n2,
                                         self.net_arrays, reads, self._gps(), s.mu, s.sigma2, theta,
                                         self.hyper.C, self.config.alpha, self.config.K, work, work.copy()))

    def set_trip(self, i: int, path, times) -> None:
        """Overwrite trip ``i``'s latent path (arc ids) and arc times."""
        s = self.state
        pos = self.net.arc_positions(path)
        s.paths[i] = -1
        s.times[i] = 0.0
        s.paths[i, : pos.size] = pos
        s.times[i, : pos.size] = times
        s.plen[i] = pos.size

    def step_path(self, i: int, rng: np.random.Generator | None = None) -> int:
        """Reversible-jump path move for trip ``i``: 1 accept, 0 reject, -1 skipped."""
        self._kernel_seed(rng)
        return self._single(i, True, False)

    def step_times(self, i: int, rng: np.random.Generator | None = None) -> int:
        """Two-arc time redistribution for trip ``i``: 1 accept, 0 reject, -1 skipped."""
        self._kernel_seed(rng)
        return self._single(i, False, True)

    def sweep_trips(self, path: bool = True, times: bool = True) -> None:
        s = self.state
        if self.config.debug:
            for i in range(len(self.trips)):
                if path:
                    self._single(i, True, False)
                if times:
                    self._single(i, False, True)
            return
        K.sweep(s.paths, s.plen, s.times, self.net_arrays, self.reads, self._gps(), self.routes,
                s.mu, s.sigma2, self.hyper.C, self.config.alpha, self.config.alpha_prime,
                self.config.K, path, times, self.counters)

    def arc_stats(self):
        s = self.state
        return K.arc_time_stats(s.paths, s.plen, s.times, self.net.n_arcs)

    def mu_conditional(self, stats=None) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of each ``mu_j`` given ``sigma_j**2`` and the times."""
        cnt, s1, _ = self.arc_stats() if stats is None else stats
        h, s = self.hyper, self.state
        var = 1.0 / (1.0 / h.s2 + cnt / s.sigma2)
        mean = var * (h.m / h.s2 + s1 / s.sigma2)
        return mean, var

    def update_mu(self, rng: np.random.Generator, arcs=None, stats=None) -> None:
        mean, var = self.mu_conditional(stats)
        idx = np.arange(self.net.n_arcs) if arcs is None else np.atleast_1d(arcs)
        self.state.mu[idx] = mean[idx] + np.sqrt(var[idx]) * rng.standard_normal(idx.size)

    def step_mu(self, j: int, rng: np.random.Generator) -> float:
        """Draw ``mu_j`` from its closed-form full conditional."""
        self.update_mu(rng, arcs=[j])
        return float(self.state.mu[j])

    def update_sigma2(self, rng: np.random.Generator, arcs=None, stats=None) -> np.ndarray:
        """Lognormal random-walk M-H on ``sigma_j**2``; returns accept flags."""
        s, h = self.state, self.hyper
        cnt, s1, s2 = self.arc_stats() if stats is None else stats
        idx = np.arange(self.net.n_arcs) if arcs is None else np.atleast_1d(arcs)
        cnt, s1, s2 = cnt[idx], s1[idx], s2[idx]
        cur = s.sigma2[idx]
        mu = s.mu[idx]
        prop = np.exp(np.log(cur) + math.sqrt(self.eta2) * rng.standard_normal(idx.size))
        u = rng.random(idx.size)
        ss = s2 - 2.0 * mu * s1 + cnt * mu * mu

        def loglik(v):
            return -0.5 * cnt * np.log(v) - ss / (2.0 * v)

        inside = (np.sqrt(prop) >= h.b1) & (np.sqrt(prop) <= h.b2)
        with np.errstate(divide="ignore"):
            log_r = (
                0.5 * np.log(cur) - 0.5 * np.log(prop)
                + loglik(prop) - loglik(cur)
                + lognormal_logpdf(cur, np.log(prop), self.eta2)
                - lognormal_logpdf(prop, np.log(cur), self.eta2)
            )
        acc = inside & (np.log(u) < log_r)
        s.sigma2[idx[acc]] = prop[acc]
        return acc

    def step_sigma2(self, j: int, rng: np.random.Generator) -> bool:
        return bool(self.update_sigma2(rng, arcs=[j])[0])

    def zeta2_loglik(self, zeta2: float, resid: np.ndarray) -> float:
        e = resid + 0.5 * zeta2
        return float(-0.5 * resid.size * math.log(2 * math.pi * zeta2) - np.sum(e * e) / (2.0 * zeta2))

    def step_zeta2(self, rng: np.random.Generator) -> bool:
        """Lognormal random-walk M-H on ``zeta**2`` (uniform prior on ``zeta``)."""
        s, h = self.state, self.hyper
        resid = K.speed_log_residuals(s.paths, s.plen, s.times, self.net_arrays, self.reads)
        cur = s.zeta2
        prop = math.exp(math.log(cur) + math.sqrt(self.nu2) * rng.standard_normal())
        u = rng.random()
        if not (h.b3 <= math.sqrt(prop) <= h.b4):
            return False
        log_r = (
            0.5 * math.log(cur) - 0.5 * math.log(prop)
            + self.zeta2_loglik(prop, resid) - self.zeta2_loglik(cur, resid)
            + float(lognormal_logpdf(cur, math.log(prop), self.nu2))
            - float(lognormal_logpdf(prop, math.log(cur), self.nu2))
        )
        if math.log(u) < log_r:
            s.zeta2 = prop
            return True
        return False

    # ---------------------------------------------------------- driver
    def run(self) -> PosteriorSamples:
        """Run the chain from a fresh initial state and collect thinned draws."""
        cfg = self.config
        if self.state is None:
            self.init_state()
        rng = self.rng
        J, I = self.net.n_arcs, len(self.trips)
        D = cfg.n_draws
        mu_d = np.empty((D, J))
        s2_d = np.empty((D, J))
        z_d = np.empty(D)
        plen_d = np.empty((D, I), dtype=np.int64)
        arcs_d: list[np.ndarray] = []
        win_sig = [0, 0]
        win_zeta = [0, 0]
        tot = {"sigma2": [0, 0], "zeta2": [0, 0]}
        moves = 0
        self.counters[:] = 0
        post_counters = np.zeros_like(self.counters)
        d = 0
        for it in range(cfg.iterations):
            if it == cfg.burn_in:
                post_counters = self.counters.copy()
            self.sweep_trips()
            stats = self.arc_stats()
            self.update_mu(rng, stats=stats)
            acc = self.update_sigma2(rng, stats=stats)
            zacc = self.step_zeta2(rng)
            moves += 2 * I + 2 * J + 1
            win_sig[0] += int(acc.sum()); win_sig[1] += J
            win_zeta[0] += int(zacc); win_zeta[1] += 1
            if it >= cfg.burn_in:
                tot["sigma2"][0] += int(acc.sum()); tot["sigma2"][1] += J
                tot["zeta2"][0] += int(zacc); tot["zeta2"][1] += 1
            if it < cfg.burn_in and (it + 1) % cfg.adapt_every == 0:
                self.eta2 *= _adapt_factor(win_sig, cfg.target_accept)
                self.nu2 *= _adapt_factor(win_zeta, cfg.target_accept)
                win_sig, win_zeta = [0, 0], [0, 0]
            if it >= cfg.burn_in and (it - cfg.burn_in + 1) % cfg.thin == 0:
                s = self.state
                mu_d[d], s2_d[d], z_d[d] = s.mu, s.sigma2, s.zeta2
                plen_d[d] = s.plen
                mask = np.arange(s.paths.shape[1])[None, :] < s.plen[:, None]
                arcs_d.append(self.net.arc_ids[s.paths[mask]])
                d += 1
        post = self.counters - post_counters
        n_post = cfg.iterations - cfg.burn_in
        path_tries = n_post * I - post[:, 1].sum()
        time_tries = n_post * I - post[:, 3].sum()
        acceptance = {
            "path": float(post[:, 0].sum() / max(1, path_tries)),
            "path_skip": float(post[:, 1].sum() / max(1, n_post * I)),
            "times": float(post[:, 2].sum() / max(1, time_tries)),
            "sigma2": tot["sigma2"][0] / max(1, tot["sigma2"][1]),
            "zeta2": tot["zeta2"][0] / max(1, tot["zeta2"][1]),
            "eta2": self.eta2,
            "nu2": self.nu2,
        }
        return PosteriorSamples(
            arc_ids=self.net.arc_ids.copy(),
            trip_ids=np.array([t.trip_id for t in self.trips], dtype=np.int64),
            mu=mu_d, sigma2=s2_d, zeta2=z_d, path_len=plen_d, path_arcs=arcs_d,
            acceptance=acceptance,
            trip_skip_rate=post[:, 1] / max(1, n_post),
            moves_per_iteration=moves // cfg.iterations,
            config=asdict(cfg),
        )


def _adapt_factor(window, target: float) -> float:
    accepted, tried = window
    if tried == 0:
        return 1.0
    return float(np.clip((accepted / tried) / target, 0.5, 2.0))


def init_state(net: RoadNetwork, trips, hyper: Hyperparams, seed: int, config: SamplerConfig | None = None):
    """Build a sampler and its initial state; returns ``(sampler, state)``."""
    sampler = Sampler(net, trips, hyper, config or SamplerConfig(seed=seed))
    return sampler, sampler.init_state(seed)


def chain_seeds(seed: int, n_chains: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n_chains)]


def run_chain(net: RoadNetwork, trips, hyper: Hyperparams, config: SamplerConfig) -> PosteriorSamples:
    sampler = Sampler(net, trips, hyper, config)
    sampler.init_state(config.seed)
    return sampler.run()


def run_chains(net: RoadNetwork, trips, hyper: Hyperparams, config: SamplerConfig) -> list[PosteriorSamples]:
    """Run ``config.n_chains`` independently seeded chains.

    With numba the chains may run on ``config.threads`` threads; each thread
    seeds its own kernel stream so results do not depend on scheduling.
    """
    seeds = chain_seeds(config.seed, config.n_chains)
    cfgs = [SamplerConfig(**{**asdict(config), "seed": s}) for s in seeds]
    if config.threads > 1 and _jit.USE_NUMBA:
        with ThreadPoolExecutor(max_workers=config.threads) as ex:
            return list(ex.map(lambda c: run_chain(net, trips, hyper, c), cfgs))
    return [run_chain(net, trips, hyper, c) for c in cfgs]


def gelman_rubin(chains, selector=None) -> tuple[np.ndarray, np.ndarray]:
    """Potential scale reduction factor per parameter.

    Parameters
    ----------
    chains : sequence
        At least two equal-length chains, either arrays of shape
        ``(n, n_params)`` / ``(n,)`` or :class:`PosteriorSamples` together
        with ``selector``.
    selector : callable, optional
        Maps a chain object to its ``(n, n_params)`` sample array.

    Returns
    -------
    psrf, degenerate : ndarray
        ``degenerate`` flags zero within-chain variance (PSRF reported as 1).
    """
    arrs = [np.asarray(selector(c) if selector else c, dtype=float) for c in chains]
    if len(arrs) < 2:
        raise ValueError("need at least two chains")
    x = np.stack([a.reshape(a.shape[0], -1) for a in arrs])  # (m, n, p)
    m, n, _ = x.shape
    if n < 2:
        raise ValueError("chains need at least two draws")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    degenerate = W <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        psrf = np.sqrt(((n - 1) / n * W + B / n) / W)
    psrf = np.where(degenerate, 1.0, psrf)
    return psrf, degenerate
