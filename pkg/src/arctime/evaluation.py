"""Prediction, bias correction and cross-validated scoring for every method.

All fitted methods are wrapped in a small predictor interface: choose a route
between two nodes, give a point time for a route, and draw Monte Carlo trip
times along it. Scoring works on :class:`TravelTimeEstimate` records so the
same harness serves the Bayesian, local, binning and oracle predictors.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .budge import BinModel
from .data_io import FoldPlan
from .local import LocalModel
from .network import RoadNetwork, shortest_path, shortest_path_tree

INTERVAL_DRAWS = 5000
MAP_DRAWS = 2000
METRIC_COLUMNS = ("rmse_s", "rmse_log", "bias_ma", "coverage_pct", "width_s")


@dataclass
class TravelTimeEstimate:
    trip_id: int
    method: str
    point: float
    lo: float
    hi: float
    path: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"interval ({self.lo}, {self.hi}) is reversed")


# ---------------------------------------------------------------- predictors

class Predictor:
    """Common interface; subclasses fill in weights and draws."""

    tag = "base"
    net: RoadNetwork

    def route_weights(self) -> np.ndarray:
        raise NotImplementedError

    def route(self, s: int, t: int) -> tuple[int, ...]:
        path, cost = shortest_path(self.net, self.route_weights(), s, t)
        if path is None:
            raise ValueError(f"node {t} is unreachable from {s}")
        return path

    def point(self, path) -> float:
        return float(self.route_weights()[self.net.arc_positions(path)].sum())

    def arc_draws(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``(n, n_arcs)`` jointly drawn arc times (used for coverage maps)."""
        raise NotImplementedError

    def sample(self, path, n: int, rng: np.random.Generator) -> np.ndarray:
        pos = self.net.arc_positions(path)
        return self._sample_pos(pos, n, rng)

    def _sample_pos(self, pos, n, rng) -> np.ndarray:
        return self.arc_draws(n, rng)[:, pos].sum(axis=1)

    def interval(self, path, n_draws: int = INTERVAL_DRAWS, q: float = 0.95,
                 rng: np.random.Generator | None = None) -> tuple[float, float]:
        if n_draws < 1000:
            raise ValueError("n_draws must be at least 1000")
        rng = rng if rng is not None else np.random.default_rng(0)
        if len(path) == 0:
            return 0.0, 0.0
        x = self.sample(path, n_draws, rng)
        a = 0.5 * (1.0 - q)
        lo, hi = np.quantile(x, [a, 1.0 - a])
        return float(lo), float(hi)


class BayesPredictor(Predictor):
    """Posterior predictive built from stored draws (chains concatenated)."""

    tag = "bayes"

    def __init__(self, net: RoadNetwork, posterior):
        chains = posterior if isinstance(posterior, (list, tuple)) else [posterior]
        for p in chains:
            if not np.array_equal(p.arc_ids, net.arc_ids):
                raise ValueError("posterior arcs do not match the network")
        self.net = net
        self.chains = list(chains)
        self.mu = np.concatenate([p.mu for p in chains])
        self.sigma2 = np.concatenate([p.sigma2 for p in chains])
        self.theta_hat = np.exp(self.mu + 0.5 * self.sigma2).mean(axis=0)

    def route_weights(self):
        return self.theta_hat

    def _sample_pos(self, pos, n, rng):
        d = np.arange(n) % self.mu.shape[0]
        z = rng.standard_normal((n, pos.size))
        return np.exp(self.mu[d][:, pos] + np.sqrt(self.sigma2[d][:, pos]) * z).sum(axis=1)

    def arc_draws(self, n, rng):
        d = np.arange(n) % self.mu.shape[0]
        z = rng.standard_normal((n, self.net.n_arcs))
        return np.exp(self.mu[d] + np.sqrt(self.sigma2[d]) * z)


class LocalPredictor(Predictor):
    def __init__(self, model: LocalModel):
        self.model = model
        self.net = model.net
        self.tag = model.method

    def route_weights(self):
        return self.model.point_times()

    def _sample_pos(self, pos, n, rng):
        return self.model.sample_times(pos, n, rng)

    def arc_draws(self, n, rng):
        out = np.empty((n, self.net.n_arcs))
        for k in range(self.net.n_arcs):
            out[:, k] = self.model.sample_times([k], n, rng)
        return out


class BudgePredictor(Predictor):
    """Distance-binning predictor; routes are shortest by length."""

    tag = "budge"

    def __init__(self, net: RoadNetwork, bins: BinModel):
        self.net = net
        self.bins = bins

    def route_weights(self):
        return self.net.arc_length

    def point(self, path) -> float:
        return self.bins.point_estimate(self.net.path_length(path))

    def interval(self, path, n_draws=INTERVAL_DRAWS, q=0.95, rng=None):
        a = 0.5 * (1.0 - q)
        lo, hi = self.bins.quantile(self.net.path_length(path), [a, 1.0 - a])
        return float(lo), float(hi)

    def prob_within(self, distance: float, threshold: float) -> float:
        return self.bins.prob_within(distance, threshold)


class OraclePredictor(Predictor):
    """Ground-truth arc distributions; only available for simulated data."""

    tag = "oracle"

    def __init__(self, scenario):
        if scenario is None or getattr(scenario, "mu", None) is None:
            raise ValueError("the oracle needs ground-truth parameters (simulated data only)")
        self.net = scenario.net
        self.mu = np.asarray(scenario.mu, dtype=float)
        self.sigma2 = np.asarray(scenario.sigma2, dtype=float)

    def route_weights(self):
        return np.exp(self.mu + 0.5 * self.sigma2)

    def _sample_pos(self, pos, n, rng):
        z = rng.standard_normal((n, pos.size))
        return np.exp(self.mu[pos] + np.sqrt(self.sigma2[pos]) * z).sum(axis=1)

    def arc_draws(self, n, rng):
        z = rng.standard_normal((n, self.net.n_arcs))
        return np.exp(self.mu + np.sqrt(self.sigma2) * z)


def predict_point(model: Predictor, s: int, t: int) -> tuple[tuple[int, ...], float]:
    """Route chosen by the method and its point travel time."""
    path = model.route(s, t)
    return path, model.point(path)


def predict_interval(model: Predictor, path, n_draws: int = INTERVAL_DRAWS, q: float = 0.95,
                     rng: np.random.Generator | None = None) -> tuple[float, float]:
    return model.interval(path, n_draws, q, rng)


def trip_rng(seed: int, trip_id: int) -> np.random.Generator:
    """Per-trip substream, independent of processing order."""
    return np.random.default_rng([int(seed), int(trip_id)])


def estimate_trips(model: Predictor, trips, paths: dict | None = None, n_draws: int = INTERVAL_DRAWS,
                   seed: int = 0, threads: int = 1) -> dict[int, TravelTimeEstimate]:
    """Point and 95% interval for each trip.

    When ``paths`` maps a trip id to its route that route is scored,
    otherwise the method chooses one between the trip's endpoints.
    """

    def one(trip):
        path = paths[trip.trip_id] if paths is not None else model.route(trip.start_node, trip.end_node)
        point = model.point(path)
        lo, hi = model.interval(path, n_draws, 0.95, trip_rng(seed, trip.trip_id))
        return TravelTimeEstimate(trip.trip_id, model.tag, point, lo, hi, tuple(path))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(one, trips))
    else:
        res = [one(t) for t in trips]
    return {e.trip_id: e for e in res}


# ------------------------------------------------------------ bias correction

def compute_bias_factor(estimates, truths) -> float:
    """Mean log ratio of estimates to observed times."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.shape != tru.shape or est.size == 0:
        raise ValueError("estimates and truths must be nonempty and aligned")
    if np.any(est <= 0) or np.any(tru <= 0):
        raise ValueError("bias factor needs positive times")
    return math.fsum(np.log(est) - np.log(tru)) / est.size


def apply_bias(b: float, est: TravelTimeEstimate) -> TravelTimeEstimate:
    f = math.exp(-b)
    return TravelTimeEstimate(est.trip_id, est.method, est.point * f, est.lo * f, est.hi * f, est.path)


# ----------------------------------------------------------------- metrics

@dataclass
class MethodMetrics:
    rmse_s: float
    rmse_log: float
    bias_ma: float
    coverage_pct: float
    width_s: float
    bias_ma_uncorrected: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.coverage_pct <= 100.0:
            raise ValueError("coverage out of range")


@dataclass
class MetricsReport:
    methods: dict[str, MethodMetrics] = field(default_factory=dict)

    def __getitem__(self, key: str) -> MethodMetrics:
        return self.methods[key]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("method",) + METRIC_COLUMNS + ("bias_ma_uncorrected",))
            for name, m in self.methods.items():
                w.writerow([name] + [repr(float(getattr(m, c))) for c in METRIC_COLUMNS]
                           + [repr(float(m.bias_ma_uncorrected))])

    def table(self) -> str:
        head = f"{'method':<10}{'RMSE(s)':>10}{'RMSE log':>10}{'Bias M.A.':>11}{'Cov %':>8}{'Width(s)':>10}"
        lines = [head]
        for name, m in self.methods.items():
            lines.append(f"{name:<10}{m.rmse_s:>10.2f}{m.rmse_log:>10.4f}{m.bias_ma:>11.4f}"
                         f"{m.coverage_pct:>8.1f}{m.width_s:>10.1f}")
        return "\n".join(lines)


def _fold_bias(fold, est, truth):
    return abs(math.fsum(math.log(est[t].point) - math.log(truth[t]) for t in fold) / len(fold))


def score_method(plan: FoldPlan, est: dict[int, TravelTimeEstimate], truth: dict[int, float]) -> MethodMetrics:
    """Rotate the test fold through all folds; the others fit the bias factor."""
    folds = [list(f) for f in plan.folds if len(f) > 0]
    if len(folds) < 2:
        raise ValueError("need at least two nonempty folds")
    sq, sq_log, log_w = [], [], []
    covered = 0
    n = 0
    fold_bias, fold_bias_raw = [], []
    for r, test in enumerate(folds):
        val = [t for k, f in enumerate(folds) if k != r for t in f]
        b = compute_bias_factor([est[t].point for t in val], [truth[t] for t in val])
        corrected = {t: apply_bias(b, est[t]) for t in test}
        for t in test:
            e = corrected[t]
            sq.append((e.point - truth[t]) ** 2)
            sq_log.append((math.log(e.point) - math.log(truth[t])) ** 2)
            log_w.append(math.log(max(e.hi - e.lo, 1e-300)))
            covered += e.lo <= truth[t] <= e.hi
            n += 1
        fold_bias.append(_fold_bias(test, corrected, truth))
        fold_bias_raw.append(_fold_bias(test, est, truth))
    return MethodMetrics(
        rmse_s=math.sqrt(math.fsum(sq) / n),
        rmse_log=math.sqrt(math.fsum(sq_log) / n),
        bias_ma=math.fsum(fold_bias) / len(folds),
        coverage_pct=100.0 * covered / n,
        width_s=math.exp(math.fsum(log_w) / n),
        bias_ma_uncorrected=math.fsum(fold_bias_raw) / len(folds),
    )


def evaluate_methods(plan: FoldPlan, estimates: dict[str, dict[int, TravelTimeEstimate]],
                     truth: dict[int, float]) -> MetricsReport:
    """Cross-validated metrics for each method's validation/test estimates."""
    return MetricsReport({name: score_method(plan, est, truth) for name, est in estimates.items()})


# ----------------------------------------------------------------- oracles

def oracle_estimates(scenario, sim_trips, n_draws: int = INTERVAL_DRAWS, seed: int = 0) -> dict[int, TravelTimeEstimate]:
    """True expected time along each trip's true path."""
    model = OraclePredictor(scenario)
    paths = {st.trip_id: st.true_path for st in sim_trips}
    return estimate_trips(model, [st.trip for st in sim_trips], paths, n_draws, seed)


def estimated_oracle(model: LocalModel, trips, n_sim: int = 1000, seed: int = 0) -> tuple[float, float]:
    """RMSE and RMSE-log of the local MLE point when its own fit is the truth."""
    if model.method != "mle":
        raise ValueError("the estimated oracle uses the local MLE fit")
    pred = LocalPredictor(model)
    sq, sq_log = [], []
    for trip in trips:
        path = pred.route(trip.start_node, trip.end_node)
        point = pred.point(path)
        draws = pred.sample(path, n_sim, trip_rng(seed, trip.trip_id))
        sq.append(np.mean((point - draws) ** 2))
        sq_log.append(np.mean((math.log(point) - np.log(draws)) ** 2))
    return math.sqrt(math.fsum(sq) / len(sq)), math.sqrt(math.fsum(sq_log) / len(sq_log))


# ------------------------------------------------------------ spatial outputs

@dataclass
class CoverageMap:
    node_ids: np.ndarray
    probability: np.ndarray
    reachable: np.ndarray

    def __getitem__(self, node_id: int) -> float:
        return float(self.probability[np.flatnonzero(self.node_ids == node_id)[0]])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "probability"])
            for n, p in zip(self.node_ids, self.probability):
                w.writerow([int(n), repr(float(p))])


def coverage_map(model: Predictor, start: int, threshold: float, n_draws: int = MAP_DRAWS,
                 seed: int = 0) -> CoverageMap:
    """Probability of reaching each node within ``threshold`` seconds.

    Every destination is reached along the fastest path in expectation. The
    same arc-time draws serve every destination, so probabilities can only
    fall along a path.
    """
    net = model.net
    weights = model.route_weights()
    dist, pred = shortest_path_tree(net, weights, start)
    reach = np.isfinite(dist)
    prob = np.zeros(net.n_nodes)
    if isinstance(model, BudgePredictor):
        ldist, _ = shortest_path_tree(net, net.arc_length, start)
        for v in np.flatnonzero(reach):
            prob[v] = 1.0 if net.node_ids[v] == start else model.prob_within(ldist[v], threshold)
        return CoverageMap(net.node_ids.copy(), prob, reach)
    draws = model.arc_draws(n_draws, np.random.default_rng(seed))
    cum = np.full((net.n_nodes, n_draws), np.nan)
    s = net.node_pos[start]
    cum[s] = 0.0
    for v in np.argsort(dist, kind="stable"):
        if not reach[v] or v == s:
            continue
        k = pred[v]
        cum[v] = cum[net.arc_from[k]] + draws[:, k]
    prob[reach] = np.mean(cum[reach] <= threshold, axis=1)
    return CoverageMap(net.node_ids.copy(), prob, reach)


def map_match_marginals(posterior, trip_id: int, min_prob: float = 0.01) -> dict[int, float]:
    """Share of stored path draws that traverse each arc."""
    chains = posterior if isinstance(posterior, (list, tuple)) else [posterior]
    paths = [p for c in chains for p in c.trip_paths(trip_id)]
    if len(paths) < 100:
        raise ValueError(f"need at least 100 path snapshots, have {len(paths)}")
    counts: dict[int, int] = {}
    for p in paths:
        for a in set(p):
            counts[a] = counts.get(a, 0) + 1
    return {a: c / len(paths) for a, c in sorted(counts.items()) if c / len(paths) >= min_prob}


def write_marginals(path, rows: dict[int, dict[int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trip_id", "arc_id", "probability"])
        for tid in sorted(rows):
            for a, p in rows[tid].items():
                w.writerow([tid, a, repr(float(p))])


def write_estimates(path, estimates) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trip_id", "method", "point_s", "lo_s", "hi_s", "path"])
        for e in estimates:
            w.writerow([e.trip_id, e.method, repr(float(e.point)), repr(float(e.lo)), repr(float(e.hi)),
                        " ".join(str(a) for a in (e.path or ()))])
