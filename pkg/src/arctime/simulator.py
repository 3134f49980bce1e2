"""Synthetic grid networks, ground-truth arc parameters, trips and GPS traces."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .data_io import GpsReading, Trip
from .model import MPH, GpsNoise
from .network import Arc, Node, RoadNetwork, simple_paths, time_to_target_map

REGIMES = {
    # spacing (m), location variance (m^2), zeta2
    "good": (250.0, 100.0, 0.004),
    "bad": (1000.0, 465.0, 0.01575),
}

SIGMA_RANGE = (0.5 * math.log(math.sqrt(3.0)), 0.5 * math.log(3.0))

# Speed ranges (mph) by class; every class shares 20-40 mph by default.
CLASS_SPEEDS_MPH = {"primary": (20.0, 40.0), "secondary": (20.0, 40.0), "tertiary": (20.0, 40.0)}
SIM_PRIOR_SPEED = 30.0 * MPH  # midpoint of the simulated range, used as prior speed in studies


@dataclass(frozen=True)
class ClassPattern:
    """Rows/columns whose index is a multiple of ``primary_every`` are primary,
    else multiples of ``secondary_every`` are secondary, the rest tertiary."""

    primary_every: int = 4
    secondary_every: int = 2

    def road_class(self, index: int) -> str:
        if self.primary_every and index % self.primary_every == 0:
            return "primary"
        if self.secondary_every and index % self.secondary_every == 0:
            return "secondary"
        return "tertiary"


@dataclass
class Scenario:
    net: RoadNetwork
    mu: np.ndarray
    sigma2: np.ndarray
    noise: GpsNoise
    gps_spacing: float
    regime: str
    speeds: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.regime in REGIMES:
            spacing, var, z2 = REGIMES[self.regime]
            assert self.gps_spacing == spacing
            assert np.array_equal(self.noise.sigma_xy, np.diag([var, var]))
            assert self.noise.zeta2 == z2

    @property
    def theta(self) -> np.ndarray:
        return np.exp(self.mu + 0.5 * self.sigma2)


@dataclass
class SimulatedTrip:
    trip: Trip
    true_path: tuple[int, ...]
    true_times: np.ndarray

    @property
    def trip_id(self) -> int:
        return self.trip.trip_id


def make_noise(regime: str) -> GpsNoise:
    _, var, z2 = REGIMES[regime]
    return GpsNoise(np.diag([var, var]), z2)


def grid_network(rows: int, cols: int, block_m: float, pattern: ClassPattern = ClassPattern()) -> RoadNetwork:
    """Grid of two-way streets; each street segment becomes two paired arcs."""
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 rows and 2 columns")
    nodes = [Node(r * cols + c, c * block_m, r * block_m) for r in range(rows) for c in range(cols)]
    arcs = []
    aid = 0
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            for v, cls in ((u + 1, pattern.road_class(r)) if c + 1 < cols else (None, None),
                           (u + cols, pattern.road_class(c)) if r + 1 < rows else (None, None)):
                if v is None:
                    continue
                arcs.append(Arc(aid, u, v, float(block_m), cls, aid + 1))
                arcs.append(Arc(aid + 1, v, u, float(block_m), cls, aid))
                aid += 2
    return RoadNetwork(nodes, arcs)


def draw_arc_params(net: RoadNetwork, rng: np.random.Generator, class_speeds=None):
    """Random speed per arc, sigma uniform on its range, mu matching the speed.

    Returns ``(mu, sigma2, speed_mps)``.
    """
    class_speeds = class_speeds or CLASS_SPEEDS_MPH
    lo = np.array([class_speeds[a.road_class][0] for a in net.arcs]) * MPH
    hi = np.array([class_speeds[a.road_class][1] for a in net.arcs]) * MPH
    speed = rng.uniform(lo, hi)
    sigma = rng.uniform(SIGMA_RANGE[0], SIGMA_RANGE[1], net.n_arcs)
    sigma2 = sigma**2
    mu = np.log(net.arc_length / speed) - 0.5 * sigma2
    return mu, sigma2, speed


def build_grid_scenario(rows: int, cols: int, block_m: float, class_pattern: ClassPattern = ClassPattern(),
                        regime: str = "good", seed: int = 0, class_speeds=None) -> Scenario:
    net = grid_network(rows, cols, block_m, class_pattern)
    rng = np.random.default_rng(seed)
    mu, sigma2, speed = draw_arc_params(net, rng, class_speeds)
    spacing = REGIMES[regime][0]
    return Scenario(net, mu, sigma2, make_noise(regime), spacing, regime, speed)


def greedy_path(net: RoadNetwork, theta, s: int, t: int, rng: np.random.Generator, ttt=None) -> tuple[int, ...]:
    """Walk from ``s`` choosing uniformly among arcs that reduce the expected
    time remaining to ``t``."""
    ttt = time_to_target_map(net, theta, t) if ttt is None else ttt
    path = []
    u = net.node_pos[s]
    tgt = net.node_pos[t]
    while u != tgt:
        here = ttt[u]
        out = (net.arc_pos[a] for a in net.adjacency[int(net.node_ids[u])])
        choices = [k for k in out if ttt[net.arc_to[k]] < here]
        assert choices, "no arc lowers the expected time to target"
        k = choices[int(rng.integers(len(choices)))]
        path.append(int(net.arc_ids[k]))
        u = int(net.arc_to[k])
    return tuple(path)


class _LogitPaths:
    """Exact sampler for the logit path prior by enumeration (small networks)."""

    def __init__(self, net, theta, C):
        self.net, self.theta, self.C = net, np.asarray(theta), C
        self.cache: dict[tuple[int, int], tuple] = {}

    def sample(self, s, t, rng):
        if (s, t) not in self.cache:
            paths = simple_paths(self.net, s, t)
            cost = np.array([self.theta[self.net.arc_positions(p)].sum() for p in paths])
            w = np.exp(-self.C * (cost - cost.min()))
            self.cache[(s, t)] = (paths, w / w.sum())
        paths, prob = self.cache[(s, t)]
        return paths[int(rng.choice(len(paths), p=prob))]


def simulate_trips(scenario: Scenario, n_trips: int, seed: int, mode: str = "by_distance",
                   path_model: str = "greedy", C: float | None = None, first_id: int = 0) -> list[SimulatedTrip]:
    """Generate ``n_trips`` trips with GPS readings.

    ``path_model`` is ``"greedy"`` (the generator used in the simulation
    study) or ``"logit"``, which draws from the model's own path prior with
    rate ``C`` by enumeration and is only feasible on small grids.
    """
    net = scenario.net
    rng = np.random.default_rng(seed)
    th = scenario.theta
    logit = _LogitPaths(net, th, C) if path_model == "logit" else None
    ttt_cache: dict[int, np.ndarray] = {}
    out = []
    for k in range(n_trips):
        i, j = rng.choice(net.n_nodes, size=2, replace=False)
        s, t = int(net.node_ids[i]), int(net.node_ids[j])
        if logit is not None:
            path = logit.sample(s, t, rng)
        else:
            if t not in ttt_cache:
                ttt_cache[t] = time_to_target_map(net, th, t)
            path = greedy_path(net, th, s, t, rng, ttt_cache[t])
        st = _finish_trip(scenario, first_id + k, s, t, path, rng, mode)
        out.append(st)
    return out


def simulate_trip(scenario: Scenario, seed: int, trip_id: int = 0, mode: str = "by_distance") -> SimulatedTrip:
    """One trip between uniformly chosen distinct nodes (greedy path rule)."""
    return simulate_trips(scenario, 1, seed, mode=mode, first_id=trip_id)[0]


def _finish_trip(scenario, trip_id, s, t, path, rng, mode):
    net = scenario.net
    pos = net.arc_positions(path)
    times = np.exp(scenario.mu[pos] + np.sqrt(scenario.sigma2[pos]) * rng.standard_normal(pos.size))
    trip = Trip(trip_id, s, t, 0.0, float(times.sum()))
    st = SimulatedTrip(trip, tuple(path), times)
    readings = sample_gps_readings(st, scenario, mode, scenario.gps_spacing, rng)
    st.trip = Trip(trip_id, s, t, 0.0, float(times.sum()), tuple(readings))
    return st


def sample_gps_readings(trip: SimulatedTrip, scenario: Scenario, mode: str, interval: float,
                        seed) -> list[GpsReading]:
    """Noisy readings every ``interval`` meters (``by_distance``) or seconds
    (``by_time``) along the true trajectory."""
    if not interval > 0:
        raise ValueError("interval must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    net = scenario.net
    pos = net.arc_positions(trip.true_path)
    times = np.asarray(trip.true_times, dtype=float)
    lengths = net.arc_length[pos]
    total_t = float(times.sum())
    if mode == "by_distance":
        total_d = float(lengths.sum())
        d = np.arange(1, int(total_d / interval + 1e-9) + 1) * interval
        d = d[d <= total_d + 1e-9]
        cum_d = np.concatenate([[0.0], np.cumsum(lengths)])
        cum_t = np.concatenate([[0.0], np.cumsum(times)])
        k = np.clip(np.searchsorted(cum_d, d, side="right") - 1, 0, pos.size - 1)
        qt = cum_t[k] + (d - cum_d[k]) / lengths[k] * times[k]
        qt = np.minimum(qt, total_t)
    elif mode == "by_time":
        qt = np.arange(1, int(total_t / interval + 1e-9) + 1) * interval
        qt = qt[qt <= total_t]
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    if qt.size == 0:
        return []
    out = np.empty((qt.size, 3))
    K.trajectory_eval(pos, times, pos.size, qt, net.arc_from, net.arc_to, net.node_x, net.node_y,
                      net.arc_length, out)
    noise = scenario.noise
    xy = rng.multivariate_normal(np.zeros(2), noise.sigma_xy, size=qt.size, method="cholesky")
    z = noise.zeta2
    spd = out[:, 2] * np.exp(-0.5 * z + math.sqrt(z) * rng.standard_normal(qt.size))
    t0 = trip.trip.t_start
    return [
        GpsReading(trip.trip_id, q + 1, float(t0 + qt[q]), float(out[q, 0] + xy[q, 0]),
                   float(out[q, 1] + xy[q, 1]), float(spd[q]))
        for q in range(qt.size)
    ]


def write_ground_truth(scenario: Scenario, trips: list[SimulatedTrip], times_path, params_path) -> None:
    net = scenario.net
    with open(times_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trip_id", "arc_seq", "arc_id", "true_time_s"])
        for st in trips:
            for k, (a, t) in enumerate(zip(st.true_path, st.true_times)):
                w.writerow([st.trip_id, k, a, repr(float(t))])
    with open(params_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arc_id", "true_mu", "true_sigma2"])
        for k, a in enumerate(net.arcs):
            w.writerow([a.id, repr(float(scenario.mu[k])), repr(float(scenario.sigma2[k]))])


def read_true_paths(times_path) -> dict[int, tuple[tuple[int, ...], np.ndarray]]:
    rows: dict[int, list[tuple[int, int, float]]] = {}
    with open(times_path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["trip_id"]), []).append((int(r["arc_seq"]), int(r["arc_id"]), float(r["true_time_s"])))
    out = {}
    for tid, rs in rows.items():
        rs.sort()
        out[tid] = (tuple(a for _, a, _ in rs), np.array([t for _, _, t in rs]))
    return out


def read_true_params(params_path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids, mu, s2 = [], [], []
    with open(params_path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            ids.append(int(r["arc_id"])); mu.append(float(r["true_mu"])); s2.append(float(r["true_sigma2"]))
    return np.array(ids), np.array(mu), np.array(s2)
