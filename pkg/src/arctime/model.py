"""Lognormal arc travel-time model with a logit path prior and GPS likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .network import ROAD_CLASSES, RoadNetwork

MPH = 0.44704  # m/s
SPEED_FLOOR = 5 * MPH
DEFAULT_PRIOR_SPEEDS = {"primary": 15.6, "secondary": 11.2, "tertiary": 6.7}
LOG2PI = math.log(2.0 * math.pi)


@dataclass
class ArcParams:
    """Lognormal parameters for one arc (scalars) or all arcs (arrays)."""

    mu: np.ndarray | float
    sigma2: np.ndarray | float

    @property
    def theta(self):
        return theta(self)


@dataclass
class GpsNoise:
    sigma_xy: np.ndarray
    zeta2: float

    def __post_init__(self):
        self.sigma_xy = np.asarray(self.sigma_xy, dtype=float).reshape(2, 2)
        if not np.allclose(self.sigma_xy, self.sigma_xy.T):
            raise ValueError("location covariance must be symmetric")
        try:
            np.linalg.cholesky(self.sigma_xy)
        except np.linalg.LinAlgError:
            raise ValueError("location covariance must be positive definite") from None
        if not self.zeta2 > 0:
            raise ValueError("zeta2 must be positive")

    def kernel_constants(self) -> np.ndarray:
        """``[inv00, inv01, inv11, location normaliser, zeta2]`` for the kernels."""
        inv = np.linalg.inv(self.sigma_xy)
        _, logdet = np.linalg.slogdet(self.sigma_xy)
        return np.array([inv[0, 0], inv[0, 1], inv[1, 1], -LOG2PI - 0.5 * logdet, self.zeta2])


@dataclass
class Hyperparams:
    """Prior hyperparameters and fixed model constants.

    ``m`` holds one prior mean of mu per arc, aligned with ``net.arcs``.
    ``sigma_xy`` is the known GPS location covariance (square meters).
    """

    m: np.ndarray
    s2: float = 1.0
    b1: float = 0.05
    b2: float = 1.5
    b3: float = 0.01
    b4: float = 0.5
    C: float = 0.01
    alpha: float = 1.0
    alpha_prime: float = 0.5
    sigma_xy: np.ndarray = field(default_factory=lambda: np.diag([100.0, 100.0]))
    speed_floor: float = SPEED_FLOOR

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.sigma_xy = np.asarray(self.sigma_xy, dtype=float).reshape(2, 2)
        if not (self.b1 < self.b2 and self.b3 < self.b4):
            raise ValueError("uniform prior bounds must satisfy b1 < b2 and b3 < b4")
        if min(self.b1, self.b3) < 0:
            raise ValueError("uniform prior bounds must be nonnegative")
        for name in ("s2", "C", "alpha", "alpha_prime", "speed_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def default_hyperparams(net: RoadNetwork, prior_speeds: dict[str, float] | None = None, **overrides) -> Hyperparams:
    """Hyperparameters with per-arc prior means ``log(length / class speed)``."""
    speeds = dict(DEFAULT_PRIOR_SPEEDS)
    speeds.update(prior_speeds or {})
    v = np.array([speeds[ROAD_CLASSES[c]] for c in net.arc_class])
    return Hyperparams(m=np.log(net.arc_length / v), **overrides)


def theta(p: ArcParams):
    """Expected travel time ``exp(mu + sigma2 / 2)``."""
    return np.exp(np.asarray(p.mu) + 0.5 * np.asarray(p.sigma2))


def path_log_prior_unnorm(net: RoadNetwork, path, theta_arr, C: float) -> float:
    """Unnormalised log path prior, ``-C * sum(theta)`` over the path's arcs."""
    if len(path) == 0:
        return 0.0
    return -C * float(np.sum(np.asarray(theta_arr)[net.arc_positions(path)]))


def lognormal_logpdf(x, mu, sigma2):
    x = np.asarray(x, dtype=float)
    lx = np.log(x)
    return -lx - 0.5 * np.log(2.0 * np.pi * sigma2) - (lx - mu) ** 2 / (2.0 * sigma2)


def trajectory_at(net: RoadNetwork, path, times, t_query: float) -> tuple[float, float, float]:
    """Position and speed at trip-relative time ``t_query``.

    Constant speed on each arc; an instant on an arc boundary belongs to the
    later arc, and the trip end to the last arc.
    """
    times = np.asarray(times, dtype=float)
    if len(path) == 0 or len(path) != times.size:
        raise ValueError("path and times must be nonempty and aligned")
    total = float(times.sum())
    if not (0.0 <= t_query <= total * (1 + 1e-12)):
        raise ValueError(f"t_query {t_query} outside [0, {total}]")
    out = np.empty((1, 3))
    K.trajectory_eval(
        net.arc_positions(path), times, len(path), np.array([float(t_query)]),
        net.arc_from, net.arc_to, net.node_x, net.node_y, net.arc_length, out,
    )
    return float(out[0, 0]), float(out[0, 1]), float(out[0, 2])


def gps_loglik(reading, predicted, noise: GpsNoise, speed_floor: float = SPEED_FLOOR) -> float:
    """Log density of one reading given the true position and speed.

    Location is bivariate normal around ``predicted[:2]``; the log of the
    (floored) measured speed is normal with mean ``log(speed) - zeta2 / 2``.
    """
    px, py, sp = predicted
    if not sp > 0:
        raise ValueError("predicted speed must be positive")
    c = noise.kernel_constants()
    dx, dy = reading.x - px, reading.y - py
    loc = c[3] - 0.5 * (c[0] * dx * dx + 2.0 * c[1] * dx * dy + c[2] * dy * dy)
    e = math.log(max(reading.speed, speed_floor)) - math.log(sp) + 0.5 * noise.zeta2
    spd = -0.5 * math.log(2.0 * math.pi * noise.zeta2) - e * e / (2.0 * noise.zeta2)
    return float(loc + spd)


def trip_reading_arrays(trip, speed_floor: float = SPEED_FLOOR):
    """Trip-relative reading times, coordinates and floored log speeds."""
    r = trip.readings
    t = np.array([g.t - trip.t_start for g in r], dtype=float)
    x = np.array([g.x for g in r], dtype=float)
    y = np.array([g.y for g in r], dtype=float)
    lv = np.log(np.maximum(np.array([g.speed for g in r], dtype=float), speed_floor))
    return t, x, y, lv


def trip_loglik(net: RoadNetwork, trip, path, times, params: ArcParams, noise: GpsNoise, hyper: Hyperparams) -> float:
    """Joint log density of one trip's path, arc times and GPS readings."""
    times = np.asarray(times, dtype=float)
    if len(path) != times.size:
        raise ValueError("times must align with path")
    if abs(times.sum() - trip.duration) > 1e-9 * max(1.0, trip.duration):
        raise ValueError("arc times must sum to the trip duration")
    pos = net.arc_positions(path)
    mu = np.asarray(params.mu, dtype=float)
    s2 = np.asarray(params.sigma2, dtype=float)
    th = theta(params)
    total = -hyper.C * float(th[pos].sum())
    total += float(lognormal_logpdf(times, mu[pos], s2[pos]).sum())
    if trip.readings:
        t, x, y, lv = trip_reading_arrays(trip, hyper.speed_floor)
        total += K.trip_gps_loglik(
            pos, times, len(pos), t, x, y, lv,
            net.arc_from, net.arc_to, net.node_x, net.node_y, net.arc_length, noise.kernel_constants(),
        )
    return total


def log_prior_params(params: ArcParams, zeta2: float, hyper: Hyperparams) -> float:
    """Log prior density of all arc parameters and zeta2, up to constants.

    Uniform priors are on the standard deviations sigma_j and zeta.
    """
    mu = np.atleast_1d(np.asarray(params.mu, dtype=float))
    sd = np.sqrt(np.atleast_1d(np.asarray(params.sigma2, dtype=float)))
    z = math.sqrt(zeta2)
    if np.any(sd < hyper.b1) or np.any(sd > hyper.b2) or not (hyper.b3 <= z <= hyper.b4):
        return -math.inf
    return float(np.sum(-0.5 * (mu - hyper.m) ** 2 / hyper.s2 - 0.5 * math.log(2 * math.pi * hyper.s2)))
