"""Distance-binned t-distribution model of log trip times.

Trips are grouped into equal-count bins by shortest-path distance and a
location-scale t is fitted to the log travel times of each bin. Quantiles for
an arbitrary distance interpolate linearly between neighbouring bin centres.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .network import RoadNetwork, shortest_path_tree

logger = logging.getLogger(__name__)

DOF_RANGE = (2.5, 100.0)
SCALE_FLOOR = 1e-6


@dataclass
class BinModel:
    edges: np.ndarray  # n_bins + 1 distance boundaries (m)
    center: np.ndarray
    location: np.ndarray
    scale: np.ndarray
    dof: np.ndarray
    count: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.center.size

    def bin_quantiles(self, q) -> np.ndarray:
        """``(n_bins, len(q))`` time quantiles of every bin."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        z = stats.t.ppf(q[None, :], self.dof[:, None])
        return np.exp(self.location[:, None] + self.scale[:, None] * z)

    def quantile(self, distance: float, q) -> np.ndarray | float:
        """Time quantile at ``distance``, interpolated between bin centres."""
        qs = self.bin_quantiles(q)
        out = np.array([np.interp(distance, self.center, qs[:, k]) for k in range(qs.shape[1])])
        return float(out[0]) if np.ndim(q) == 0 else out

    def point_estimate(self, distance: float) -> float:
        return float(self.quantile(distance, 0.5))

    def prob_within(self, distance: float, threshold: float) -> float:
        """P(time <= threshold) from the interpolated quantile function."""
        lo, hi = 1e-9, 1 - 1e-9
        if self.quantile(distance, lo) > threshold:
            return 0.0
        if self.quantile(distance, hi) <= threshold:
            return 1.0
        return float(optimize.brentq(lambda q: self.quantile(distance, q) - threshold, lo, hi, xtol=1e-10))

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin", "center_m", "location", "scale", "dof", "count"])
            for b in range(self.n_bins):
                w.writerow([b, repr(float(self.center[b])), repr(float(self.location[b])),
                            repr(float(self.scale[b])), repr(float(self.dof[b])), int(self.count[b])])

    @classmethod
    def load(cls, path) -> "BinModel":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        c = rows[:, 1]
        edges = np.concatenate([[c[0]], 0.5 * (c[1:] + c[:-1]), [c[-1]]])
        return cls(edges, c, rows[:, 2], rows[:, 3], rows[:, 4], rows[:, 5].astype(int))


def _t_em(y: np.ndarray, nu: float, loc: float, scale: float, iters: int = 200):
    for _ in range(iters):
        r2 = ((y - loc) / scale) ** 2
        w = (nu + 1.0) / (nu + r2)
        new_loc = float(np.sum(w * y) / np.sum(w))
        new_scale = max(math.sqrt(float(np.sum(w * (y - new_loc) ** 2)) / y.size), SCALE_FLOOR)
        done = abs(new_loc - loc) < 1e-12 and abs(new_scale - scale) < 1e-12
        loc, scale = new_loc, new_scale
        if done:
            break
    return loc, scale


def fit_t(y) -> tuple[float, float, float]:
    """Maximum-likelihood location, scale and dof for a location-scale t.

    The dof is profiled over a log grid on ``DOF_RANGE`` and then refined by
    bounded scalar search; location and scale come from EM for fixed dof.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty bin")
    if np.ptp(y) == 0:
        return float(y[0]), SCALE_FLOOR, DOF_RANGE[1]
    loc0 = float(np.median(y))
    scale0 = max(float(np.std(y)), SCALE_FLOOR)

    def profile(log_nu):
        nu = math.exp(log_nu)
        loc, scale = _t_em(y, nu, loc0, scale0)
        return -float(np.sum(stats.t.logpdf(y, nu, loc, scale))), loc, scale

    grid = np.linspace(math.log(DOF_RANGE[0]), math.log(DOF_RANGE[1]), 15)
    nll = [profile(g)[0] for g in grid]
    k = int(np.argmin(nll))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda g: profile(g)[0], bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-4})
    best = res.x if res.fun <= nll[k] else grid[k]
    _, loc, scale = profile(best)
    return loc, scale, float(math.exp(best))


def trip_distances(net: RoadNetwork, trips) -> np.ndarray:
    """Shortest-path length (by arc length) between each trip's endpoints."""
    trees: dict[int, np.ndarray] = {}
    out = np.empty(len(trips))
    for k, t in enumerate(trips):
        if t.start_node not in trees:
            trees[t.start_node] = shortest_path_tree(net, net.arc_length, t.start_node)[0]
        out[k] = trees[t.start_node][net.node_pos[t.end_node]]
    return out


def _tie_aware_cuts(sd: np.ndarray, n_bins: int, min_per_bin: int) -> list[int]:
    """Cut positions into sorted distances ``sd`` giving about equal counts.

    Cuts only fall between distinct distances, so equal distances share a
    bin; bins below ``min_per_bin`` are merged into their smaller neighbour.
    """
    n = sd.size
    allowed = np.flatnonzero(sd[1:] != sd[:-1]) + 1
    cuts = set()
    if allowed.size:
        for j in range(1, n_bins):
            target = n * j / n_bins
            cuts.add(int(allowed[np.argmin(np.abs(allowed - target))]))
    bounds = [0, *sorted(cuts), n]
    while len(bounds) > 2:
        sizes = np.diff(bounds)
        k = int(np.argmin(sizes))
        if sizes[k] >= min_per_bin:
            break
        if k == 0:
            drop = 1
        elif k == sizes.size - 1:
            drop = k
        else:
            drop = k if sizes[k - 1] <= sizes[k + 1] else k + 1
        del bounds[drop]
    return bounds[1:-1]


def fit_budge_bins(net: RoadNetwork, trips, n_bins: int = 10, min_per_bin: int = 30) -> BinModel:
    """About equal-count distance bins, each with its own t fit to log trip times.

    Trips at the same distance always share a bin, so bin edges are strictly
    increasing; fewer bins result when ties or small samples require it.
    """
    dist = trip_distances(net, trips)
    logt = np.log([t.duration for t in trips])
    ok = np.isfinite(dist)
    dist, logt = dist[ok], logt[ok]
    if dist.size < min_per_bin:
        raise ValueError(f"need at least {min_per_bin} trips, got {dist.size}")
    order = np.argsort(dist, kind="stable")
    sd = dist[order]
    cuts = _tie_aware_cuts(sd, n_bins, min_per_bin)
    if len(cuts) + 1 < n_bins:
        logger.warning("%d trips over %d distinct distances: using %d bins instead of %d",
                       dist.size, np.unique(sd).size, len(cuts) + 1, n_bins)
    groups = np.split(order, cuts)
    center, loc, scale, dof, count = [], [], [], [], []
    for g in groups:
        l, s, nu = fit_t(logt[g])
        center.append(float(np.median(dist[g])))
        loc.append(l); scale.append(s); dof.append(nu); count.append(g.size)
    cuts = np.array(cuts, dtype=np.int64)
    edges = np.concatenate([[sd[0]], 0.5 * (sd[cuts - 1] + sd[cuts]), [sd[-1]]])
    return BinModel(edges, np.array(center), np.array(loc), np.array(scale), np.array(dof), np.array(count))
