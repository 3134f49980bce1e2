"""Per-arc travel-time estimates from mapped GPS speeds alone.

Two estimators share the mapping step: the harmonic mean of speeds (the
arithmetic mean of the implied times) with the empirical time distribution,
and a lognormal speed model fitted by maximum likelihood. Both directions of
a two-way road are pooled.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .model import SPEED_FLOOR
from .network import ROAD_CLASSES, RoadNetwork, nearest_arcs


@dataclass
class ArcSpeedSample:
    arc_id: int
    speeds: np.ndarray


@dataclass
class LocalEstimate:
    """Point time plus a distribution for one (canonical) arc.

    ``kind`` is ``"empirical"`` (``speeds`` hold the sample) or
    ``"lognormal"`` (speed log-mean ``m`` and log-variance ``s2``).
    """

    arc_id: int
    point_time: float
    kind: str
    speeds: np.ndarray | None = None
    m: float = float("nan")
    s2: float = float("nan")
    donor: int | None = None

    def rescaled(self, arc_id: int, length: float, donor_length: float) -> "LocalEstimate":
        """Same speeds on an arc of a different length."""
        return LocalEstimate(arc_id, self.point_time * length / donor_length, self.kind,
                             self.speeds, self.m, self.s2, donor=self.arc_id)


def map_speeds_to_arcs(net: RoadNetwork, readings, speed_floor: float = SPEED_FLOOR) -> dict[int, ArcSpeedSample]:
    """Assign every reading to its nearest road segment (directions merged)."""
    readings = list(readings)
    if not readings:
        return {}
    xs = np.array([g.x for g in readings])
    ys = np.array([g.y for g in readings])
    v = np.maximum(np.array([g.speed for g in readings]), speed_floor)
    arcs = nearest_arcs(net, xs, ys)
    out = {}
    for a in np.unique(arcs):
        out[int(a)] = ArcSpeedSample(int(a), v[arcs == a])
    return out


def fit_harmonic(sample: ArcSpeedSample, length: float) -> LocalEstimate:
    if sample.speeds.size == 0:
        raise ValueError("empty sample")
    point = length * float(np.mean(1.0 / sample.speeds))
    return LocalEstimate(sample.arc_id, point, "empirical", speeds=np.asarray(sample.speeds, dtype=float))


def fit_mle(sample: ArcSpeedSample, length: float) -> LocalEstimate:
    """Lognormal speed MLE; the population (1/n) variance is used."""
    if sample.speeds.size == 0:
        raise ValueError("empty sample")
    lv = np.log(sample.speeds)
    m = float(lv.mean())
    s2 = float(np.mean((lv - m) ** 2))
    point = float(np.exp(np.log(length) - m + 0.5 * s2))
    return LocalEstimate(sample.arc_id, point, "lognormal", m=m, s2=s2)


def _canonical_adjacency(net: RoadNetwork):
    canon = sorted(set(int(c) for c in net.arc_canonical))
    at_node: dict[int, list[int]] = {}
    for c in canon:
        a = net.arc(c)
        at_node.setdefault(a.from_node, []).append(c)
        at_node.setdefault(a.to_node, []).append(c)
    adj = {}
    for c in canon:
        a = net.arc(c)
        adj[c] = sorted(set(at_node[a.from_node] + at_node[a.to_node]) - {c})
    return canon, adj


def impute_missing(net: RoadNetwork, estimates: dict[int, LocalEstimate]) -> dict[int, LocalEstimate]:
    """Fill arcs without data from the nearest same-class arc that has data.

    Distance is breadth-first over segments sharing an intersection; ties go
    to the smallest arc id. Donor speeds are carried over, so the time scales
    with the recipient's length.
    """
    canon, adj = _canonical_adjacency(net)
    out = dict(estimates)
    for c in canon:
        if c in estimates:
            continue
        cls = net.arc(c).road_class
        seen = {c}
        frontier = [c]
        donor = None
        while frontier and donor is None:
            hits = [a for a in frontier if a in estimates and net.arc(a).road_class == cls]
            if hits:
                donor = min(hits)
                break
            nxt = []
            for a in frontier:
                for b in adj[a]:
                    if b not in seen:
                        seen.add(b)
                        nxt.append(b)
            frontier = nxt
        if donor is None:
            raise ValueError(f"no arc of road class {cls!r} with GPS data reachable from arc {c}")
        out[c] = estimates[donor].rescaled(c, net.arc(c).length, net.arc(donor).length)
    return out


def bfs_donor_distance(net: RoadNetwork, arc_id: int, donors) -> int:
    """Hop distance from ``arc_id`` to the nearest arc in ``donors`` (testing aid)."""
    _, adj = _canonical_adjacency(net)
    donors = set(donors)
    q = deque([(arc_id, 0)])
    seen = {arc_id}
    while q:
        a, d = q.popleft()
        if a in donors:
            return d
        for b in adj[a]:
            if b not in seen:
                seen.add(b)
                q.append((b, d + 1))
    return -1


@dataclass
class LocalModel:
    """Fitted local method expanded to every directed arc."""

    net: RoadNetwork
    method: str
    estimates: dict[int, LocalEstimate]  # by canonical id
    point: np.ndarray = field(init=False)

    def __post_init__(self):
        self.point = np.array([self._est(k).point_time * 1.0 for k in range(self.net.n_arcs)])
        # canonical estimates refer to the canonical arc's length; directed twins share it
        lengths = self.net.arc_length
        canon_len = np.array([self.net.arc(int(c)).length for c in self.net.arc_canonical])
        self.point = self.point * lengths / canon_len

    def _est(self, k: int) -> LocalEstimate:
        return self.estimates[int(self.net.arc_canonical[k])]

    def point_times(self) -> np.ndarray:
        return self.point

    def sample_times(self, positions, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` independent draws of the total time over the given arcs."""
        total = np.zeros(n)
        for k in positions:
            e = self._est(int(k))
            L = self.net.arc_length[k]
            if e.kind == "empirical":
                total += L / rng.choice(e.speeds, size=n)
            else:
                total += np.exp(np.log(L) - e.m + np.sqrt(e.s2) * rng.standard_normal(n))
        return total

    def save(self, path, sidecar_path=None) -> None:
        """Estimates CSV; empirical speed samples go to ``sidecar_path``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["arc_id", "method", "point_s", "dist_kind", "dist_param1", "dist_param2"])
            for k, a in enumerate(self.net.arcs):
                e = self._est(k)
                if e.kind == "empirical":
                    p1, p2 = int(self.net.arc_canonical[k]), e.speeds.size
                else:
                    p1, p2 = repr(float(np.log(a.length) - e.m)), repr(e.s2)
                w.writerow([a.id, self.method, repr(float(self.point[k])), e.kind, p1, p2])
        if sidecar_path is not None:
            with open(sidecar_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["arc_id", "speed_mps"])
                for c in sorted(self.estimates):
                    e = self.estimates[c]
                    if e.kind == "empirical":
                        for v in e.speeds:
                            w.writerow([c, repr(float(v))])


def fit_local(net: RoadNetwork, trips, method: str, speed_floor: float = SPEED_FLOOR) -> LocalModel:
    """Map all readings of ``trips``, fit every arc with data, impute the rest."""
    if method not in ("harmonic", "mle"):
        raise ValueError(f"unknown local method {method!r}")
    samples = map_speeds_to_arcs(net, (g for t in trips for g in t.readings), speed_floor)
    fit = fit_harmonic if method == "harmonic" else fit_mle
    est = {c: fit(s, net.arc(c).length) for c, s in samples.items()}
    missing_classes = {net.arc(int(c)).road_class for c in net.arc_canonical} - {net.arc(c).road_class for c in est}
    if missing_classes:
        raise ValueError(f"no GPS data for road class {sorted(missing_classes, key=ROAD_CLASSES.index)[0]!r}")
    return LocalModel(net, method, impute_missing(net, est))


def load_local(net: RoadNetwork, path, sidecar_path=None) -> LocalModel:
    """Rebuild a :class:`LocalModel` written by :meth:`LocalModel.save`."""
    speeds: dict[int, list[float]] = {}
    if sidecar_path is not None:
        with open(sidecar_path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                speeds.setdefault(int(r["arc_id"]), []).append(float(r["speed_mps"]))
    est: dict[int, LocalEstimate] = {}
    method = None
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            method = r["method"]
            c = int(net.arc_canonical[net.arc_pos[int(r["arc_id"])]])
            if c in est:
                continue
            L = net.arc(c).length
            if r["dist_kind"] == "empirical":
                if c not in speeds:
                    raise ValueError(f"speed sample for arc {c} missing from sidecar")
                v = np.array(speeds[c])
                est[c] = LocalEstimate(c, L * float(np.mean(1.0 / v)), "empirical", speeds=v)
            else:
                # stored log-mean refers to the row's own arc; both directions share a length
                m = float(np.log(net.arc(int(r["arc_id"])).length)) - float(r["dist_param1"])
                s2 = float(r["dist_param2"])
                est[c] = LocalEstimate(c, float(np.exp(np.log(L) - m + 0.5 * s2)), "lognormal", m=m, s2=s2)
    if method is None:
        raise ValueError("empty estimates file")
    missing = set(int(c) for c in net.arc_canonical) - set(est)
    if missing:
        raise ValueError(f"estimates file lacks arcs {sorted(missing)[:5]}")
    return LocalModel(net, method, est)
