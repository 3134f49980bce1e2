"""Trip and GPS ingestion, endpoint snapping, filtering and fold planning."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkError, RoadNetwork, _read_rows, nearest_nodes

logger = logging.getLogger(__name__)

TRIP_HEADER = ("trip_id", "start_node", "end_node", "t_start_s", "t_end_s")
GPS_HEADER = ("trip_id", "seq", "t_s", "x_m", "y_m", "speed_mps")


class DataError(ValueError):
    """Raised when a trips or GPS file cannot be parsed."""


@dataclass(frozen=True)
class GpsReading:
    trip_id: int
    seq: int
    t: float
    x: float
    y: float
    speed: float


@dataclass(frozen=True)
class Trip:
    trip_id: int
    start_node: int
    end_node: int
    t_start: float
    t_end: float
    readings: tuple[GpsReading, ...] = ()

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class FoldPlan:
    training: list[int]
    folds: list[list[int]] = field(default_factory=list)

    @property
    def validation_test(self) -> list[int]:
        return [t for f in self.folds for t in f]


def _parse(rows, conv, what):
    out = []
    for line, r in rows:
        try:
            out.append(conv(r))
        except ValueError as exc:
            raise DataError(f"{what} line {line}: {exc}") from None
    return out


def load_dataset(
    net: RoadNetwork,
    trips_source,
    gps_source,
    max_gap_s: float = 300.0,
    min_gap_speed: float = 1.0,
) -> list[Trip]:
    """Read trips and GPS readings, snapping missing endpoints to nodes.

    Trips with ``start_node``/``end_node`` of -1 take their endpoints and
    times from the first and last readings. Per-trip problems are logged and
    the trip is skipped; malformed files raise :class:`DataError`.
    """
    try:
        trip_rows = _read_rows(trips_source, TRIP_HEADER)
        gps_rows = _read_rows(gps_source, GPS_HEADER)
    except NetworkError as exc:
        raise DataError(str(exc)) from None
    trip_recs = _parse(
        trip_rows,
        lambda r: (int(r["trip_id"]), int(r["start_node"]), int(r["end_node"]),
                   float(r["t_start_s"]), float(r["t_end_s"])),
        "trips",
    )
    readings = _parse(
        gps_rows,
        lambda r: GpsReading(int(r["trip_id"]), int(r["seq"]), float(r["t_s"]),
                             float(r["x_m"]), float(r["y_m"]), float(r["speed_mps"])),
        "gps",
    )
    by_trip: dict[int, list[GpsReading]] = defaultdict(list)
    for g in readings:
        by_trip[g.trip_id].append(g)

    trips, seen = [], set()
    for trip_id, s, e, t0, t1 in trip_recs:
        if trip_id in seen:
            raise DataError(f"duplicate trip id {trip_id}")
        seen.add(trip_id)
        reads = sorted(by_trip.get(trip_id, []), key=lambda g: g.seq)
        trip, reason = _build_trip(net, trip_id, s, e, t0, t1, reads, max_gap_s, min_gap_speed)
        if trip is None:
            logger.info("dropping trip %s: %s", trip_id, reason)
            continue
        trips.append(trip)
    return trips


def _build_trip(net, trip_id, s, e, t0, t1, reads, max_gap_s, min_gap_speed):
    times = [g.t for g in reads]
    if any(b <= a for a, b in zip(times, times[1:])):
        return None, "reading times not increasing"
    if any(g.speed < 0 or not math.isfinite(g.speed) for g in reads):
        return None, "invalid speed"
    snapped = s == -1 or e == -1
    if snapped:
        if len(reads) < 2:
            return None, "too few readings"
        ends = nearest_nodes(net, [reads[0].x, reads[-1].x], [reads[0].y, reads[-1].y])
        if s == -1:
            s, t0 = int(ends[0]), reads[0].t
        if e == -1:
            e, t1 = int(ends[1]), reads[-1].t
    if s not in net.node_pos or e not in net.node_pos:
        return None, "endpoint not in network"
    if not t1 > t0:
        return None, "zero duration"
    if s == e:
        return None, "identical endpoints"
    if any(g.t < t0 or g.t > t1 for g in reads):
        return None, "reading outside trip window"
    for a, b in zip(reads, reads[1:]):
        gap = b.t - a.t
        if gap > max_gap_s and math.hypot(b.x - a.x, b.y - a.y) / gap < min_gap_speed:
            return None, "long stop"
    return Trip(trip_id, s, e, t0, t1, tuple(reads)), None


def write_dataset(trips: list[Trip], trips_path, gps_path) -> None:
    with open(trips_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIP_HEADER)
        for t in trips:
            w.writerow([t.trip_id, t.start_node, t.end_node, repr(t.t_start), repr(t.t_end)])
    with open(gps_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GPS_HEADER)
        for t in trips:
            for g in t.readings:
                w.writerow([g.trip_id, g.seq, repr(g.t), repr(g.x), repr(g.y), repr(g.speed)])


def split_folds(trips, seed: int, n_folds: int = 10) -> FoldPlan:
    """Seeded 50/50 split into training and ``n_folds`` validation/test folds.

    Training receives ``floor(n / 2)`` trips; fold sizes differ by at most one.
    Accepts trips or bare trip ids.
    """
    ids = [t.trip_id if isinstance(t, Trip) else int(t) for t in trips]
    if len(ids) < 2 * n_folds:
        raise ValueError(f"need at least {2 * n_folds} trips, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate trip ids")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[k] for k in order]
    n_train = len(ids) // 2
    rest = shuffled[n_train:]
    folds = [list(map(int, f)) for f in np.array_split(np.array(rest, dtype=np.int64), n_folds)]
    return FoldPlan(training=shuffled[:n_train], folds=folds)
