"""Directed road network with planar geometry and routing queries."""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass
from os import PathLike
from typing import Iterable, Sequence, TextIO

import numpy as np

ROAD_CLASSES = ("primary", "secondary", "tertiary")

Path = tuple  # ordered arc ids


class NetworkError(ValueError):
    """Raised for malformed or inconsistent network input."""


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Arc:
    id: int
    from_node: int
    to_node: int
    length: float
    road_class: str
    reverse_arc: int = -1


class RoadNetwork:
    """Immutable directed road graph.

    Nodes and arcs are kept sorted by id; numpy arrays indexed by that
    position back every numeric query. ``weights`` arguments throughout the
    package are arrays aligned with :attr:`arcs`.
    """

    def __init__(self, nodes: Iterable[Node], arcs: Iterable[Arc]):
        nodes = sorted(nodes, key=lambda n: n.id)
        arcs = sorted(arcs, key=lambda a: a.id)
        if not nodes:
            raise NetworkError("network has no nodes")
        node_pos: dict[int, int] = {}
        for k, n in enumerate(nodes):
            if n.id in node_pos:
                raise NetworkError(f"duplicate node id {n.id}")
            if not (math.isfinite(n.x) and math.isfinite(n.y)):
                raise NetworkError(f"node {n.id} has non-finite coordinates")
            node_pos[n.id] = k
        arc_pos: dict[int, int] = {}
        for k, a in enumerate(arcs):
            if a.id in arc_pos:
                raise NetworkError(f"duplicate arc id {a.id}")
            for end in (a.from_node, a.to_node):
                if end not in node_pos:
                    raise NetworkError(f"arc {a.id} references missing node {end}")
            if a.from_node == a.to_node:
                raise NetworkError(f"arc {a.id} is a self-loop")
            if not (a.length > 0 and math.isfinite(a.length)):
                raise NetworkError(f"arc {a.id} has nonpositive length {a.length}")
            if a.road_class not in ROAD_CLASSES:
                raise NetworkError(f"arc {a.id} has unknown road class {a.road_class!r}")
            arc_pos[a.id] = k
        for a in arcs:
            if a.reverse_arc != -1:
                rev = arcs[arc_pos[a.reverse_arc]] if a.reverse_arc in arc_pos else None
                if rev is None or rev.from_node != a.to_node or rev.to_node != a.from_node:
                    raise NetworkError(f"arc {a.id} has inconsistent reverse arc {a.reverse_arc}")

        self.nodes: tuple[Node, ...] = tuple(nodes)
        self.arcs: tuple[Arc, ...] = tuple(arcs)
        self.node_pos = node_pos
        self.arc_pos = arc_pos
        self.node_ids = np.array([n.id for n in nodes], dtype=np.int64)
        self.arc_ids = np.array([a.id for a in arcs], dtype=np.int64)
        self.node_x = np.array([n.x for n in nodes], dtype=np.float64)
        self.node_y = np.array([n.y for n in nodes], dtype=np.float64)
        self.arc_from = np.array([node_pos[a.from_node] for a in arcs], dtype=np.int64)
        self.arc_to = np.array([node_pos[a.to_node] for a in arcs], dtype=np.int64)
        self.arc_length = np.array([a.length for a in arcs], dtype=np.float64)
        self.arc_class = np.array([ROAD_CLASSES.index(a.road_class) for a in arcs], dtype=np.int64)
        canon = [min(a.id, a.reverse_arc) if a.reverse_arc != -1 else a.id for a in arcs]
        self.arc_canonical = np.array(canon, dtype=np.int64)

        out: dict[int, list[int]] = {n.id: [] for n in nodes}
        for a in arcs:
            out[a.from_node].append(a.id)
        self.adjacency: dict[int, tuple[int, ...]] = {k: tuple(v) for k, v in out.items()}
        self._route_tables: dict[int, tuple] = {}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)

    def arc(self, arc_id: int) -> Arc:
        return self.arcs[self.arc_pos[arc_id]]

    def node(self, node_id: int) -> Node:
        return self.nodes[self.node_pos[node_id]]

    def path_nodes(self, path: Sequence[int], start: int | None = None) -> list[int]:
        """Node sequence visited by ``path``; ``start`` is returned for an empty path."""
        if not path:
            return [] if start is None else [start]
        seq = [self.arc(path[0]).from_node]
        seq.extend(self.arc(a).to_node for a in path)
        return seq

    def is_valid_path(self, path: Sequence[int], start: int, end: int) -> bool:
        """Contiguous, simple, and joining ``start`` to ``end``."""
        nodes = self.path_nodes(path, start)
        if nodes[0] != start or nodes[-1] != end or len(set(nodes)) != len(nodes):
            return False
        return all(self.arc(a).to_node == self.arc(b).from_node for a, b in zip(path, path[1:]))

    def path_length(self, path: Sequence[int]) -> float:
        return float(sum(self.arc(a).length for a in path))

    def arc_positions(self, path: Sequence[int]) -> np.ndarray:
        return np.array([self.arc_pos[a] for a in path], dtype=np.int64)


# ---------------------------------------------------------------- loading

def _open(source) -> TextIO:
    if isinstance(source, (str, PathLike)):
        return open(source, newline="", encoding="utf-8")
    return source


def _read_rows(source, header: Sequence[str]) -> list[tuple[int, dict[str, str]]]:
    fh = _open(source)
    try:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise NetworkError("line 1: missing header row") from None
        if [c.strip() for c in first] != list(header):
            raise NetworkError(f"line 1: expected header {','.join(header)}, got {','.join(first)}")
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise NetworkError(f"line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
            rows.append((reader.line_num, dict(zip(header, (c.strip() for c in row)))))
        return rows
    finally:
        if fh is not source:
            fh.close()


NODE_HEADER = ("node_id", "x_m", "y_m")
ARC_HEADER = ("arc_id", "from_node", "to_node", "length_m", "road_class", "reverse_arc_id")


def load_network(nodes_source, arcs_source) -> RoadNetwork:
    """Read the nodes and arcs CSV files and validate the resulting graph."""
    nodes = []
    for line, r in _read_rows(nodes_source, NODE_HEADER):
        try:
            nodes.append(Node(int(r["node_id"]), float(r["x_m"]), float(r["y_m"])))
        except ValueError as exc:
            raise NetworkError(f"line {line}: {exc}") from None
    arcs = []
    for line, r in _read_rows(arcs_source, ARC_HEADER):
        try:
            arcs.append(
                Arc(
                    int(r["arc_id"]),
                    int(r["from_node"]),
                    int(r["to_node"]),
                    float(r["length_m"]),
                    r["road_class"],
                    int(r["reverse_arc_id"]),
                )
            )
        except ValueError as exc:
            raise NetworkError(f"line {line}: {exc}") from None
    return RoadNetwork(nodes, arcs)


def write_network(net: RoadNetwork, nodes_path, arcs_path) -> None:
    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_HEADER)
        for n in net.nodes:
            w.writerow([n.id, repr(n.x), repr(n.y)])
    with open(arcs_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ARC_HEADER)
        for a in net.arcs:
            w.writerow([a.id, a.from_node, a.to_node, repr(a.length), a.road_class, a.reverse_arc])


def network_from_csv_text(nodes_text: str, arcs_text: str) -> RoadNetwork:
    return load_network(io.StringIO(nodes_text), io.StringIO(arcs_text))


# ---------------------------------------------------------------- geometry

def nearest_nodes(net: RoadNetwork, xs, ys) -> np.ndarray:
    """Vectorised :func:`nearest_node`; returns node ids."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    out = np.empty(xs.shape[0], dtype=np.int64)
    for lo in range(0, xs.shape[0], 4096):
        dx = xs[lo : lo + 4096, None] - net.node_x[None, :]
        dy = ys[lo : lo + 4096, None] - net.node_y[None, :]
        out[lo : lo + 4096] = np.argmin(dx * dx + dy * dy, axis=1)
    return net.node_ids[out]


def nearest_node(net: RoadNetwork, x: float, y: float) -> int:
    """Closest node by Euclidean distance; ties go to the smallest id."""
    return int(nearest_nodes(net, [x], [y])[0])


def _canonical_segments(net: RoadNetwork):
    canon = np.unique(net.arc_canonical)
    pos = np.array([net.arc_pos[c] for c in canon], dtype=np.int64)
    x0, y0 = net.node_x[net.arc_from[pos]], net.node_y[net.arc_from[pos]]
    x1, y1 = net.node_x[net.arc_to[pos]], net.node_y[net.arc_to[pos]]
    return canon, x0, y0, x1, y1


def point_segment_dist2(px, py, x0, y0, x1, y1):
    """Squared distance from points to segments (broadcasting)."""
    dx, dy = x1 - x0, y1 - y0
    len2 = dx * dx + dy * dy
    t = ((px - x0) * dx + (py - y0) * dy) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    ex = px - (x0 + t * dx)
    ey = py - (y0 + t * dy)
    return ex * ex + ey * ey


def nearest_arcs(net: RoadNetwork, xs, ys) -> np.ndarray:
    """Vectorised :func:`nearest_arc`; returns canonical arc ids."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    canon, x0, y0, x1, y1 = _canonical_segments(net)
    out = np.empty(xs.shape[0], dtype=np.int64)
    step = max(1, 2_000_000 // max(1, canon.size))
    for lo in range(0, xs.shape[0], step):
        d2 = point_segment_dist2(
            xs[lo : lo + step, None], ys[lo : lo + step, None], x0[None], y0[None], x1[None], y1[None]
        )
        out[lo : lo + step] = np.argmin(d2, axis=1)
    return canon[out]


def nearest_arc(net: RoadNetwork, x: float, y: float) -> int:
    """Closest road segment, both travel directions merged.

    Returns the canonical id (smaller of the two directed ids for a two-way
    road). Ties go to the smallest canonical id.
    """
    return int(nearest_arcs(net, [x], [y])[0])


# ---------------------------------------------------------------- routing

def shortest_path(net: RoadNetwork, weights, s: int, t: int) -> tuple[Path | None, float]:
    """Minimum-weight path from ``s`` to ``t``.

    Equal-cost candidates are ordered lexicographically by arc id sequence.
    Returns ``(None, inf)`` when ``t`` is unreachable.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    if s not in net.node_pos or t not in net.node_pos:
        raise KeyError(f"unknown node {s if s not in net.node_pos else t}")
    if s == t:
        return (), 0.0
    best: dict[int, tuple[float, Path]] = {s: (0.0, ())}
    heap = [(0.0, (), s)]
    done = set()
    while heap:
        cost, path, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == t:
            return path, cost
        for a in net.adjacency[u]:
            arc = net.arcs[net.arc_pos[a]]
            v = arc.to_node
            if v in done:
                continue
            label = (cost + weights[net.arc_pos[a]], path + (a,))
            if v not in best or label < best[v]:
                best[v] = label
                heapq.heappush(heap, (label[0], label[1], v))
    return None, math.inf


def shortest_path_tree(net: RoadNetwork, weights, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Single-source costs and predecessor arc positions (-1 at root/unreached).

    Indexed by node position. Tie-breaking matches :func:`shortest_path`.
    """
    weights = np.asarray(weights, dtype=float)
    n = net.n_nodes
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    src = net.node_pos[s]
    best: dict[int, tuple[float, Path]] = {src: (0.0, ())}
    heap = [(0.0, (), src)]
    done = np.zeros(n, dtype=bool)
    while heap:
        cost, path, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        dist[u] = cost
        if path:
            pred[u] = net.arc_pos[path[-1]]
        for a in net.adjacency[int(net.node_ids[u])]:
            k = net.arc_pos[a]
            v = int(net.arc_to[k])
            if done[v]:
                continue
            label = (cost + weights[k], path + (a,))
            if v not in best or label < best[v]:
                best[v] = label
                heapq.heappush(heap, (label[0], label[1], v))
    return dist, pred


def tree_path(net: RoadNetwork, pred: np.ndarray, target: int) -> Path | None:
    """Arc ids from the tree root to ``target``; empty for the root and unreached nodes."""
    v = net.node_pos[target]
    arcs = []
    while pred[v] != -1:
        arcs.append(int(net.arc_ids[pred[v]]))
        v = int(net.arc_from[pred[v]])
        if len(arcs) > net.n_nodes:
            raise RuntimeError("predecessor cycle")
    path = tuple(reversed(arcs))
    return path


def time_to_target_map(net: RoadNetwork, theta, target: int) -> np.ndarray:
    """Minimum expected seconds from every node (by position) to ``target``."""
    theta = np.asarray(theta, dtype=float)
    n = net.n_nodes
    incoming: list[list[int]] = [[] for _ in range(n)]
    for k in range(net.n_arcs):
        incoming[net.arc_to[k]].append(k)
    dist = np.full(n, np.inf)
    tgt = net.node_pos[target]
    dist[tgt] = 0.0
    heap = [(0.0, tgt)]
    while heap:
        d, v = heapq.heappop(heap)
        if d > dist[v]:
            continue
        for k in incoming[v]:
            u = net.arc_from[k]
            nd = d + theta[k]
            if nd < dist[u]:
                dist[u] = nd
                heapq.heappush(heap, (nd, int(u)))
    return dist


def enumerate_local_routes(
    net: RoadNetwork, d1: int, d2: int, K: int, forbidden_nodes: Iterable[int] = ()
) -> list[Path]:
    """All simple routes of at most ``K`` arcs from ``d1`` to ``d2``.

    Interior nodes must avoid ``forbidden_nodes``. Routes are returned in
    lexicographic order of their arc ids.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if d1 == d2:
        raise ValueError("route endpoints must differ")
    forbidden = set(forbidden_nodes) - {d1, d2}
    routes: list[Path] = []
    stack = [(d1, (), {d1})]
    while stack:
        u, path, seen = stack.pop()
        for a in net.adjacency[u]:
            v = net.arcs[net.arc_pos[a]].to_node
            if v == d2:
                routes.append(path + (a,))
                continue
            if v in seen or v in forbidden or len(path) + 1 >= K:
                continue
            stack.append((v, path + (a,), seen | {v}))
    routes.sort()
    return routes


def simple_paths(net: RoadNetwork, s: int, t: int, max_arcs: int | None = None) -> list[Path]:
    """Every simple path from ``s`` to ``t`` (exhaustive; small networks only)."""
    limit = net.n_nodes if max_arcs is None else max_arcs
    if s == t:
        return [()]
    return enumerate_local_routes(net, s, t, limit)


def local_route_table(net: RoadNetwork, K: int):
    """Flattened table of all simple routes with at most ``K`` arcs.

    Returns ``(start_ptr, route_end, route_arcs, route_len)`` in node and arc
    positions. Routes starting at node position ``u`` occupy rows
    ``start_ptr[u]:start_ptr[u + 1]``, sorted by end node and then
    lexicographically, so the rows for a pair form one contiguous run.
    """
    if K in net._route_tables:
        return net._route_tables[K]
    out_pos: list[list[int]] = [[] for _ in range(net.n_nodes)]
    for k in range(net.n_arcs):
        out_pos[net.arc_from[k]].append(k)
    ends, arcs_rows, start_ptr = [], [], [0]
    for u in range(net.n_nodes):
        found: list[tuple[int, tuple[int, ...]]] = []
        stack = [(u, (), (u,))]
        while stack:
            v, path, seen = stack.pop()
            for k in out_pos[v]:
                w = int(net.arc_to[k])
                if w in seen:
                    continue
                p = path + (k,)
                found.append((w, p))
                if len(p) < K:
                    stack.append((w, p, seen + (w,)))
        found.sort(key=lambda e: (e[0], tuple(net.arc_ids[list(e[1])])))
        for w, p in found:
            ends.append(w)
            arcs_rows.append(p + (-1,) * (K - len(p)))
        start_ptr.append(len(ends))
    table = (
        np.array(start_ptr, dtype=np.int64),
        np.array(ends, dtype=np.int64),
        np.array(arcs_rows, dtype=np.int64).reshape(-1, K),
        np.array([K - r.count(-1) for r in arcs_rows], dtype=np.int64),
    )
    net._route_tables[K] = table
    return table
