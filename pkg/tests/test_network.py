import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arctime.network import (
    Arc,
    NetworkError,
    Node,
    RoadNetwork,
    enumerate_local_routes,
    load_network,
    local_route_table,
    nearest_arc,
    nearest_node,
    network_from_csv_text,
    shortest_path,
    shortest_path_tree,
    simple_paths,
    time_to_target_map,
    tree_path,
    write_network,
)
from arctime.simulator import grid_network

NODES = "node_id,x_m,y_m\n0,0,0\n1,100,0\n2,200,0\n"
ARCS = ("arc_id,from_node,to_node,length_m,road_class,reverse_arc_id\n"
        "0,0,1,100,primary,1\n1,1,0,100,primary,0\n2,1,2,100,tertiary,-1\n")


def test_load_from_text():
    net = network_from_csv_text(NODES, ARCS)
    assert net.n_nodes == 3 and net.n_arcs == 3
    assert net.arc(2).road_class == "tertiary"
    assert list(net.arc_canonical) == [0, 0, 2]
    assert net.adjacency[1] == (1, 2)


@pytest.mark.parametrize(
    "arcs, message",
    [
        ("0,0,1,100,primary,-1\n0,1,2,100,primary,-1\n", "duplicate arc"),
        ("0,0,9,100,primary,-1\n", "missing node"),
        ("0,0,0,100,primary,-1\n", "self-loop"),
        ("0,0,1,0,primary,-1\n", "nonpositive length"),
        ("0,0,1,100,highway,-1\n", "unknown road class"),
        ("0,0,1,100,primary,1\n1,1,2,100,primary,0\n", "inconsistent reverse"),
    ],
)
def test_invalid_networks(arcs, message):
    with pytest.raises(NetworkError, match=message):
        network_from_csv_text(NODES, ARCS.splitlines()[0] + "\n" + arcs)


def test_parse_error_reports_line():
    bad = ARCS + "3,2,x,100,primary,-1\n"
    with pytest.raises(NetworkError, match="line 5"):
        network_from_csv_text(NODES, bad)


def test_roundtrip(tmp_path, grid3):
    write_network(grid3, tmp_path / "n.csv", tmp_path / "a.csv")
    back = load_network(tmp_path / "n.csv", tmp_path / "a.csv")
    assert back.nodes == grid3.nodes and back.arcs == grid3.arcs


def test_path_helpers(line_net):
    assert line_net.path_nodes((0, 2, 4)) == [0, 1, 2, 3]
    assert line_net.path_nodes((), start=2) == [2]
    assert line_net.is_valid_path((0, 2), 0, 2)
    assert not line_net.is_valid_path((0, 4), 0, 3)
    assert not line_net.is_valid_path((0, 1, 0), 0, 1)
    assert line_net.path_length((0, 2, 4)) == 300.0


def test_shortest_path_basics(diamond_net):
    w = np.ones(4)
    assert shortest_path(diamond_net, w, 0, 3) == ((0, 1), 2.0)  # lexicographic tie-break
    w[0] = 5.0
    assert shortest_path(diamond_net, w, 0, 3) == ((2, 3), 2.0)
    assert shortest_path(diamond_net, w, 3, 0) == (None, math.inf)
    assert shortest_path(diamond_net, w, 1, 1) == ((), 0.0)
    with pytest.raises(ValueError):
        shortest_path(diamond_net, -w, 0, 3)
    with pytest.raises(KeyError):
        shortest_path(diamond_net, w, 0, 99)


def brute_shortest(net, w, s, t):
    best = None
    for p in simple_paths(net, s, t):
        c = sum(w[net.arc_pos[a]] for a in p)
        if best is None or (c, p) < best:
            best = (c, p)
    return best


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=24, max_size=24), st.integers(0, 8), st.integers(0, 8))
def test_shortest_path_matches_enumeration(wlist, s, t):
    net = grid_network(3, 3, 100.0)
    w = np.array(wlist, dtype=float)
    path, cost = shortest_path(net, w, s, t)
    if s == t:
        assert path == ()
        return
    c, p = brute_shortest(net, w, s, t)
    assert cost == pytest.approx(c)
    assert path == p
    dist, pred = shortest_path_tree(net, w, s)
    assert dist[net.node_pos[t]] == pytest.approx(c)
    assert tree_path(net, pred, t) == p
    to_t = time_to_target_map(net, w, t)
    assert to_t[net.node_pos[s]] == pytest.approx(c)


def test_tree_unreachable(diamond_net):
    dist, pred = shortest_path_tree(diamond_net, np.ones(4), 3)
    assert np.isinf(dist[0]) and dist[3] == 0
    assert tree_path(diamond_net, pred, 0) == ()


def test_enumerate_local_routes(grid3):
    routes = enumerate_local_routes(grid3, 0, 4, K=2)
    assert len(routes) == 2 and routes == sorted(routes)
    for r in routes:
        assert grid3.is_valid_path(r, 0, 4)
    assert len(enumerate_local_routes(grid3, 0, 4, K=4)) == 4  # two direct, two around the rim
    blocked = enumerate_local_routes(grid3, 0, 4, K=2, forbidden_nodes=[1])
    assert all(1 not in grid3.path_nodes(r)[1:-1] for r in blocked) and len(blocked) == 1
    with pytest.raises(ValueError):
        enumerate_local_routes(grid3, 0, 4, K=0)
    with pytest.raises(ValueError):
        enumerate_local_routes(grid3, 4, 4, K=2)


def test_route_table_agrees_with_enumeration(grid3):
    K = 3
    start_ptr, ends, arcs, lens = local_route_table(grid3, K)
    for u, v in itertools.permutations(range(grid3.n_nodes), 2):
        rows = [r for r in range(start_ptr[u], start_ptr[u + 1]) if ends[r] == v]
        got = sorted(tuple(int(grid3.arc_ids[a]) for a in arcs[r, : lens[r]]) for r in rows)
        want = enumerate_local_routes(grid3, int(grid3.node_ids[u]), int(grid3.node_ids[v]), K)
        assert got == want
        if rows:
            assert rows == list(range(rows[0], rows[-1] + 1))  # contiguous run


def test_nearest_queries(line_net):
    assert nearest_node(line_net, 149, 30) == 1
    assert nearest_node(line_net, 150, 0) == 1  # tie goes to smaller id
    assert nearest_arc(line_net, 150, 10) == 2
    assert nearest_arc(line_net, 100, 5) == 0  # tie between segments
    net = RoadNetwork([Node(0, 0, 0), Node(1, 10, 0)], [Arc(7, 0, 1, 10.0, "primary", 8),
                                                          Arc(8, 1, 0, 10.0, "primary", 7)])
    assert nearest_arc(net, 5, 1) == 7
