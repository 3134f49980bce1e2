import numpy as np
import pytest

from arctime.data_io import GpsReading, Trip
from arctime.network import Arc, Node, RoadNetwork
from arctime.simulator import build_grid_scenario, grid_network, simulate_trips


def two_way(specs, coords, road_class="secondary"):
    """Build a network from undirected edges ``(u, v, length)``; arcs 2k, 2k+1."""
    nodes = [Node(i, x, y) for i, (x, y) in enumerate(coords)]
    arcs = []
    for k, spec in enumerate(specs):
        u, v, length = spec[:3]
        cls = spec[3] if len(spec) > 3 else road_class
        arcs.append(Arc(2 * k, u, v, length, cls, 2 * k + 1))
        arcs.append(Arc(2 * k + 1, v, u, length, cls, 2 * k))
    return RoadNetwork(nodes, arcs)


@pytest.fixture
def line_net():
    """0 - 1 - 2 - 3 along the x axis, 100 m apart."""
    return two_way([(0, 1, 100.0), (1, 2, 100.0), (2, 3, 100.0)], [(0, 0), (100, 0), (200, 0), (300, 0)])


@pytest.fixture
def diamond_net():
    """One-way diamond: 0->1->3 along the top, 0->2->3 along the bottom."""
    nodes = [Node(0, 0, 0), Node(1, 100, 100), Node(2, 100, -100), Node(3, 200, 0)]
    L = float(np.hypot(100, 100))
    arcs = [Arc(0, 0, 1, L, "secondary"), Arc(1, 1, 3, L, "secondary"),
            Arc(2, 0, 2, L, "secondary"), Arc(3, 2, 3, L, "secondary")]
    return RoadNetwork(nodes, arcs)


@pytest.fixture
def grid3():
    return grid_network(3, 3, 100.0)


@pytest.fixture(scope="session")
def small_scenario():
    return build_grid_scenario(4, 4, 200.0, regime="good", seed=11)


@pytest.fixture(scope="session")
def small_sims(small_scenario):
    return simulate_trips(small_scenario, 80, seed=12)


def make_trip(trip_id, s, t, duration, readings=()):
    return Trip(trip_id, s, t, 0.0, float(duration), tuple(readings))


def reading(trip_id, seq, t, x, y, speed):
    return GpsReading(trip_id, seq, float(t), float(x), float(y), float(speed))


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
