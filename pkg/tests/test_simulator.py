import math

import numpy as np
import pytest

from arctime.model import MPH
from arctime.network import simple_paths, time_to_target_map
from arctime.simulator import (
    REGIMES,
    SIGMA_RANGE,
    ClassPattern,
    build_grid_scenario,
    greedy_path,
    grid_network,
    read_true_params,
    read_true_paths,
    sample_gps_readings,
    simulate_trips,
    write_ground_truth,
)


def test_grid_structure():
    net = grid_network(3, 4, 150.0)
    assert net.n_nodes == 12
    assert net.n_arcs == 2 * (3 * 3 + 2 * 4)
    for a in net.arcs:
        rev = net.arc(a.reverse_arc)
        assert (rev.from_node, rev.to_node) == (a.to_node, a.from_node)
        assert a.length == 150.0
    with pytest.raises(ValueError):
        grid_network(1, 4, 100.0)


def test_class_pattern():
    p = ClassPattern(primary_every=4, secondary_every=2)
    assert [p.road_class(i) for i in range(5)] == ["primary", "tertiary", "secondary", "tertiary", "primary"]


def test_arc_params_ranges():
    sc = build_grid_scenario(5, 5, 200.0, seed=3)
    sd = np.sqrt(sc.sigma2)
    assert np.all((sd >= SIGMA_RANGE[0]) & (sd <= SIGMA_RANGE[1]))
    assert np.all((sc.speeds >= 20 * MPH) & (sc.speeds <= 40 * MPH))
    np.testing.assert_allclose(sc.theta, sc.net.arc_length / sc.speeds)  # mean time matches speed


def test_regime_constants():
    good, bad = build_grid_scenario(3, 3, 200.0, regime="good"), build_grid_scenario(3, 3, 200.0, regime="bad")
    assert good.gps_spacing == 250.0 and good.noise.zeta2 == 0.004
    assert bad.gps_spacing == 1000.0 and bad.noise.sigma_xy[0, 0] == 465.0
    assert set(REGIMES) == {"good", "bad"}


def test_greedy_path_descends(small_scenario):
    net, th = small_scenario.net, small_scenario.theta
    rng = np.random.default_rng(0)
    for s, t in [(0, 15), (12, 3), (5, 10)]:
        ttt = time_to_target_map(net, th, t)
        path = greedy_path(net, th, s, t, rng, ttt)
        assert net.is_valid_path(path, s, t)
        nodes = net.path_nodes(path)
        assert all(ttt[net.node_pos[b]] < ttt[net.node_pos[a]] for a, b in zip(nodes, nodes[1:]))


def test_logit_paths_follow_prior():
    sc = build_grid_scenario(3, 3, 200.0, seed=1)
    C = 0.02
    sims = simulate_trips(sc, 4000, seed=2, path_model="logit", C=C)
    pair = [s for s in sims if (s.trip.start_node, s.trip.end_node) == (0, 8)]
    paths = simple_paths(sc.net, 0, 8)
    cost = np.array([sc.theta[sc.net.arc_positions(p)].sum() for p in paths])
    prob = np.exp(-C * (cost - cost.min()))
    prob /= prob.sum()
    freq = np.array([sum(s.true_path == p for s in pair) for p in paths]) / len(pair)
    assert len(pair) > 40
    assert np.abs(freq - prob).max() < 4 * math.sqrt(0.25 / len(pair))


def test_trips_consistent(small_scenario, small_sims):
    net = small_scenario.net
    for s in small_sims:
        t = s.trip
        assert net.is_valid_path(s.true_path, t.start_node, t.end_node)
        assert t.duration == pytest.approx(s.true_times.sum())
        length = net.path_length(s.true_path)
        assert len(t.readings) == int(length / 250.0 + 1e-9)
        assert all(t.t_start <= g.t <= t.t_end for g in t.readings)


def test_by_time_readings(small_scenario, small_sims):
    st = small_sims[0]
    reads = sample_gps_readings(st, small_scenario, "by_time", 7.0, 0)
    assert len(reads) == int(st.trip.duration / 7.0)
    np.testing.assert_allclose([g.t for g in reads], 7.0 * np.arange(1, len(reads) + 1))
    with pytest.raises(ValueError):
        sample_gps_readings(st, small_scenario, "by_hour", 7.0, 0)


def test_gps_noise_statistics():
    sc = build_grid_scenario(2, 2, 200.0, seed=0)
    from arctime.data_io import Trip
    from arctime.simulator import SimulatedTrip

    # one 200 m arc driven in 20 s, sampled every 0.05 s: 400 readings
    st = SimulatedTrip(Trip(0, 0, 1, 0.0, 20.0), (0,), np.array([20.0]))
    reads = sample_gps_readings(st, sc, "by_time", 0.05, 1)
    t = np.array([g.t for g in reads])
    dx = np.array([g.x for g in reads]) - 10.0 * t
    assert np.var(dx) == pytest.approx(100.0, rel=0.2)
    lv = np.log([g.speed for g in reads])
    assert np.mean(lv) == pytest.approx(math.log(10.0) - 0.002, abs=0.01)
    assert np.var(lv) == pytest.approx(0.004, rel=0.2)


def test_determinism_and_truth_roundtrip(tmp_path, small_scenario):
    a = simulate_trips(small_scenario, 10, seed=5)
    b = simulate_trips(small_scenario, 10, seed=5)
    assert [x.trip for x in a] == [x.trip for x in b]
    write_ground_truth(small_scenario, a, tmp_path / "t.csv", tmp_path / "p.csv")
    paths = read_true_paths(tmp_path / "t.csv")
    for s in a:
        assert paths[s.trip_id][0] == s.true_path
        np.testing.assert_array_equal(paths[s.trip_id][1], s.true_times)
    ids, mu, s2 = read_true_params(tmp_path / "p.csv")
    np.testing.assert_array_equal(mu, small_scenario.mu)
    np.testing.assert_array_equal(ids, small_scenario.net.arc_ids)
