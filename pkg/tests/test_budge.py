import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from arctime.budge import SCALE_FLOOR, BinModel, _tie_aware_cuts, fit_budge_bins, fit_t, trip_distances
from arctime.data_io import Trip


def test_fit_t_matches_scipy_mle():
    y = stats.t(5.0, loc=3.0, scale=0.4).rvs(size=600, random_state=np.random.default_rng(0))
    loc, scale, nu = fit_t(y)
    ours = stats.t.logpdf(y, nu, loc, scale).sum()
    ref = stats.t.fit(y)
    theirs = stats.t.logpdf(y, *ref).sum()
    assert ours >= theirs - 1e-3  # at least as good as scipy's generic optimiser
    assert loc == pytest.approx(ref[1], abs=0.02)
    assert scale == pytest.approx(ref[2], rel=0.05)


def test_fit_t_degenerate():
    assert fit_t([2.0, 2.0, 2.0]) == (2.0, SCALE_FLOOR, 100.0)
    with pytest.raises(ValueError):
        fit_t([])


@given(st.lists(st.integers(1, 15), min_size=30, max_size=400), st.integers(1, 12), st.integers(1, 40))
def test_tie_aware_cuts(values, n_bins, min_per_bin):
    sd = np.sort(np.array(values, dtype=float)) * 200.0
    cuts = _tie_aware_cuts(sd, n_bins, min_per_bin)
    assert cuts == sorted(set(cuts)) and len(cuts) <= n_bins - 1
    for c in cuts:
        assert sd[c - 1] < sd[c]  # never splits equal distances
    sizes = np.diff([0, *cuts, sd.size])
    if len(sizes) > 1:
        assert sizes.min() >= min_per_bin


def grid_trips(net, n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        s, t = rng.choice(net.n_nodes, 2, replace=False)
        out.append(Trip(k, int(s), int(t), 0.0, float(rng.uniform(30, 300))))
    return out


def test_fit_bins_invariants(small_scenario, tmp_path):
    trips = grid_trips(small_scenario.net, 400, 1)
    b = fit_budge_bins(small_scenario.net, trips, n_bins=5, min_per_bin=30)
    assert np.all(np.diff(b.edges) > 0) and np.all(np.diff(b.center) > 0)
    assert b.count.sum() == 400 and b.count.min() >= 30
    assert np.all(b.scale > 0) and np.all(b.dof > 0)
    b.save(tmp_path / "b.csv")
    back = BinModel.load(tmp_path / "b.csv")
    np.testing.assert_array_equal(back.location, b.location)
    np.testing.assert_array_equal(back.center, b.center)
    assert back.point_estimate(700.0) == b.point_estimate(700.0)


def test_fit_bins_too_few(small_scenario, caplog):
    with pytest.raises(ValueError):
        fit_budge_bins(small_scenario.net, grid_trips(small_scenario.net, 20, 0))
    b = fit_budge_bins(small_scenario.net, grid_trips(small_scenario.net, 90, 0))
    assert b.n_bins < 10 and "instead of 10" in caplog.text


def test_trip_distances(line_net):
    d = trip_distances(line_net, [Trip(1, 0, 3, 0, 1), Trip(2, 3, 1, 0, 1)])
    np.testing.assert_allclose(d, [300.0, 200.0])


def two_bin_model():
    c = np.array([1000.0, 2000.0])
    return BinModel(np.array([500.0, 1500.0, 2500.0]), c, np.log([100.0, 200.0]), np.array([0.2, 0.3]),
                    np.array([5.0, 50.0]), np.array([40, 40]))


def test_quantile_interpolation():
    b = two_bin_model()
    assert b.point_estimate(1000.0) == pytest.approx(100.0)
    assert b.point_estimate(1500.0) == pytest.approx(150.0)
    assert b.point_estimate(100.0) == pytest.approx(100.0)  # clamped below the first centre
    q = b.quantile(2000.0, [0.025, 0.975])
    want = np.exp(math.log(200.0) + 0.3 * stats.t(50.0).ppf([0.025, 0.975]))
    np.testing.assert_allclose(q, want)


@settings(max_examples=30, deadline=None)
@given(st.floats(500.0, 2500.0), st.floats(0.01, 0.99))
def test_prob_within_inverts_quantile(d, p):
    b = two_bin_model()
    assert b.prob_within(d, b.quantile(d, p)) == pytest.approx(p, abs=1e-6)


def test_prob_within_extremes():
    b = two_bin_model()
    assert b.prob_within(2000.0, 1e-3) == 0.0  # below the lowest tabulated quantile
    assert b.prob_within(2000.0, 1e9) == 1.0
    assert b.prob_within(1000.0, 1e-3) == pytest.approx(0.0, abs=1e-6)  # heavy t tail
    assert b.prob_within(1000.0, 1e9) == pytest.approx(1.0, abs=1e-6)
