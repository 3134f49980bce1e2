import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from arctime.data_io import Trip
from arctime.model import (
    ArcParams,
    GpsNoise,
    Hyperparams,
    default_hyperparams,
    gps_loglik,
    log_prior_params,
    lognormal_logpdf,
    path_log_prior_unnorm,
    theta,
    trajectory_at,
    trip_loglik,
)

from .conftest import reading


def test_theta_is_lognormal_mean():
    mu, s2 = 2.0, 0.3
    assert theta(ArcParams(mu, s2)) == pytest.approx(stats.lognorm(math.sqrt(s2), scale=math.exp(mu)).mean())


def test_lognormal_logpdf_matches_scipy():
    x = np.array([0.5, 3.0, 40.0])
    want = stats.lognorm(math.sqrt(0.4), scale=math.exp(1.2)).logpdf(x)
    np.testing.assert_allclose(lognormal_logpdf(x, 1.2, 0.4), want, rtol=1e-12)


def test_path_prior(line_net):
    th = np.arange(1.0, 7.0)
    assert path_log_prior_unnorm(line_net, (0, 2, 4), th, 0.1) == pytest.approx(-0.1 * (1 + 3 + 5))
    assert path_log_prior_unnorm(line_net, (), th, 0.1) == 0.0


def brute_position(net, path, times, t):
    """Independent walk along the path: constant speed per arc."""
    elapsed = 0.0
    for k, (a, dt) in enumerate(zip(path, times)):
        if t < elapsed + dt or k == len(path) - 1:
            arc = net.arc(a)
            f = min((t - elapsed) / dt, 1.0)
            n0, n1 = net.node(arc.from_node), net.node(arc.to_node)
            return n0.x + f * (n1.x - n0.x), n0.y + f * (n1.y - n0.y), arc.length / dt
        elapsed += dt


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.0, 60.0), min_size=3, max_size=3), st.floats(0.0, 1.0))
def test_trajectory_matches_walk(times, frac):
    from arctime.simulator import grid_network

    net = grid_network(3, 3, 100.0)
    path = (0, 4, 8)  # 0 -> 1 -> 2 -> 5
    assert net.is_valid_path(path, 0, 5)
    t = frac * sum(times)
    got = trajectory_at(net, path, times, t)
    np.testing.assert_allclose(got, brute_position(net, path, times, t), atol=1e-9)


def test_trajectory_boundaries(line_net):
    x, y, sp = trajectory_at(line_net, (0, 2), [10.0, 20.0], 10.0)
    assert (x, y, sp) == pytest.approx((100.0, 0.0, 5.0))  # boundary belongs to the later arc
    assert trajectory_at(line_net, (0, 2), [10.0, 20.0], 30.0)[:2] == pytest.approx((200.0, 0.0))
    with pytest.raises(ValueError):
        trajectory_at(line_net, (0, 2), [10.0, 20.0], 31.0)
    with pytest.raises(ValueError):
        trajectory_at(line_net, (0, 2), [10.0], 1.0)


def test_gps_loglik_oracle():
    cov = np.array([[120.0, 30.0], [30.0, 80.0]])
    noise = GpsNoise(cov, 0.02)
    g = reading(1, 0, 5.0, 13.0, -4.0, 9.0)
    got = gps_loglik(g, (10.0, 1.0, 10.0), noise)
    want = stats.multivariate_normal([10.0, 1.0], cov).logpdf([13.0, -4.0])
    want += stats.norm(math.log(10.0) - 0.01, math.sqrt(0.02)).logpdf(math.log(9.0))
    assert got == pytest.approx(want, rel=1e-12)
    slow = reading(1, 0, 5.0, 10.0, 1.0, 0.0)
    floored = gps_loglik(slow, (10.0, 1.0, 10.0), noise, speed_floor=2.0)
    assert floored == pytest.approx(gps_loglik(reading(1, 0, 5.0, 10.0, 1.0, 2.0), (10.0, 1.0, 10.0), noise, 2.0))


def test_noise_validation():
    with pytest.raises(ValueError):
        GpsNoise(np.array([[1.0, 2.0], [0.0, 1.0]]), 0.1)
    with pytest.raises(ValueError):
        GpsNoise(np.array([[1.0, 2.0], [2.0, 1.0]]), 0.1)
    with pytest.raises(ValueError):
        GpsNoise(np.eye(2), 0.0)


def test_trip_loglik_oracle(line_net):
    rng = np.random.default_rng(3)
    mu = rng.normal(2.5, 0.2, 6)
    s2 = rng.uniform(0.1, 0.3, 6)
    params = ArcParams(mu, s2)
    noise = GpsNoise(np.diag([100.0, 100.0]), 0.01)
    hyper = default_hyperparams(line_net, C=0.05)
    times = np.array([12.0, 8.0, 15.0])
    readings = (reading(1, 0, 103.0, 50, 4, 8.0), reading(1, 1, 118.0, 220, -3, 7.0))
    trip = Trip(1, 0, 3, 100.0, 135.0, readings)
    path = (0, 2, 4)
    want = -0.05 * sum(theta(params)[[0, 2, 4]])
    want += sum(stats.lognorm(math.sqrt(s2[a]), scale=math.exp(mu[a])).logpdf(t) for a, t in zip(path, times))
    for g in readings:
        want += gps_loglik(g, brute_position(line_net, path, times, g.t - 100.0), noise)
    assert trip_loglik(line_net, trip, path, times, params, noise, hyper) == pytest.approx(want, rel=1e-10)
    with pytest.raises(ValueError):
        trip_loglik(line_net, trip, path, times + 1, params, noise, hyper)


def test_hyperparams():
    with pytest.raises(ValueError):
        Hyperparams(m=np.zeros(2), b1=2.0, b2=1.0)
    with pytest.raises(ValueError):
        Hyperparams(m=np.zeros(2), C=0.0)


def test_default_prior_means(line_net):
    h = default_hyperparams(line_net, {"secondary": 10.0})
    np.testing.assert_allclose(h.m, np.log(100.0 / 10.0))


def test_log_prior_params():
    h = Hyperparams(m=np.array([1.0, 2.0]), s2=0.5)
    p = ArcParams(np.array([1.5, 2.0]), np.array([0.25, 0.36]))
    want = stats.norm(1.0, math.sqrt(0.5)).logpdf(1.5) + stats.norm(2.0, math.sqrt(0.5)).logpdf(2.0)
    assert log_prior_params(p, 0.01, h) == pytest.approx(want)
    assert log_prior_params(ArcParams(p.mu, np.array([4.0, 0.36])), 0.01, h) == -math.inf
    assert log_prior_params(p, 1.0, h) == -math.inf
