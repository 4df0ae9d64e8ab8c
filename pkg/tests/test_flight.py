import math

import numpy as np
import pytest
from scipy import stats

from lorentzgas import flight_covariance, sample_flight, sample_uniform_sphere
from lorentzgas.flight import make_flight, rescaled_flights, sample_flight_arrays
from lorentzgas.streams import stream


def test_uniform_sphere_norm_and_mean():
    u = sample_uniform_sphere(stream(1, "t"), 10**5)
    assert np.allclose(np.linalg.norm(u, axis=1), 1, atol=1e-12)
    # per-coordinate variance 1/3, so |mean| <= 3 sqrt(1/3) / sqrt(M) per coordinate
    assert np.all(np.abs(u.mean(axis=0)) <= 3 / math.sqrt(10**5) * math.sqrt(1 / 3) * math.sqrt(3))


def test_uniform_sphere_hat_box():
    u = sample_uniform_sphere(stream(2, "t"), 10**5)
    for a in range(3):
        assert stats.kstest(u[:, a], "uniform", args=(-1, 2)).pvalue > 0.01


def test_mean_gap_long_flight():
    p = sample_flight(stream(3, "t"), 1.0, [0, 0, 1.0], 1e4)
    g = p.gaps
    assert abs(g.mean() - 1.0) <= 3 / math.sqrt(len(g))


def test_gaps_exponential_ks():
    rate = 2.5
    p = sample_flight(stream(4, "t"), rate, [0, 0, 1.0], 4000 / rate)
    g = p.gaps[:10**4]
    assert len(g) > 3000
    assert stats.kstest(g, "expon", args=(0, 1 / rate)).pvalue > 0.01


def test_short_horizon_no_events():
    rng = stream(5, "t")
    # an EXP(1) gap exceeds 1e-6 with overwhelming probability
    p = sample_flight(rng, 1.0, [1.0, 0, 0], 1e-6)
    assert p.n_events == 0 and np.allclose(p.position(1e-6), [1e-6, 0, 0])


def test_virtual_centre_formula():
    v = [[1.0, 0, 0], [0, 1.0, 0]]
    f = make_flight(v[0], 5.0, 1.0, [0.0, 2.0], v, r=0.1)
    expect = f.positions[1] + 0.1 * (np.array(v[0]) - v[1]) / math.sqrt(2)
    assert np.allclose(f.centres[1], expect, atol=1e-12)


def test_covariance_limits():
    assert flight_covariance(1.0, 1e-6) == pytest.approx(1e-12 / 3, rel=1e-5)
    assert flight_covariance(1.0, 100.0) == pytest.approx((2 / 3) * (99 + math.exp(-100)))
    assert flight_covariance(2.0, 1e7) / 1e7 == pytest.approx(2 / (3 * 2.0), rel=1e-6)


def test_covariance_series_branch_continuous():
    x = 1e-4
    below = flight_covariance(1.0, x * (1 - 1e-9))
    above = flight_covariance(1.0, x * (1 + 1e-9))
    assert below == pytest.approx(above, rel=1e-6)


def test_covariance_monte_carlo():
    from lorentzgas.flight import eval_on_grid
    grid = np.array([0.0, 100.0])
    ends = []
    for block in range(5):
        t, p, v = sample_flight_arrays(stream(6, "t", block), 1.0, 100.0, 20_000)
        ends.append(eval_on_grid(t, p, v, grid)[:, -1])
    end = np.concatenate(ends)
    # pooled over the three coordinates
    assert (end**2).mean() == pytest.approx(flight_covariance(1.0, 100.0), rel=0.01)


def test_rescaled_shape_and_start():
    z = rescaled_flights(stream(7, "t"), 1.0, 10.0, 5, n_steps=50)
    assert z.shape == (5, 51, 3) and np.all(z[:, 0] == 0)
