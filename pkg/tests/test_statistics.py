import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from lorentzgas import statistics as st
from lorentzgas.errors import LorentzGasError, ScheduleError
from lorentzgas.flight import sample_flight_arrays
from lorentzgas.schedule import geometric_schedule, spread_velocities
from lorentzgas.streams import stream


# ---------------------------------------------------------------- intervals

def test_wilson_near_zero_contains_zero():
    est = st.proportion_ci(0, 1000)
    assert est.method == "wilson" and est.contains(0.0) and est.hi < 0.01


@given(k=hst.integers(0, 500), extra=hst.integers(0, 500))
def test_proportion_in_unit_interval(k, extra):
    M = k + extra + 1
    est = st.proportion_ci(k, M)
    assert 0.0 <= est.estimate <= 1.0 and est.half_width >= 0.0


def test_halfwidth_shrinks_like_root_M():
    a = st.proportion_ci(300, 1000).half_width
    b = st.proportion_ci(1200, 4000).half_width
    assert a / b == pytest.approx(2.0, rel=0.01)


def test_hoeffding_halfwidth_solves_tail():
    d = st.hoeffding_halfwidth(2.0, 100, 0.05)
    assert 2 * math.exp(-d * d * 100 / (2 * 2.0**2)) == pytest.approx(0.05)


# ---------------------------------------------------------------- functionals

def test_functionals_bounded():
    rng = np.random.default_rng(0)
    z = np.cumsum(rng.normal(scale=3.0, size=(50, 101, 3)), axis=1)
    z[:, 0] = 0.0     # paths start at the origin
    for F in st.FUNCTIONALS.values():
        v = F(z)
        assert np.all(v >= F.lo - 1e-12) and np.all(v <= F.hi + 1e-12)
        assert F.cap == max(abs(F.lo), abs(F.hi))
    assert len(st.FUNCTIONALS) == 6


def test_wiener_reference_endpoint_oracles():
    """Endpoint functionals have closed forms under N(0, s2) coordinates, s2 = 2/3."""
    ref = st.wiener_reference(1.0, 20_000, 200)
    s2 = 2.0 / 3.0
    m, se = ref["cos_x_end"]
    assert abs(m - math.exp(-s2 / 2)) < 4 * se
    m, se = ref["gauss_end"]
    assert abs(m - (1 + 2 * s2) ** -1.5) < 4 * se


# ---------------------------------------------------------------- mismatch

def test_single_particle_short_horizon_no_mismatch():
    est = st.estimate_mismatch_probability(0.01, 0.5, 1000, 3, velocities=[[0, 0, 1.0]])
    assert est.p_hat.estimate == 0.0 and est.p_hat.contains(0.0)


def test_mismatch_rejects_duplicates_and_large_rT():
    with pytest.raises(LorentzGasError):
        st.estimate_mismatch_probability(0.1, 2.0, 10, 0, velocities=[[0, 0, 1.0]] * 2)
    with pytest.raises(ScheduleError):
        st.estimate_mismatch_probability(0.5, 10.0, 10, 0, N=2, beta=0.5)


def test_mismatch_flag_equals_direct_comparison():
    est = st.estimate_mismatch_probability(0.2, 4.0, 300, 5, velocities=spread_velocities(3, 0.5))
    assert all(rec["mismatch"] == rec["direct_mismatch"] for rec in est.records)
    assert 0 < est.p_hat.estimate < 1


def test_mismatch_deterministic_and_parallel_invariant():
    kw = dict(N=2, beta=0.5)
    a = st.estimate_mismatch_probability(0.1, 3.0, 40, 9, jobs=1, **kw)
    b = st.estimate_mismatch_probability(0.1, 3.0, 40, 9, jobs=2, **kw)
    assert a.records == b.records and a.summary() == b.summary()


def test_quenched_mode_shares_environment():
    est = st.estimate_mismatch_probability(0.1, 2.0, 5, 4, N=2, beta=0.5, quenched=True)
    assert {rec["env_seed"] for rec in est.records} == {4}


def test_linear_fit_exact_line():
    slope, icept, r2 = st.linear_fit_in_r([1, 2, 3], [2.0, 4.0, 6.0])
    assert slope == pytest.approx(2.0) and abs(icept) < 1e-12 and r2 == pytest.approx(1.0)


# ---------------------------------------------------------------- interference events

def dense_min(t, p, v, lo, hi, x, n=20001):
    s = np.linspace(lo, hi, n)[1:-1]
    k = np.searchsorted(t, s, side="right") - 1
    y = p[k] + (s - t[k])[:, None] * v[k]
    return np.linalg.norm(y - x, axis=1).min()


def test_point_path_min_matches_dense_sampling():
    t, p, v = sample_flight_arrays(stream(1, "pp"), 1.0, 5.0, 3)
    rng = np.random.default_rng(1)
    for q in range(3):
        for _ in range(4):
            x = rng.normal(size=3)
            lo, hi = sorted(rng.uniform(0, 5, 2))
            got = st._point_path_min(t[q], p[q], v[q], lo, hi, x)
            ref = dense_min(t[q], p[q], v[q], lo, hi, x)
            assert got <= ref + 1e-12 and ref - got < (hi - lo) / 10000


def test_event_decomposition_covers_Bij():
    ev, flags = st.estimate_event_probabilities(0.02, 10.0, 0.1, 20_000, 3, return_flags=True)
    assert ev.b_fired > 0 and ev.uncovered == 0
    assert np.all(~flags[:, 1] | flags[:, 2:].any(axis=1))


def test_A_event_scales_with_rT():
    fitted = []
    for r in (1e-3, 1e-4):
        for T in (10.0, 40.0):
            ev = st.estimate_event_probabilities(r, T, 0.1, 20_000, 12)
            fitted.append(ev.fitted["A_i"])
    assert max(fitted) / min(fitted) <= 10


# ---------------------------------------------------------------- Green bounds

def test_gamma_quadrature_far_field():
    q = st.gamma_ball_integral(5.0, 0.5)
    assert q == pytest.approx((math.pi / 6) * 0.24, rel=0.10)
    assert q == pytest.approx(st.far_field_gamma_integral(5.0, 0.5), rel=0.01)


def test_gamma_quadrature_against_monte_carlo():
    rng = np.random.default_rng(2)
    u = rng.normal(size=(400_000, 3))
    u *= (rng.random(400_000) ** (1 / 3) / np.linalg.norm(u, axis=1))[:, None]
    x = np.array([2.0, 0, 0]) + 1.2 * u
    mc = st.gamma(x).mean() * (4 / 3) * math.pi * 1.2**3
    assert st.gamma_ball_integral(2.0, 1.2) == pytest.approx(mc, rel=0.01)


def test_ball_containing_origin_rejected():
    with pytest.raises(ValueError):
        st.green_occupation((0.4, 0, 0), 0.5, 10, 0)
    with pytest.raises(ValueError):
        st.gamma_ball_integral(0.4, 0.5)


def test_shrinking_ball():
    res = [st.green_occupation((5.0, 0, 0), a, 40_000, 8) for a in (0.5, 0.3, 0.2)]
    visits = [g.visits.estimate for g in res]
    ints = [g.gamma_integral for g in res]
    ratios = [g.ratio for g in res]
    assert visits[0] > visits[1] > visits[2] and ints[0] > ints[1] > ints[2]
    assert max(ratios) / min(ratios) < 3


# ---------------------------------------------------------------- Donsker

def test_sup_functional_gap_shrinks_with_T():
    """Finite-T flights sit below the Brownian sup; the gap closes like T^-1/2."""
    gaps = []
    for T in (100.0, 1600.0):
        rep = st.donsker_test(1.0, T, 10_000, 4, wiener_paths=100_000)
        gaps.append(rep.functional_means["capped_sup"][0] - rep.wiener_means["capped_sup"][0])
    assert gaps[0] < 0 and abs(gaps[1]) < abs(gaps[0]) / 2


# ---------------------------------------------------------------- quenched pipeline

SMALL = geometric_schedule(3, 7)


def test_constant_functional_exact():
    tab = st.quenched_average_experiment(5, SMALL, {"c": st.constant_functional(0.7)},
                                         force=True, wiener_paths=100)
    for rec in tab.records:
        assert rec["x_avg"]["c"] == pytest.approx(0.7, abs=1e-12)
        assert rec["y_avg"]["c"] == pytest.approx(0.7, abs=1e-12)
    assert all(max(g[:3]) < 1e-12 for g in tab.gaps("c"))


def test_average_gap_bounded_by_mismatched_paths():
    """Each mismatched path moves an average by at most the functional's spread over N."""
    tab = st.quenched_average_experiment(5, SMALL, force=True, wiener_paths=100)
    for rec in tab.records:
        for name, F in st.FUNCTIONALS.items():
            gap = abs(rec["x_avg"][name] - rec["y_avg"][name])
            assert gap <= F.spread * rec["mismatched_paths"] / rec["N"] + 1e-12
            if rec["mismatched_paths"] == 0:
                assert gap == 0.0
    assert tab.chain_holds()


def test_quenched_refuses_inadmissible():
    with pytest.raises(ScheduleError):
        st.quenched_average_experiment(5, SMALL, wiener_paths=100)


def test_quenched_deterministic():
    a = st.quenched_average_experiment(6, SMALL, force=True, wiener_paths=100)
    b = st.quenched_average_experiment(6, SMALL, force=True, wiener_paths=100, jobs=2)
    assert a.records == b.records


def test_cap_separation_probability_form():
    """P(w < alpha) for N cap velocities against the N^2 (alpha/beta)^2 form."""
    rows = geometric_schedule(20, 24, N_power=1)
    fitted = []
    for row in rows:
        p = st.cap_separation_probability(row, 4000, 1).estimate
        fitted.append(p / (row.N**2 * (row.alpha / row.beta) ** 2))
    assert max(fitted) / min(fitted) < 2
