"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Stated tolerances and runtime limits are checked as written.  The lines are
repeated in the pytest terminal summary under "acceptance criteria".
"""

import json
import math
import time

import numpy as np
from scipy import stats

from conftest import record
from lorentzgas import cli
from lorentzgas import statistics as st
from lorentzgas.coupling import first_divergence, mismatch_times, sigma_identities_hold
from lorentzgas.schedule import check_schedule, geometric_schedule, sample_cap, spread_velocities
from lorentzgas.streams import derive_seed, stream

SEED = 7


def _replica(eps, T, N, seed, m):
    v = np.atleast_2d(sample_cap(stream(seed, "v0", m), beta=math.pi, size=N))
    return st.coupled_replica(eps, T, v, derive_seed(seed, "env", m), seed, m)


def _events_before(path, t):
    k = path.times < t
    return path.times[k], path.velocities[k]


# ---------------------------------------------------------------- 1


def test_coupling_identity():
    t0 = time.perf_counter()
    grid = [(0.2, 4.0, 3), (0.1, 8.0, 4), (0.05, 10.0, 5)]
    per_point = 334
    n = bad_sigma = bad_events = mismatched = 0
    for eps, T, N in grid:
        for m in range(per_point):
            ens = _replica(eps, T, N, SEED, m)
            s1, s2, s3, s4, s = mismatch_times(ens)
            n += 1
            if not sigma_identities_hold(ens, tol=1e-9):
                bad_sigma += 1
            mismatched += math.isfinite(s)
            fd = first_divergence(ens)
            same = fd == s or abs(fd - s) <= 1e-9
            for x, y in zip(ens.lorentz, ens.flights):
                # times agree to 1e-9, so an event at sigma is cut on both sides
                tx, vx = _events_before(x, s - 1e-9)
                ty, vy = _events_before(y, s - 1e-9)
                same &= len(tx) == len(ty) and np.allclose(tx, ty, atol=1e-9, rtol=0) \
                    and np.allclose(vx, vy, atol=1e-9, rtol=0)
            bad_events += not same
    secs = time.perf_counter() - t0
    ok = n >= 1000 and bad_sigma == 0 and bad_events == 0 and secs <= 300
    record(1, "coupling identity", ok,
           f"replicas={n} sigma_violations={bad_sigma} event_violations={bad_events} "
           f"finite_sigma={mismatched}", secs)
    assert ok


# ---------------------------------------------------------------- 2


def test_marginal_flight_law():
    t0 = time.perf_counter()
    eps, T, S, N, replicas, M = 0.1, 20.0, 10.0, 2, 2000, 10_000
    gaps, dirs, incr = [], [], []
    mismatched = 0
    for m in range(replicas):
        ens = _replica(eps, T, N, SEED + 1, m)
        mismatched += ens.mismatch
        for f in ens.flights:
            t = np.append(f.times, np.inf)
            # a gap is kept when it starts before S: the choice does not look at its length
            start = t[:-1] < S
            gaps.extend((t[1:] - t[:-1])[start & (t[1:] <= T)])
            dirs.extend(f.velocities[1:][f.times[1:] < S])
        incr.append([f.position(T) - f.position(0.0) for f in ens.flights])
    gaps = np.asarray(gaps[:M])
    dirs = np.asarray(dirs[:M])
    incr = np.asarray(incr)
    rate = ens.flights[0].rate
    p_gap = stats.kstest(gaps, "expon", args=(0, 1 / rate)).pvalue
    p_z = stats.kstest(dirs[:, 2], "uniform", args=(-1, 2)).pvalue
    phi = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * math.pi)
    p_phi = stats.kstest(phi, "uniform", args=(0, 2 * math.pi)).pvalue
    rho = [np.corrcoef(incr[:, 0, a], incr[:, 1, a])[0, 1] for a in range(3)]
    bound = 3 / math.sqrt(replicas)
    secs = time.perf_counter() - t0
    ok = (len(gaps) == M and len(dirs) == M and min(p_gap, p_z, p_phi) > 0.01
          and max(map(abs, rho)) <= bound)
    record(2, "marginal flight law", ok,
           f"KS gap p={p_gap:.3f} cos p={p_z:.3f} azimuth p={p_phi:.3f} "
           f"max|rho|={max(map(abs, rho)):.4f}<= {bound:.4f} mismatched_replicas={mismatched}",
           secs)
    assert ok


# ---------------------------------------------------------------- 3


def test_early_stopping_form():
    t0 = time.perf_counter()
    M = 5000
    line = [st.estimate_mismatch_probability(eps, 4.0, M, SEED,
                                             velocities=spread_velocities(3, 0.5))
            for eps in (0.1, 0.05, 0.025, 0.0125)]
    p = [e.p_hat.estimate for e in line]
    monotone = all(a >= b for a, b in zip(p, p[1:]))
    grid = [st.estimate_mismatch_probability(0.05, T, M, SEED + N,
                                             velocities=spread_velocities(N, 0.5))
            for T in (2.0, 4.0, 8.0) for N in (2, 3, 4)]
    spread = st.fitted_constant_spread(grid)
    secs = time.perf_counter() - t0
    ok = monotone and spread <= 10 and secs <= 1800
    record(3, "early-stopping functional form", ok,
           "p_hat along eps grid=" + ",".join(f"{x:.4f}" for x in p)
           + f" fitted C spread over (T,N) grid={spread:.2f}", secs)
    assert ok


# ---------------------------------------------------------------- 4


def test_interference_decomposition():
    t0 = time.perf_counter()
    points = [st.estimate_event_probabilities(r, 10.0, w, 200_000, SEED)
              for r in (0.01, 0.005) for w in (0.05, 0.1, 0.2)]
    uncovered = sum(e.uncovered for e in points)
    fired = sum(e.b_fired for e in points)
    spreads = {}
    for k in ("B_I", "B_II", "B_III", "B_IV"):
        c = [e.fitted[k] for e in points]
        spreads[k] = max(c) / min(c) if min(c) > 0 else math.inf
    secs = time.perf_counter() - t0
    ok = fired > 0 and uncovered == 0 and max(spreads.values()) <= 10
    record(4, "interference decomposition", ok,
           f"B_ij fired={fired} uncovered={uncovered} spreads="
           + ",".join(f"{k}:{v:.2f}" for k, v in spreads.items()), secs)
    assert ok


# ---------------------------------------------------------------- 5


def test_green_bounds():
    t0 = time.perf_counter()
    res = [st.green_occupation((R, 0.0, 0.0), 0.5, 50_000, SEED) for R in (2.0, 5.0, 10.0)]
    C = max(g.visits.hi / g.gamma_integral for g in res)
    below = all(g.visits.estimate <= C * g.gamma_integral for g in res)
    tight = max(C * g.gamma_integral / g.visits.estimate for g in res)
    quad = [abs(g.gamma_integral / st.far_field_gamma_integral(g.R, g.a) - 1) for g in res]
    secs = time.perf_counter() - t0
    ok = below and tight <= 10 and max(quad) <= 0.10
    record(5, "Green bounds", ok,
           f"C={C:.3f} ratios=" + ",".join(f"{g.ratio:.3f}" for g in res)
           + f" max C*int/visits={tight:.2f} quad vs far-field max rel={max(quad):.4f}", secs)
    assert ok


# ---------------------------------------------------------------- 6


def test_donsker():
    t0 = time.perf_counter()
    rep = st.donsker_test(1.0, 100.0, 10_000, SEED)
    ctrl = st.donsker_test(1.0, 0.1, 10_000, SEED + 1)
    secs = time.perf_counter() - t0
    ok = min(rep.ks_pvalues) > 0.01 and min(ctrl.ks_pvalues) < 0.01 and secs <= 600
    record(6, "Donsker endpoint", ok,
           "KS p T=100: " + ",".join(f"{x:.3f}" for x in rep.ks_pvalues)
           + f" control T=0.1 min p={min(ctrl.ks_pvalues):.1e}", secs)
    assert ok


# ---------------------------------------------------------------- 7


def test_quenched_pipeline():
    t0 = time.perf_counter()
    rows = geometric_schedule(8, 16)
    tab = st.quenched_average_experiment(SEED, rows)
    within = tab.final_within_envelope()
    spread = tab.fitted_spread()
    C = tab.fitted_C()
    consistent = all(f <= C * b + 1e-15 for *_, f, b in tab.mismatch_rows())
    secs = time.perf_counter() - t0
    ok = (check_schedule(rows).admissible and all(within.values()) and tab.chain_holds()
          and consistent and spread <= 10 and secs <= 3600)
    last = {k: tab.gaps(k)[-1] for k in tab.wiener}
    record(7, "quenched pipeline", ok,
           f"final row within envelope {sum(within.values())}/{len(within)} "
           + " ".join(f"{k}:{g[0]:.3f}<={g[3]:.3f}" for k, g in last.items())
           + f" mismatched paths per row={[r['mismatched_paths'] for r in tab.records]}"
           f" fitted C={C:.4f} spread={spread:.2f}", secs)
    assert ok


# ---------------------------------------------------------------- 8

CONFIGS = {
    "simulate": ["--eps", "0.1,0.05", "--T", "5", "--N", "2", "--dump"],
    "couple": ["--eps", "0.2", "--T", "3", "--N", "3", "--replicas", "20", "--dump"],
    "mismatch": ["--eps", "0.1", "--T", "3", "--N", "2", "--beta", "0.5", "--replicas", "200"],
    "events": ["--r", "0.01", "--T", "5", "--w", "0.2", "--replicas", "20000"],
    "green": ["--R", "2,5", "--replicas", "400", "--horizon", "50"],
    "donsker": ["--T", "20", "--replicas", "2000", "--wiener-paths", "2000", "--n-steps", "200"],
    "quenched": ["--n-min", "3", "--n-max", "7", "--force", "--wiener-paths", "2000"],
}


def _snapshot(out):
    files = {f.name: f.read_bytes() for f in sorted(out.iterdir()) if f.name != "manifest.json"}
    man = json.loads((out / "manifest.json").read_text())
    man.pop("wall_time_s")
    return files, man


def test_determinism(tmp_path):
    t0 = time.perf_counter()
    failures = []
    for exp, args in CONFIGS.items():
        snaps = []
        for tag, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
            out = tmp_path / f"{exp}_{tag}"
            code = cli.main([exp, "--seed", "11", "--jobs", jobs, "--out", str(out), *args])
            if code != 0:
                failures.append(f"{exp}:exit{code}")
                break
            snaps.append(_snapshot(out))
        if len(snaps) == 3 and not snaps[0] == snaps[1] == snaps[2]:
            failures.append(exp)
    secs = time.perf_counter() - t0
    ok = not failures
    record(8, "determinism", ok,
           f"experiments={len(CONFIGS)} runs each: jobs 1, 1, 2; differing={failures or 'none'}",
           secs)
    assert ok
