"""Coupling of Lorentz trajectories with independent Markovian flights.

Given N Lorentz paths in one environment, the flights are built by

* following every collision with a *fresh* scatterer (first visit by any of
  the N particles) and ignoring recollisions;
* inserting a scattering at each auxiliary clock tick whose proposed virtual
  scatterer would overlap the r-tube of the past Lorentz paths (shadowed).

Stopping times ``sigma1..sigma4`` locate the first recollision, the first
shadowed scattering and their flight-only counterparts; ``sigma`` is the
first time the two families of paths differ.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ._geometry import SegmentIndex, brute_tube_distance, segments_of
from .errors import DegenerateDirectionError
from .flight import FlightPath, sample_uniform_sphere

CLOCK_TIE = 1e-12
FRESHNESS_RTOL = 1e-6


@dataclass(frozen=True)
class FreshnessFlag:
    j: int
    k: int
    a: int
    centre: np.ndarray


@dataclass(frozen=True)
class ShadowEvent:
    j: int
    l: int
    time: float
    proposal: np.ndarray
    b: int


@dataclass
class CoupledEnsemble:
    lorentz: list
    flights: list
    a: list           # a[j][k], k = 0..n_events (a[j][0] = 1)
    clock_times: list
    proposals: list
    b: list
    sigma1: float
    sigma2: float
    sigma3: float
    sigma4: float
    sigma: float
    T: float
    r: float
    rate: float

    @property
    def N(self):
        return len(self.lorentz)

    @property
    def freshness(self):
        return [FreshnessFlag(j, k, int(self.a[j][k]), p.centres[k])
                for j, p in enumerate(self.lorentz) for k in range(len(p.times))]

    @property
    def shadow_events(self):
        return [ShadowEvent(j, l + 1, float(self.clock_times[j][l]), self.proposals[j][l],
                            int(self.b[j][l]))
                for j in range(self.N) for l in range(len(self.clock_times[j]))]

    @property
    def mismatch(self):
        return self.sigma < self.T


def _virtual(points, pre, post, r):
    """Centres ``x + r (pre - post)/|pre - post|`` row-wise (shared by X and Y sides)."""
    diff = pre - post
    nrm = np.linalg.norm(diff, axis=1, keepdims=True)
    if np.any(nrm == 0.0):
        raise DegenerateDirectionError("proposed velocity equals the current one")
    return points + r * diff / nrm


def _positions_at(path, k, t):
    """``X(t)`` on segment ``k``, evaluated the same way wherever it is needed."""
    return path.positions[k] + (t - path.times[k])[:, None] * path.velocities[k]


def tube_distance(paths, point, t_limit, delta=None):
    """Exact distance from ``point`` to all paths restricted to ``[0, t_limit]``.

    ``delta = (j, k)`` marks segment ``k`` of path ``j`` as the one the query
    sits at the end of; it is dropped when its closest approach is only
    reached in the limit ``s -> t_limit``.
    """
    if t_limit < 0:
        raise ValueError("t_limit must be non-negative")
    horizon = max(p.T for p in paths)
    p0, d, t0, t1, _ = segments_of(paths, horizon)
    delta_seg = -1
    if delta is not None:
        j, k = delta
        delta_seg = sum(len(p.times) for p in paths[:j]) + k
    return brute_tube_distance(p0, d, t0, t1, np.asarray(point, float), t_limit, delta_seg)


def freshness(paths, j, k, rtol=FRESHNESS_RTOL):
    """Geometric freshness of collision ``k`` of path ``j``.

    ``a = 0`` when some path came within ``r (1 + rtol)`` of the scatterer
    centre strictly before the collision; the tolerance absorbs roundoff at
    the point where an earlier visit touched the sphere.
    """
    p = paths[j]
    if k == 0:
        return FreshnessFlag(j, 0, 1, np.full(3, np.nan))
    if not 1 <= k < len(p.times):
        raise IndexError(f"path {j} has no collision {k}")
    centre = _virtual(p.positions[k:k + 1], p.velocities[k - 1:k], p.velocities[k:k + 1],
                      p.r)[0]
    dist = tube_distance(paths, centre, p.times[k], delta=(j, k - 1))
    return FreshnessFlag(j, k, int(dist > p.r * (1.0 + rtol)), centre)


def shadow_indicator(paths, j, t, v, V_current=None):
    """1 if a virtual scatterer turning path ``j`` into ``v`` at ``t`` overlaps the past tube."""
    p = paths[j]
    v = np.asarray(v, float)
    k = int(p.segment_index(t))
    V = p.velocities[k] if V_current is None else np.asarray(V_current, float)
    if np.array_equal(v, V):
        raise DegenerateDirectionError("v equals the current velocity")
    x = _positions_at(p, np.array([k]), np.array([float(t)]))
    centre = _virtual(x, V[None], v[None], p.r)[0]
    return int(tube_distance(paths, centre, t, delta=(j, k)) <= p.r)


def recollision_flags(paths):
    """``a[j][k]`` from scatterer identity: 1 on the first visit in time, 0 afterwards."""
    visits = []
    for j, p in enumerate(paths):
        for k in range(1, len(p.times)):
            visits.append((p.times[k], j, k, tuple(int(c) for c in p.scatterers[k])))
    visits.sort(key=lambda v: (v[0], v[1]))
    seen = set()
    a = [np.ones(len(p.times), np.int8) for p in paths]
    for _, j, k, sid in visits:
        if sid in seen:
            a[j][k] = 0
        else:
            seen.add(sid)
    return a


def _distance_to_sorted(x, ref):
    if len(ref) == 0 or len(x) == 0:
        return np.full(len(x), np.inf)
    i = np.searchsorted(ref, x)
    lo = ref[np.clip(i - 1, 0, len(ref) - 1)]
    hi = ref[np.clip(i, 0, len(ref) - 1)]
    return np.minimum(np.abs(x - lo), np.abs(x - hi))


def sample_clocks(rng, rate, T, avoid):
    """Clock ticks (rate ``rate``) in ``(0, T]`` and their uniform proposals.

    A tick within ``CLOCK_TIE`` of a time in ``avoid`` has its gap redrawn.
    """
    avoid = np.asarray(avoid, float)
    n = int(rate * T + 6.0 * math.sqrt(rate * T) + 8)
    gaps = rng.exponential(1.0 / rate, n)
    while gaps.sum() <= T:
        gaps = np.append(gaps, rng.exponential(1.0 / rate, n))
    while True:
        times = np.cumsum(gaps)
        times = times[times <= T]
        bad = np.flatnonzero(_distance_to_sorted(times, avoid) < CLOCK_TIE)
        if len(bad) == 0:
            break
        gaps[bad[0]] = rng.exponential(1.0 / rate)
        while gaps.sum() <= T:
            gaps = np.append(gaps, rng.exponential(1.0 / rate, n))
    proposals = sample_uniform_sphere(rng, len(times)).reshape(-1, 3)
    return times, proposals


def _build_flight(path, a, clock_t, clock_pos, proposals, b, rate, T, r):
    """The three-case velocity rule for one particle."""
    events = [(float(path.times[k]), 0, k) for k in range(1, len(path.times))]
    events += [(float(clock_t[l]), 1, l) for l in range(len(clock_t))]
    events.sort()
    U = path.velocities[0]
    times = [0.0]
    pos = [path.positions[0]]
    vel = [U]
    synced = True
    for t, kind, i in events:
        if kind == 0:
            if a[i] == 0:
                synced = False
                continue
            new = path.velocities[i]
            x = path.positions[i]
        else:
            if b[i] == 0:
                continue
            new = proposals[i]
            x = clock_pos[i]
        if np.array_equal(new, U):
            continue
        if not synced:
            x = pos[-1] + (t - times[-1]) * U
        if kind == 1:
            synced = False
        times.append(t)
        pos.append(x)
        vel.append(new)
        U = new
    times = np.array(times)
    pos = np.array(pos)
    vel = np.array(vel)
    centres = np.full((len(times), 3), np.nan)
    if len(times) > 1:
        centres[1:] = _virtual(pos[1:], vel[:-1], vel[1:], r)
    return FlightPath(path.velocities[0], float(T), float(rate), times, pos, vel, centres)


def flight_stopping_times(flights, T, r):
    """``(sigma3, sigma4)`` from flight paths alone (``inf`` when not before ``T``)."""
    index = SegmentIndex(flights, T, r)
    pts, t_ev, seg_here, seg_before = [], [], [], []
    for j, f in enumerate(flights):
        for k in range(1, len(f.times)):
            if f.times[k] > T:
                break
            pts.append(f.centres[k])
            t_ev.append(f.times[k])
            seg_here.append(index.seg_id(j, k))
            seg_before.append(index.seg_id(j, k - 1))
    if not pts:
        return math.inf, math.inf
    pts = np.array(pts)
    t_ev = np.array(t_ev)
    enter, _ = index.first_entry(pts, t_ev, seg_here)
    s3 = float(enter.min())
    dist = index.min_past_distance(pts, t_ev, seg_before)
    hit = dist < r
    s4 = float(t_ev[hit].min()) if np.any(hit) else math.inf
    return (s3 if s3 < T else math.inf), (s4 if s4 < T else math.inf)


def build_coupled_flights(paths, streams, rate, T, clocks=None):
    """Couple flights to ``paths`` (all simulated to ``T`` in one environment).

    ``streams`` holds one generator per particle for its clock gaps and
    proposals.  ``clocks`` may instead give explicit ``(times, proposals)``
    per particle, which fixtures use to force particular ticks.
    """
    N = len(paths)
    if N == 0:
        raise ValueError("need at least one path")
    r = paths[0].r
    a = recollision_flags(paths)
    clock_t, props = [], []
    for j, p in enumerate(paths):
        if clocks is not None:
            ct, pr = clocks[j]
            clock_t.append(np.asarray(ct, float).reshape(-1))
            props.append(np.asarray(pr, float).reshape(-1, 3))
        else:
            ct, pr = sample_clocks(streams[j], rate, T, p.times[1:])
            clock_t.append(ct)
            props.append(pr)

    index = SegmentIndex(paths, T, r)
    b, clock_pos = [], []
    for j, p in enumerate(paths):
        if len(clock_t[j]) == 0:
            b.append(np.zeros(0, np.int8))
            clock_pos.append(np.zeros((0, 3)))
            continue
        k = p.segment_index(clock_t[j])
        x = _positions_at(p, k, clock_t[j])
        centres = _virtual(x, p.velocities[k], props[j], r)
        dist = index.min_past_distance(centres, clock_t[j], index.first[j] + k)
        b.append((dist <= r).astype(np.int8))
        clock_pos.append(x)

    flights = [_build_flight(p, a[j], clock_t[j], clock_pos[j], props[j], b[j], rate, T, r)
               for j, p in enumerate(paths)]

    s1 = min((float(p.times[k]) for j, p in enumerate(paths)
              for k in range(1, len(p.times)) if a[j][k] == 0), default=math.inf)
    s2 = min((float(clock_t[j][l]) for j in range(N) for l in range(len(clock_t[j]))
              if b[j][l] == 1), default=math.inf)
    s1 = s1 if s1 < T else math.inf
    s2 = s2 if s2 < T else math.inf
    s3, s4 = flight_stopping_times(flights, T, r)
    return CoupledEnsemble(list(paths), flights, a, clock_t, props, b,
                           s1, s2, s3, s4, min(s3, s4), float(T), r, float(rate))


def mismatch_times(ensemble):
    e = ensemble
    return e.sigma1, e.sigma2, e.sigma3, e.sigma4, e.sigma


def first_divergence(ensemble, atol=1e-9):
    """First time some ``X_j`` and ``Y_j`` differ, read off the event lists."""
    first = math.inf
    for x, y in zip(ensemble.lorentz, ensemble.flights):
        n = min(len(x.times), len(y.times))
        k = 0
        while (k < n and x.times[k] == y.times[k]
               and np.array_equal(x.velocities[k], y.velocities[k])
               and np.allclose(x.positions[k], y.positions[k], rtol=0.0, atol=atol)):
            k += 1
        if k < n:
            first = min(first, float(min(x.times[k], y.times[k])))
        elif len(x.times) != len(y.times):
            longer = x if len(x.times) > n else y
            first = min(first, float(longer.times[n]))
    return first if first < ensemble.T else math.inf


def sigma_identities_hold(ensemble, tol=1e-9):
    """Tie-robust form of the stopping-time identities."""
    s1, s2, s3, s4, _ = mismatch_times(ensemble)

    def same(x, y):
        return (x == y) or (math.isfinite(x) and math.isfinite(y) and abs(x - y) <= tol)

    ok = same(min(s1, s2), min(s3, s4))
    if s1 < s2:
        ok &= same(s3, s1) and s3 <= s4 + tol
    if s2 < s1:
        ok &= same(s4, s2) and s4 <= s3 + tol
    return bool(ok)


def _num(x):
    return None if not math.isfinite(x) else float(x)


def replica_record(ensemble, **context):
    """One JSON-lines record; infinite stopping times are written as null."""
    e = ensemble
    rec = dict(context)
    rec.update({
        "T": e.T, "N": e.N, "r": e.r, "rate": e.rate,
        "sigma1": _num(e.sigma1), "sigma2": _num(e.sigma2), "sigma3": _num(e.sigma3),
        "sigma4": _num(e.sigma4), "sigma": _num(e.sigma),
        "lorentz_events": int(sum(p.n_events for p in e.lorentz)),
        "flight_events": int(sum(f.n_events for f in e.flights)),
        "clock_ticks": int(sum(len(c) for c in e.clock_times)),
        "recollisions": int(sum(int((ai == 0).sum()) for ai in e.a)),
        "shadowed": int(sum(int(bi.sum()) for bi in e.b)),
        "mismatch": bool(e.mismatch),
    })
    return rec


def record_line(rec):
    return json.dumps(rec, sort_keys=True, allow_nan=False)
