"""Spatial hash of trajectory segments for tube queries.

Segments are ``P0 + (t - T0) D`` for ``T0 <= t <= T1`` with unit ``D``.  Each
one is registered in every grid cell of side ``h`` adjacent to a sample taken
every ``h`` along it.  Any point within ``h/2`` of a segment then finds that
segment in its own cell, so queries at distance ``r <= h/2`` are exact.
"""

import math

import numba as nb
import numpy as np

_OFF = 1 << 20
_BITS = 21


@nb.njit(cache=True, inline="always")
def _pack(cx, cy, cz):
    return ((cx + _OFF) << (2 * _BITS)) | ((cy + _OFF) << _BITS) | (cz + _OFF)


@nb.njit(cache=True)
def _cell_of(x, h):
    return (int(math.floor(x[0] / h)), int(math.floor(x[1] / h)), int(math.floor(x[2] / h)))


@nb.njit(cache=True)
def build_grid(p0, d, t0, t1, h):
    """CSR index ``(keys, offsets, seg_ids)`` of the segments."""
    n = p0.shape[0]
    total = 0
    for s in range(n):
        total += 27 * (int((t1[s] - t0[s]) / h) + 2)
    ent_key = np.empty(total, np.int64)
    ent_seg = np.empty(total, np.int64)
    m = 0
    for s in range(n):
        length = t1[s] - t0[s]
        ns = int(length / h) + 2
        for q in range(ns):
            u = min(q * h, length)
            x = p0[s] + u * d[s]
            cx, cy, cz = _cell_of(x, h)
            for ox in range(-1, 2):
                for oy in range(-1, 2):
                    for oz in range(-1, 2):
                        ent_key[m] = _pack(cx + ox, cy + oy, cz + oz)
                        ent_seg[m] = s
                        m += 1
    ent_key = ent_key[:m]
    ent_seg = ent_seg[:m]
    order = np.argsort(ent_key, kind="mergesort")
    ks = ent_key[order]
    ss = ent_seg[order]
    # drop repeated (key, seg) pairs; stable sort keeps each segment's entries together
    keep = np.ones(m, np.bool_)
    for i in range(1, m):
        if ks[i] == ks[i - 1] and ss[i] == ss[i - 1]:
            keep[i] = False
    ks = ks[keep]
    ss = ss[keep]
    nk = 0
    for i in range(ks.shape[0]):
        if i == 0 or ks[i] != ks[i - 1]:
            nk += 1
    keys = np.empty(nk, np.int64)
    offsets = np.empty(nk + 1, np.int64)
    j = 0
    for i in range(ks.shape[0]):
        if i == 0 or ks[i] != ks[i - 1]:
            keys[j] = ks[i]
            offsets[j] = i
            j += 1
    offsets[nk] = ks.shape[0]
    return keys, offsets, ss


@nb.njit(cache=True, inline="always")
def _bucket(keys, offsets, x, h):
    cx, cy, cz = _cell_of(x, h)
    key = _pack(cx, cy, cz)
    i = np.searchsorted(keys, key)
    if i < keys.shape[0] and keys[i] == key:
        return offsets[i], offsets[i + 1]
    return 0, 0


@nb.njit(cache=True)
def min_past_distance(keys, offsets, seg_ids, h, p0, d, t0, t1, points, t_limits, delta_segs):
    """Distance from each point to the segments truncated at its ``t_limit``.

    Only segments registered in the point's cell are inspected, so a returned
    value above ``h/2`` is a lower-bound-free placeholder (callers compare with
    ``r <= h/2``).  ``delta_segs[i]`` is a segment on which the distance is
    approached only in the limit at the truncation end; it is skipped when its
    closest approach lies at or beyond that end.
    """
    out = np.full(points.shape[0], np.inf)
    for i in range(points.shape[0]):
        c = points[i]
        lo, hi = _bucket(keys, offsets, c, h)
        best = np.inf
        for e in range(lo, hi):
            s = seg_ids[e]
            if t0[s] >= t_limits[i]:
                continue
            length = min(t1[s], t_limits[i]) - t0[s]
            wx = c[0] - p0[s, 0]
            wy = c[1] - p0[s, 1]
            wz = c[2] - p0[s, 2]
            u = wx * d[s, 0] + wy * d[s, 1] + wz * d[s, 2]
            if s == delta_segs[i] and u >= length:
                continue
            if u < 0.0:
                u = 0.0
            elif u > length:
                u = length
            ex = wx - u * d[s, 0]
            ey = wy - u * d[s, 1]
            ez = wz - u * d[s, 2]
            dist = math.sqrt(ex * ex + ey * ey + ez * ez)
            if dist < best:
                best = dist
        out[i] = best
    return out


@nb.njit(cache=True)
def first_entry(keys, offsets, seg_ids, h, p0, d, t0, t1, points, t_froms, r, exclude):
    """Earliest ``t > t_from`` at which some segment is strictly within ``r`` of each point.

    Returns ``(time, segment)`` arrays; ``inf`` and -1 when never.
    """
    n = points.shape[0]
    out_t = np.full(n, np.inf)
    out_s = np.full(n, -1, np.int64)
    r2 = r * r
    for i in range(n):
        c = points[i]
        lo, hi = _bucket(keys, offsets, c, h)
        for e in range(lo, hi):
            s = seg_ids[e]
            if s == exclude[i] or t1[s] <= t_froms[i]:
                continue
            wx = p0[s, 0] - c[0]
            wy = p0[s, 1] - c[1]
            wz = p0[s, 2] - c[2]
            b = wx * d[s, 0] + wy * d[s, 1] + wz * d[s, 2]
            disc = b * b - (wx * wx + wy * wy + wz * wz - r2)
            if disc <= 0.0:
                continue
            sq = math.sqrt(disc)
            enter = t0[s] + (-b - sq)
            leave = t0[s] + (-b + sq)
            start = max(enter, t0[s], t_froms[i])
            if start < min(leave, t1[s]) and start < out_t[i]:
                out_t[i] = start
                out_s[i] = s
    return out_t, out_s


def segments_of(paths, T):
    """Flatten paths into segment arrays plus ``(path, event)`` owners."""
    p0, d, t0, t1, owner = [], [], [], [], []
    for j, p in enumerate(paths):
        n = len(p.times)
        ends = np.append(p.times[1:], T)
        p0.append(p.positions)
        d.append(p.velocities)
        t0.append(p.times)
        t1.append(np.minimum(ends, T))
        owner.append(np.column_stack([np.full(n, j), np.arange(n)]))
    return (np.concatenate(p0), np.concatenate(d), np.concatenate(t0), np.concatenate(t1),
            np.concatenate(owner))


class SegmentIndex:
    """Segments of a list of paths with grid lookups; ``seg_id(j, k)`` maps back."""

    def __init__(self, paths, T, r, h=None):
        self.p0, self.d, self.t0, self.t1, self.owner = segments_of(paths, T)
        self.first = np.concatenate([[0], np.cumsum([len(p.times) for p in paths])])
        self.r = float(r)
        span = max(1.0, float(np.abs(self.p0).max()) + T)
        self.h = float(h) if h is not None else max(4.0 * r, 0.5, span / 2.0**19)
        if self.h < 2.0 * r:
            raise ValueError("cell side must be at least 2 r")
        self.keys, self.offsets, self.seg_ids = build_grid(self.p0, self.d, self.t0, self.t1,
                                                           self.h)

    def seg_id(self, j, k):
        return int(self.first[j] + k)

    def min_past_distance(self, points, t_limits, delta_segs):
        points = np.ascontiguousarray(np.atleast_2d(points), float)
        return min_past_distance(self.keys, self.offsets, self.seg_ids, self.h, self.p0, self.d,
                                 self.t0, self.t1, points,
                                 np.asarray(t_limits, float).reshape(-1),
                                 np.asarray(delta_segs, np.int64).reshape(-1))

    def first_entry(self, points, t_froms, exclude):
        points = np.ascontiguousarray(np.atleast_2d(points), float)
        return first_entry(self.keys, self.offsets, self.seg_ids, self.h, self.p0, self.d,
                           self.t0, self.t1, points, np.asarray(t_froms, float).reshape(-1),
                           self.r, np.asarray(exclude, np.int64).reshape(-1))


def brute_tube_distance(p0, d, t0, t1, point, t_limit, delta_seg=-1):
    """Exact reference: min distance from ``point`` to all segments truncated at ``t_limit``."""
    live = t0 < t_limit
    idx = np.flatnonzero(live)
    if len(idx) == 0:
        return math.inf
    length = np.minimum(t1[idx], t_limit) - t0[idx]
    w = point - p0[idx]
    u = np.einsum("ij,ij->i", w, d[idx])
    skip = (idx == delta_seg) & (u >= length)
    u = np.clip(u, 0.0, length)
    dist = np.linalg.norm(w - u[:, None] * d[idx], axis=1)
    dist[skip] = math.inf
    return float(dist.min())
