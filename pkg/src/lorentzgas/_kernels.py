"""Compiled inner loops: ray/sphere search over the lazy grid and flights.

All kernels work in *base* coordinates of the point process, where the
scatterer radius is ``rho = r / eps``.  Callers rescale by ``eps``.
"""

import math

import numba as nb
import numpy as np

from ._hash import fill_cell

OK = 0
INSIDE = 1
OUT_OF_BOUNDS = 2
RUNAWAY = 3
OVERFULL = 4

_CELL_BUF = 512


@nb.njit(cache=True)
def _test_sphere(px, py, pz, dx, dy, dz, qx, qy, qz, rho2, tol2):
    """Entry parameter of the ray into the sphere, inf if missed, -1 if inside."""
    wx = px - qx
    wy = py - qy
    wz = pz - qz
    b = wx * dx + wy * dy + wz * dz
    c = wx * wx + wy * wy + wz * wz - rho2
    if c < -1e-9 * rho2:
        return -1.0
    disc = b * b - c
    if disc <= tol2:
        return math.inf
    te = -b - math.sqrt(disc)
    if te < 0.0:
        return math.inf
    return te


@nb.njit(cache=True, inline="always")
def _near_box(px, py, pz, dx, dy, dz, t0, t1, cx, cy, cz, side, rho):
    """Conservative slab test: does ray portion [t0, t1] pass within rho of the cell?"""
    lo_t = t0
    hi_t = t1
    for a in range(3):
        if a == 0:
            c, pa, da = cx, px, dx
        elif a == 1:
            c, pa, da = cy, py, dy
        else:
            c, pa, da = cz, pz, dz
        blo = c * side - rho
        bhi = (c + 1) * side + rho
        if da == 0.0:
            if pa < blo or pa > bhi:
                return False
        else:
            ta = (blo - pa) / da
            tb = (bhi - pa) / da
            if ta > tb:
                ta, tb = tb, ta
            if ta > lo_t:
                lo_t = ta
            if tb < hi_t:
                hi_t = tb
            if lo_t > hi_t:
                return False
    return True


def _make_traversal(collect):
    # ``collect`` is a compile-time constant inside the closures below
    @nb.njit(inline="always")
    def _scan_cell(seed, mean, p0, side, cx, cy, cz, px, py, pz, dx, dy, dz, rho2, tol2,
                   tmax, skip, buf, best, best_idx, out_q, out_cell, col_t, col_q,
                   col_cell, col_n):
        n = fill_cell(seed, cx, cy, cz, mean, p0, side, buf)
        if n < 0:
            return best, best_idx, OVERFULL
        same_cell = cx == skip[0] and cy == skip[1] and cz == skip[2]
        for i in range(n):
            qx = buf[i, 0]
            qy = buf[i, 1]
            qz = buf[i, 2]
            if qx * qx + qy * qy + qz * qz <= rho2:
                continue
            if same_cell and i == skip[3]:
                continue
            if collect:
                wx = px - qx
                wy = py - qy
                wz = pz - qz
                bb = wx * dx + wy * dy + wz * dz
                disc = bb * bb - (wx * wx + wy * wy + wz * wz - rho2)
                if disc <= tol2:
                    continue
                sq = math.sqrt(disc)
                if -bb + sq < 0.0 or -bb - sq > tmax:
                    continue
                m = col_n[0]
                if m >= col_t.shape[0]:
                    return best, best_idx, OVERFULL
                col_t[m] = -bb - sq
                col_q[m, 0] = qx
                col_q[m, 1] = qy
                col_q[m, 2] = qz
                col_cell[m, 0] = cx
                col_cell[m, 1] = cy
                col_cell[m, 2] = cz
                col_cell[m, 3] = i
                col_n[0] = m + 1
                continue
            te = _test_sphere(px, py, pz, dx, dy, dz, qx, qy, qz, rho2, tol2)
            if te < 0.0:
                return best, i, INSIDE
            if te <= tmax and te < best:
                best = te
                best_idx = i
                out_q[0] = qx
                out_q[1] = qy
                out_q[2] = qz
                out_cell[0] = cx
                out_cell[1] = cy
                out_cell[2] = cz
        return best, best_idx, OK


    @nb.njit
    def traverse_ppp(seed, mean, side, rho, p, d, tmax, skip, buf, out_q, out_cell,
                     col_t, col_q, col_cell, col_n):
        """First sphere entered by the ray ``p + t d``, ``0 < t <= tmax``.

        Cells are visited in ray order (Amanatides-Woo).  Around each visited cell
        only the neighbours the ray passes within ``rho`` of are realized; the
        previous and next cells on the ray are skipped since they are visited
        anyway.  ``skip`` = (cx, cy, cz, idx) of a sphere to ignore.
        Returns (t, idx, status); t is inf when nothing is hit.  With ``collect``
        every sphere meeting the segment is appended to the ``col_*`` buffers
        instead and the search is not cut short.
        """
        rho2 = rho * rho
        tol2 = 1e-12 * rho2
        p0 = math.exp(-mean)
        px, py, pz = p[0], p[1], p[2]
        dx, dy, dz = d[0], d[1], d[2]
        best = math.inf
        best_idx = -1
        cx = int(math.floor(px / side))
        cy = int(math.floor(py / side))
        cz = int(math.floor(pz / side))
        sx = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
        sy = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
        sz = 1 if dz > 0.0 else (-1 if dz < 0.0 else 0)
        tnx = ((cx + (sx > 0)) * side - px) / dx if sx != 0 else math.inf
        tny = ((cy + (sy > 0)) * side - py) / dy if sy != 0 else math.inf
        tnz = ((cz + (sz > 0)) * side - pz) / dz if sz != 0 else math.inf
        tdx = side / abs(dx) if sx != 0 else math.inf
        tdy = side / abs(dy) if sy != 0 else math.inf
        tdz = side / abs(dz) if sz != 0 else math.inf
        # offsets of the previous / next visited cell (axis, sign); none at start
        prev_axis = -1
        prev_sign = 0
        t_in = 0.0
        status = OK
        # set when a neighbour scan skipped the next cell on the ray; that cell
        # must then be scanned even if the improved best hit ends the walk
        promised = False
        while True:
            t_stop = (tmax if collect else min(best, tmax)) + rho
            if t_in > t_stop:
                if promised:
                    best, best_idx, status = _scan_cell(
                        seed, mean, p0, side, cx, cy, cz, px, py, pz, dx, dy, dz, rho2, tol2,
                        tmax, skip, buf, best, best_idx, out_q, out_cell, col_t, col_q,
                        col_cell, col_n)
                    if status != OK:
                        return math.inf, best_idx, status
                break
            promised = False
            if tnx <= tny and tnx <= tnz:
                next_axis, t_out = 0, tnx
                next_sign = sx
            elif tny <= tnz:
                next_axis, t_out = 1, tny
                next_sign = sy
            else:
                next_axis, t_out = 2, tnz
                next_sign = sz
            t_hi = min(t_out, t_stop)
            best, best_idx, status = _scan_cell(
                seed, mean, p0, side, cx, cy, cz, px, py, pz, dx, dy, dz, rho2, tol2,
                tmax, skip, buf, best, best_idx, out_q, out_cell, col_t, col_q,
                col_cell, col_n)
            if status != OK:
                return math.inf, best_idx, status
            # near-face flags of the ray portion inside this cell
            lo_x = hi_x = lo_y = hi_y = lo_z = hi_z = False
            for a in range(3):
                if a == 0:
                    c, pa, da = cx, px, dx
                elif a == 1:
                    c, pa, da = cy, py, dy
                else:
                    c, pa, da = cz, pz, dz
                x0 = pa + t_in * da
                x1 = pa + t_hi * da
                if x0 > x1:
                    x0, x1 = x1, x0
                near_lo = x0 - c * side < rho
                near_hi = (c + 1) * side - x1 < rho
                if a == 0:
                    lo_x, hi_x = near_lo, near_hi
                elif a == 1:
                    lo_y, hi_y = near_lo, near_hi
                else:
                    lo_z, hi_z = near_lo, near_hi
            for ox in range(-1 if lo_x else 0, 2 if hi_x else 1):
                for oy in range(-1 if lo_y else 0, 2 if hi_y else 1):
                    for oz in range(-1 if lo_z else 0, 2 if hi_z else 1):
                        nz_count = (ox != 0) + (oy != 0) + (oz != 0)
                        if nz_count == 0:
                            continue
                        if nz_count == 1:
                            o_axis = 0 if ox != 0 else (1 if oy != 0 else 2)
                            o_sign = ox + oy + oz
                            if o_axis == prev_axis and o_sign == -prev_sign:
                                continue
                            if o_axis == next_axis and o_sign == next_sign and t_out <= t_stop:
                                promised = True
                                continue
                        if not _near_box(px, py, pz, dx, dy, dz, t_in - rho, t_hi + rho,
                                         cx + ox, cy + oy, cz + oz, side, rho):
                            continue
                        best, best_idx, status = _scan_cell(
                            seed, mean, p0, side, cx + ox, cy + oy, cz + oz,
                            px, py, pz, dx, dy, dz, rho2, tol2,
                            tmax, skip, buf, best, best_idx, out_q, out_cell, col_t, col_q,
                            col_cell, col_n)
                        if status != OK:
                            return math.inf, best_idx, status
            if t_out == math.inf:
                break
            t_in = t_out
            prev_axis = next_axis
            prev_sign = next_sign
            if next_axis == 0:
                cx += sx
                tnx += tdx
            elif next_axis == 1:
                cy += sy
                tny += tdy
            else:
                cz += sz
                tnz += tdz
        return best, best_idx, OK


    return traverse_ppp


_find_first = _make_traversal(False)
_find_all = _make_traversal(True)


@nb.njit(cache=True)
def next_hit_ppp(seed, mean, side, rho, p, d, tmax, skip, buf, out_q, out_cell):
    col_t = np.empty(0)
    col_q = np.empty((0, 3))
    col_cell = np.empty((0, 4), np.int64)
    col_n = np.zeros(1, np.int64)
    return _find_first(seed, mean, side, rho, p, d, tmax, skip, buf, out_q, out_cell,
                       col_t, col_q, col_cell, col_n)


@nb.njit(cache=True)
def collect_ppp(seed, mean, side, rho, p, d, tmax, capacity):
    """All spheres meeting segment ``p + t d``, ``0 <= t <= tmax`` (may repeat)."""
    skip = np.array([0, 0, 0, -1], np.int64)
    buf = np.empty((_CELL_BUF, 3))
    q = np.empty(3)
    qc = np.zeros(3, np.int64)
    col_t = np.empty(capacity)
    col_q = np.empty((capacity, 3))
    col_cell = np.empty((capacity, 4), np.int64)
    col_n = np.zeros(1, np.int64)
    _, _, status = _find_all(seed, mean, side, rho, p, d, tmax, skip, buf, q, qc,
                             col_t, col_q, col_cell, col_n)
    n = col_n[0]
    return col_t[:n].copy(), col_q[:n].copy(), col_cell[:n].copy(), status


@nb.njit(cache=True)
def next_hit_fixed(centres, rho, p, d, tmax, skip_idx, out_q):
    """Brute-force counterpart of :func:`next_hit_ppp` for explicit centres."""
    rho2 = rho * rho
    tol2 = 1e-12 * rho2
    best = math.inf
    best_idx = -1
    for i in range(centres.shape[0]):
        if i == skip_idx:
            continue
        te = _test_sphere(p[0], p[1], p[2], d[0], d[1], d[2],
                          centres[i, 0], centres[i, 1], centres[i, 2], rho2, tol2)
        if te < 0.0:
            return math.inf, i, INSIDE
        if te <= tmax and te < best:
            best = te
            best_idx = i
            out_q[0] = centres[i, 0]
            out_q[1] = centres[i, 1]
            out_q[2] = centres[i, 2]
    return best, best_idx, OK


@nb.njit(cache=True)
def _grow(a, n):
    b = np.empty((n,) + a.shape[1:], a.dtype)
    b[: a.shape[0]] = a
    return b


@nb.njit(cache=True)
def simulate(mode, seed, mean, side, centres, rho, world_radius, v0, tmax, max_events):
    """Event-driven Lorentz trajectory from the origin up to time ``tmax``.

    ``mode`` 0 realizes the lazy Poisson grid, 1 uses ``centres``.
    Returns (times, positions, post-velocities, centres, cells, idx, status);
    row 0 of times/positions/velocities is the initial state.
    """
    cap = 64
    times = np.empty(cap)
    pos = np.empty((cap, 3))
    vel = np.empty((cap, 3))
    cen = np.empty((cap, 3))
    cells = np.empty((cap, 3), np.int64)
    idx = np.empty(cap, np.int64)
    times[0] = 0.0
    pos[0, :] = 0.0
    vel[0, :] = v0
    cen[0, :] = np.nan
    cells[0, :] = 0
    idx[0] = -1
    buf = np.empty((_CELL_BUF, 3))
    q = np.empty(3)
    qcell = np.zeros(3, np.int64)
    skip = np.array([0, 0, 0, -1], np.int64)
    p = np.zeros(3)
    d = v0.copy()
    t = 0.0
    k = 0
    status = OK
    while True:
        remaining = tmax - t
        if remaining <= 0.0:
            break
        end = p + remaining * d
        if math.sqrt(end[0] ** 2 + end[1] ** 2 + end[2] ** 2) > world_radius:
            status = OUT_OF_BOUNDS
            break
        if mode == 0:
            th, hi, st = next_hit_ppp(seed, mean, side, rho, p, d, remaining,
                                      skip, buf, q, qcell)
        else:
            th, hi, st = next_hit_fixed(centres, rho, p, d, remaining, skip[3], q)
        if st != OK:
            status = st
            break
        if th == math.inf:
            break
        k += 1
        if k >= max_events:
            status = RUNAWAY
            break
        if k >= cap:
            cap *= 2
            times = _grow(times, cap)
            pos = _grow(pos, cap)
            vel = _grow(vel, cap)
            cen = _grow(cen, cap)
            cells = _grow(cells, cap)
            idx = _grow(idx, cap)
        x = p + th * d
        nrm = (x - q) / rho
        nrm /= math.sqrt(nrm[0] ** 2 + nrm[1] ** 2 + nrm[2] ** 2)
        dn = d[0] * nrm[0] + d[1] * nrm[1] + d[2] * nrm[2]
        d = d - 2.0 * dn * nrm
        d /= math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
        t += th
        p = x
        times[k] = t
        pos[k, :] = x
        vel[k, :] = d
        cen[k, :] = q
        cells[k, :] = qcell
        idx[k] = hi
        skip[0] = qcell[0]
        skip[1] = qcell[1]
        skip[2] = qcell[2]
        skip[3] = hi
    n = k + 1
    return (times[:n].copy(), pos[:n].copy(), vel[:n].copy(), cen[:n].copy(),
            cells[:n].copy(), idx[:n].copy(), status)


@nb.njit(cache=True, parallel=False)
def simulate_many(mode, seed, mean, side, centres, rho, world_radius, v0s, tmax, max_events):
    out = []
    for j in range(v0s.shape[0]):
        out.append(simulate(mode, seed, mean, side, centres, rho, world_radius,
                            v0s[j].copy(), tmax, max_events))
    return out
