"""Quenched Poisson scatterer environment, realized lazily on a cubic grid.

A :class:`BasePointProcess` is a Poisson point process on R^3 whose
restriction to every grid cell is a pure function of ``(seed, cell)``.  An
:class:`EnvironmentView` looks at it at scale ``eps``: centres ``eps * q``,
radius ``r = eps**(d/(d-1))``, and base points with ``|eps q| <= r`` removed
so the origin is free.  Every view of one base process sees the same
realization, which is what makes a sequence of scales quenched.

:class:`FixtureEnvironment` holds hand-placed scatterers and offers the same
interface, so rare branches of the coupling can be exercised on purpose.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._hash import fill_cell
from .errors import OutOfBoundsError
from .schedule import radius_of

UNIT_RATE_INTENSITY = 1.0 / math.pi
DEFAULT_CELL_SIDE = 2.0
_MAX_SEED = 2**63


def _unit_ball_volume(k):
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


@dataclass(frozen=True)
class BasePointProcess:
    """Poisson points of intensity ``intensity`` per unit (base) volume.

    The default intensity ``1/pi`` makes the free-flight rate of every view
    equal to one.  Use :meth:`unit_intensity` for intensity one, in which case
    the rate is ``pi`` and is propagated through :attr:`collision_rate`.
    """

    seed: int
    intensity: float = UNIT_RATE_INTENSITY
    cell_side: float = DEFAULT_CELL_SIDE
    dimension: int = 3
    world_radius: float = 2.0**40

    def __post_init__(self):
        if not 0 <= self.seed < _MAX_SEED:
            raise ValueError(f"seed must lie in [0, 2**63), got {self.seed}")
        if self.intensity <= 0 or self.cell_side <= 0:
            raise ValueError("intensity and cell_side must be positive")
        if self.dimension != 3:
            raise NotImplementedError("only d = 3 is realized")
        if self.cell_mean > 400:
            raise ValueError("cell_side too large for the per-cell buffer")

    @classmethod
    def unit_intensity(cls, seed, **kwargs):
        return cls(seed, intensity=1.0, **kwargs)

    @property
    def cell_mean(self):
        return self.intensity * self.cell_side**self.dimension

    @property
    def collision_rate(self):
        """Free-flight rate of a unit-speed ray in any Boltzmann-Grad view."""
        return self.intensity * _unit_ball_volume(self.dimension - 1)

    def _check_cell(self, cell):
        lo = np.asarray(cell, float) * self.cell_side
        hi = lo + self.cell_side
        nearest = np.clip(0.0, lo, hi)
        if np.linalg.norm(nearest) > self.world_radius:
            raise OutOfBoundsError(f"cell {tuple(cell)} lies outside the world ball")


def cell_points(base, cell):
    """Points of ``base`` in grid cell ``cell`` (base coordinates), shape (n, 3)."""
    cell = tuple(int(c) for c in cell)
    if len(cell) != 3:
        raise ValueError("cell must be an integer triple")
    base._check_cell(cell)
    buf = np.empty((_kernels._CELL_BUF, 3))
    n = fill_cell(base.seed, cell[0], cell[1], cell[2], base.cell_mean,
                  math.exp(-base.cell_mean), base.cell_side, buf)
    return buf[:n].copy()


@dataclass(frozen=True)
class EnvironmentView:
    """The rescaled environment at scale ``eps`` over a shared base process.

    ``horizon`` (when given) bounds the world to the ball of radius
    ``4 * horizon / eps`` in base coordinates: unit-speed paths up to that
    time cannot leave it.
    """

    base: BasePointProcess
    eps: float
    horizon: float | None = None
    r: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.eps <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        object.__setattr__(self, "r", radius_of(self.eps, self.base.dimension))
        if self.rho > self.base.cell_side:
            # neighbour search only looks one cell beyond the ray
            raise ValueError("scatterer radius exceeds the cell side")

    @property
    def exclusion_radius(self):
        return self.r

    @property
    def rho(self):
        """Scatterer radius in base coordinates."""
        return self.r / self.eps

    @property
    def world_radius_base(self):
        if self.horizon is None:
            return self.base.world_radius
        return min(self.base.world_radius, 4.0 * self.horizon / self.eps)

    @property
    def collision_rate(self):
        return self.base.collision_rate

    @property
    def scale(self):
        return self.eps

    def kernel_args(self):
        b = self.base
        return (0, b.seed, b.cell_mean, b.cell_side, np.zeros((0, 3)), self.rho,
                self.world_radius_base)

    def centres_in_box(self, lo, hi):
        """All scatterer centres (rescaled) inside the axis-aligned box [lo, hi]."""
        lo = np.asarray(lo, float) / self.eps
        hi = np.asarray(hi, float) / self.eps
        side = self.base.cell_side
        c0 = np.floor(lo / side).astype(int)
        c1 = np.floor(hi / side).astype(int)
        pts = []
        for cx in range(c0[0], c1[0] + 1):
            for cy in range(c0[1], c1[1] + 1):
                for cz in range(c0[2], c1[2] + 1):
                    q = cell_points(self.base, (cx, cy, cz))
                    if len(q):
                        pts.append(q)
        if not pts:
            return np.zeros((0, 3))
        q = np.concatenate(pts)
        keep = np.all((q >= lo) & (q <= hi), axis=1)
        keep &= np.einsum("ij,ij->i", q, q) > self.rho**2
        return q[keep] * self.eps


@dataclass(frozen=True)
class FixtureEnvironment:
    """Hand-placed scatterers of radius ``r`` (coordinates as given).

    ``collision_rate`` is the rate used for auxiliary clocks when the fixture
    feeds the coupling; it carries no geometric meaning here.
    """

    centres: np.ndarray
    r: float
    collision_rate: float = 1.0
    world_radius: float = math.inf

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centres, float)).reshape(-1, 3)
        object.__setattr__(self, "centres", c)
        if self.r <= 0:
            raise ValueError("r must be positive")

    @property
    def exclusion_radius(self):
        return self.r

    @property
    def scale(self):
        return 1.0

    def kernel_args(self):
        return (1, 0, 0.0, 1.0, self.centres, self.r, self.world_radius)


def scatterers_along(view, start, direction, length):
    """Scatterers whose sphere meets the segment ``start + t*direction``, ``0<=t<=length``.

    Returns a list of ``(centre, entry)`` pairs sorted by the ray parameter of
    first intersection with the sphere (negative if ``start`` is inside it).
    """
    start = np.asarray(start, float)
    direction = np.asarray(direction, float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if length < 0:
        raise ValueError("length must be non-negative")
    if isinstance(view, FixtureEnvironment):
        w = start - view.centres
        b = w @ direction
        disc = b * b - (np.einsum("ij,ij->i", w, w) - view.r**2)
        ok = disc > 1e-12 * view.r**2
        sq = np.sqrt(np.where(ok, disc, 0.0))
        entry = -b - sq
        ok &= (-b + sq >= 0) & (entry <= length)
        hits = [(view.centres[i].copy(), float(entry[i])) for i in np.flatnonzero(ok)]
        return sorted(hits, key=lambda h: h[1])
    s = view.scale
    p = start / s
    end = p + (length / s) * direction
    if max(np.linalg.norm(p), np.linalg.norm(end)) > view.world_radius_base:
        raise OutOfBoundsError("segment leaves the world ball")
    b = view.base
    capacity = 256
    while True:
        t, q, cells, status = _kernels.collect_ppp(
            b.seed, b.cell_mean, b.cell_side, view.rho, p, direction, length / s, capacity)
        if status != _kernels.OVERFULL:
            break
        capacity *= 4
    seen = {}
    for ti, qi, ci in zip(t, q, cells):
        seen.setdefault(tuple(ci), (qi * s, ti * s))
    return sorted(seen.values(), key=lambda h: h[1])


def write_scatterers_csv(path, view, lo, hi):
    """Debug dump of the centres inside a box as ``x,y,z`` rows."""
    pts = view.centres_in_box(lo, hi)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        for p in pts:
            w.writerow([repr(float(v)) for v in p])
    return len(pts)
