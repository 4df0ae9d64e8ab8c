"""Event-driven Lorentz trajectories in a fixed scatterer environment."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .environment import FixtureEnvironment
from .errors import (GrazingError, InsideScattererError, OutOfBoundsError,
                     RunawayError)

MAX_EVENTS = 10**7


def _unit(v, name="v"):
    v = np.asarray(v, float)
    if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a unit 3-vector")
    return v


def reflect(v, normal):
    """Specular reflection of an incoming unit velocity off a surface normal."""
    v = _unit(v)
    normal = _unit(normal, "normal")
    vn = float(v @ normal)
    if vn >= 0.0:
        raise GrazingError(f"velocity is not incoming (v.n = {vn})")
    return v - 2.0 * vn * normal


@dataclass(frozen=True)
class CollisionEvent:
    tau: float
    X: np.ndarray
    V_pre: np.ndarray
    V_post: np.ndarray
    centre: np.ndarray
    scatterer: tuple = ()


@dataclass(frozen=True)
class LorentzPath:
    """Piecewise-linear trajectory; row 0 of every array is the initial state.

    ``velocities[k]`` is the velocity on ``[times[k], times[k+1])``, i.e. the
    post-collision velocity of event ``k``.  ``scatterers[k]`` identifies the
    sphere hit at event ``k`` as ``(cx, cy, cz, index)`` (row 0 unused).
    """

    v0: np.ndarray
    T: float
    r: float
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    centres: np.ndarray
    scatterers: np.ndarray

    @property
    def n_events(self):
        return len(self.times) - 1

    @property
    def events(self):
        return [self.event(k) for k in range(1, len(self.times))]

    def event(self, k):
        return CollisionEvent(float(self.times[k]), self.positions[k], self.velocities[k - 1],
                              self.velocities[k], self.centres[k],
                              tuple(int(c) for c in self.scatterers[k]))

    def segment_index(self, t):
        return np.searchsorted(self.times, t, side="right") - 1

    def position(self, t):
        """``X(t)``; exact at event times."""
        t = np.asarray(t, float)
        k = self.segment_index(t)
        dt = (t - self.times[k])[..., None]
        return self.positions[k] + dt * self.velocities[k]

    def velocity(self, t):
        return self.velocities[self.segment_index(np.asarray(t, float))]


def _raise_status(status):
    if status == _kernels.INSIDE:
        raise InsideScattererError("start point lies inside a scatterer")
    if status == _kernels.OUT_OF_BOUNDS:
        raise OutOfBoundsError("trajectory leaves the world ball")
    if status == _kernels.RUNAWAY:
        raise RunawayError("event count exceeded the runaway guard")
    if status == _kernels.OVERFULL:
        raise OutOfBoundsError("cell count overflowed the realization buffer")


def next_collision(view, pos, v, t_max, skip=None):
    """Earliest scatterer entry along ``pos + t v`` for ``0 < t <= t_max``, or None.

    ``skip`` is a scatterer id ``(cx, cy, cz, index)`` to ignore, normally the
    one just left.
    """
    pos = np.asarray(pos, float)
    v = _unit(v)
    s = view.scale
    q = np.empty(3)
    if isinstance(view, FixtureEnvironment):
        sk = -1 if skip is None else int(skip[3])
        th, idx, st = _kernels.next_hit_fixed(view.centres, view.r, pos, v, float(t_max), sk, q)
        cell = (0, 0, 0)
    else:
        b = view.base
        sk = np.array(skip if skip is not None else (0, 0, 0, -1), np.int64)
        qc = np.zeros(3, np.int64)
        buf = np.empty((_kernels._CELL_BUF, 3))
        th, idx, st = _kernels.next_hit_ppp(b.seed, b.cell_mean, b.cell_side, view.rho,
                                            pos / s, v, t_max / s, sk, buf, q, qc)
        cell = tuple(int(c) for c in qc)
    _raise_status(st)
    if th == math.inf:
        return None
    x = (pos / s + th * v) * s
    centre = q * s
    normal = (x - centre) / view.exclusion_radius
    normal /= np.linalg.norm(normal)
    v_post = reflect(v, normal)
    return CollisionEvent(th * s, x, v, v_post / np.linalg.norm(v_post), centre, cell + (int(idx),))


def simulate_lorentz(view, v0, T, max_events=MAX_EVENTS):
    """All collisions of the trajectory started at the origin with velocity ``v0`` up to ``T``."""
    v0 = _unit(v0, "v0")
    if T <= 0:
        raise ValueError("T must be positive")
    s = view.scale
    mode, seed, mean, side, centres, rho, world = view.kernel_args()
    if not isinstance(view, FixtureEnvironment):
        world = min(world, 4.0 * T / s)
    times, pos, vel, cen, cells, idx, st = _kernels.simulate(
        mode, seed, mean, side, centres, rho, world, v0.copy(), T / s, max_events)
    _raise_status(st)
    ids = np.column_stack([cells, idx])
    if s != 1.0:
        times = times * s
        pos = pos * s
        cen = cen * s
    return LorentzPath(v0, float(T), view.exclusion_radius, times, pos, vel, cen, ids)


def simulate_lorentz_many(view, v0s, T, max_events=MAX_EVENTS):
    return [simulate_lorentz(view, v, T, max_events) for v in np.asarray(v0s, float)]


def write_trajectories_csv(path, paths, header_lines=()):
    """Event table ``j,k,t,x,y,z,vx,vy,vz``; the first row of each path is t=0 at the origin."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["j", "k", "t", "x", "y", "z", "vx", "vy", "vz"])
        for j, p in enumerate(paths):
            for k in range(len(p.times)):
                w.writerow([j, k, repr(float(p.times[k]))]
                           + [repr(float(c)) for c in p.positions[k]]
                           + [repr(float(c)) for c in p.velocities[k]])
