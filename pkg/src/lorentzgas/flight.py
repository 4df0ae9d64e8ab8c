"""Markovian random flights: EXP(rate) free flights, uniform directions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np


def sample_uniform_sphere(rng, size=None):
    """Uniform point(s) on S^2 (normalized Gaussian)."""
    n = 1 if size is None else int(size)
    g = rng.standard_normal((n, 3))
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    while np.any(nrm == 0.0):  # probability zero, but keep it honest
        bad = nrm[:, 0] == 0.0
        g[bad] = rng.standard_normal((int(bad.sum()), 3))
        nrm = np.linalg.norm(g, axis=1, keepdims=True)
    u = g / nrm
    return u[0] if size is None else u


def virtual_centres(positions, velocities, r):
    """``Y'_k = Y_k + r (U_k - U_{k+1}) / |U_k - U_{k+1}|`` for every event row k >= 1."""
    pre = velocities[:-1]
    post = velocities[1:]
    diff = pre - post
    nrm = np.linalg.norm(diff, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = positions[1:] + r * diff / nrm
    return np.vstack([np.full((1, 3), np.nan), c])


@dataclass(frozen=True)
class FlightPath:
    """Piecewise-linear flight; row 0 of each array is the initial state.

    ``velocities[k]`` is ``U`` on ``[theta_k, theta_{k+1})``.  ``centres[k]``
    is the virtual scatterer centre of event ``k`` (NaN when ``r`` is unknown).
    """

    v0: np.ndarray
    T: float
    rate: float
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    centres: np.ndarray

    @property
    def n_events(self):
        return len(self.times) - 1

    @property
    def gaps(self):
        return np.diff(self.times)

    @property
    def events(self):
        return [(float(self.times[k]), self.positions[k], self.velocities[k], self.centres[k])
                for k in range(1, len(self.times))]

    def segment_index(self, t):
        return np.searchsorted(self.times, t, side="right") - 1

    def position(self, t):
        t = np.asarray(t, float)
        k = self.segment_index(t)
        return self.positions[k] + (t - self.times[k])[..., None] * self.velocities[k]

    def velocity(self, t):
        return self.velocities[self.segment_index(np.asarray(t, float))]


def make_flight(v0, T, rate, times, velocities, r=None, positions=None):
    """Assemble a FlightPath from event times and the velocity after each event."""
    times = np.asarray(times, float)
    velocities = np.asarray(velocities, float)
    if positions is None:
        positions = np.zeros((len(times), 3))
        steps = np.diff(times)[:, None] * velocities[:-1]
        positions[1:] = np.cumsum(steps, axis=0)
    centres = (virtual_centres(positions, velocities, r) if r is not None
               else np.full_like(positions, np.nan))
    return FlightPath(np.asarray(v0, float), float(T), float(rate), times, positions,
                      velocities, centres)


def sample_flight(rng, rate, v0, T, r=None):
    """One flight path from the origin up to ``T``."""
    if rate <= 0 or T <= 0:
        raise ValueError("rate and T must be positive")
    v0 = np.asarray(v0, float)
    times = [0.0]
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > T:
            break
        times.append(t)
    vels = np.vstack([v0[None], sample_uniform_sphere(rng, len(times) - 1).reshape(-1, 3)])
    return make_flight(v0, T, rate, times, vels, r)


def flight_covariance(rate, T, d=3):
    """Exact per-coordinate variance of ``Y(T)`` for a flight with uniform initial velocity."""
    if rate <= 0 or T <= 0:
        raise ValueError("rate and T must be positive")
    x = rate * T
    if x < 1e-4:
        # series of x + expm1(-x) = x^2/2 - x^3/6 + x^4/24
        return (2.0 / (d * rate**2)) * (x * x / 2 - x**3 / 6 + x**4 / 24)
    return (2.0 / (d * rate**2)) * (x + math.expm1(-x))


def sample_flight_arrays(rng, rate, T, n, v0=None):
    """``n`` independent flights as padded arrays, all extending past ``T``.

    Returns ``(times, positions, velocities)`` of shapes (n, K+1), (n, K+1, 3),
    (n, K+1, 3).  ``v0`` may be None (uniform), one vector, or one per path.
    """
    lam_t = rate * T
    k = int(lam_t + 8.0 * math.sqrt(lam_t) + 16)
    gaps = rng.exponential(1.0 / rate, (n, k))
    while np.any(gaps.sum(axis=1) <= T):
        gaps = np.hstack([gaps, rng.exponential(1.0 / rate, (n, k))])
    k = gaps.shape[1]
    vel = np.empty((n, k + 1, 3))
    if v0 is None:
        vel[:, 0] = sample_uniform_sphere(rng, n)
    else:
        vel[:, 0] = np.broadcast_to(np.asarray(v0, float), (n, 3))
    vel[:, 1:] = sample_uniform_sphere(rng, n * k).reshape(n, k, 3)
    times = np.zeros((n, k + 1))
    times[:, 1:] = np.cumsum(gaps, axis=1)
    pos = np.zeros((n, k + 1, 3))
    pos[:, 1:] = np.cumsum(gaps[:, :, None] * vel[:, :-1], axis=1)
    return times, pos, vel


@nb.njit(cache=True)
def eval_on_grid(times, pos, vel, tgrid):
    """Positions of each padded path at the increasing times ``tgrid``."""
    n = times.shape[0]
    g = tgrid.shape[0]
    out = np.empty((n, g, 3))
    for i in range(n):
        k = 0
        for m in range(g):
            t = tgrid[m]
            while k + 1 < times.shape[1] and times[i, k + 1] <= t:
                k += 1
            dt = t - times[i, k]
            for a in range(3):
                out[i, m, a] = pos[i, k, a] + dt * vel[i, k, a]
    return out


def rescaled_flights(rng, rate, T, n, n_steps=1000, v0=None):
    """Diffusively rescaled paths ``z(s) = T^{-1/2} Y(T s)`` on ``s = 0, 1/n_steps, ..., 1``."""
    times, pos, vel = sample_flight_arrays(rng, rate, T, n, v0)
    grid = np.linspace(0.0, T, n_steps + 1)
    return eval_on_grid(times, pos, vel, grid) / math.sqrt(T)


def rescale_path(path, n_steps=1000):
    """Rescaled grid view of a single Lorentz or flight path."""
    grid = np.linspace(0.0, path.T, n_steps + 1)
    return path.position(grid) / math.sqrt(path.T)
