"""Counter-based hashing used to realize the scatterer environment lazily.

Every random number drawn for a cell is a pure function of ``(seed, cell, i)``
so cells may be realized in any order, any number of times, from any thread.
"""

import math

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def cell_key(seed, cx, cy, cz):
    """64-bit key of cell ``(cx, cy, cz)`` under ``seed``."""
    k = mix64(np.uint64(seed) + _GOLDEN)
    k = mix64(k ^ (np.uint64(cx) * _M1))
    k = mix64(k ^ (np.uint64(cy) * _M2))
    k = mix64(k ^ (np.uint64(cz) * _GOLDEN))
    return k


@nb.njit(cache=True, inline="always")
def uniform(key, i):
    """The ``i``-th uniform in [0, 1) of the stream keyed by ``key``."""
    return np.float64(mix64(key + np.uint64(i + 1) * _GOLDEN) >> _S11) * _TWO_M53


@nb.njit(cache=True)
def poisson_inverse(u, mean, p0):
    # inversion; p0 = exp(-mean) is precomputed by callers
    p = p0
    cdf = p
    n = 0
    limit = int(mean + 40.0 * np.sqrt(mean) + 40.0)
    while u > cdf and n < limit:
        n += 1
        p *= mean / n
        cdf += p
    return n


@nb.njit(cache=True)
def fill_cell(seed, cx, cy, cz, mean, p0, side, out):
    """Write the points of one cell into ``out``; return how many there are."""
    key = cell_key(seed, cx, cy, cz)
    n = poisson_inverse(uniform(key, 0), mean, p0)
    if n > out.shape[0]:
        return -n
    for i in range(n):
        out[i, 0] = (cx + uniform(key, 1 + 3 * i)) * side
        out[i, 1] = (cy + uniform(key, 2 + 3 * i)) * side
        out[i, 2] = (cz + uniform(key, 3 + 3 * i)) * side
    return n
