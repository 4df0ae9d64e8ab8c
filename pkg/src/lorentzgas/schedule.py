"""Scaling sequences, their admissibility, and the angular helpers they need."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ScheduleError

DEFAULT_AXIS = (0.0, 0.0, 1.0)
MODES = ("thm1", "thm2", "thm3")


def radius_of(eps, d=3):
    """Scatterer radius ``eps**(d/(d-1))`` in the Boltzmann-Grad scaling."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if d < 2:
        raise ValueError("d must be at least 2")
    return eps ** (d / (d - 1))


def min_angle(velocities):
    """Smallest pairwise angle between unit vectors.

    Uses ``2 arcsin(|u - v| / 2)``, which equals ``2 arcsin sqrt((1 - u.v)/2)``
    for unit vectors but keeps full precision for nearly parallel pairs.
    """
    v = np.asarray(velocities, float)
    if v.ndim != 2 or len(v) < 2:
        raise ValueError("need at least two vectors")
    if np.any(np.abs(np.linalg.norm(v, axis=1) - 1.0) > 1e-9):
        raise ValueError("velocities must be unit vectors")
    i, j = np.triu_indices(len(v), 1)
    chord = np.linalg.norm(v[i] - v[j], axis=1)
    return float(2.0 * np.arcsin(np.clip(chord.min() / 2.0, 0.0, 1.0)))


def _rotation_to(e):
    """Orthonormal matrix whose third column is ``e``."""
    e = np.asarray(e, float)
    e = e / np.linalg.norm(e)
    helper = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    a = np.cross(e, helper)
    a /= np.linalg.norm(a)
    b = np.cross(e, a)
    return np.column_stack([a, b, e])


def sample_cap(rng, e=DEFAULT_AXIS, beta=math.pi, size=None):
    """Uniform (surface measure) sample from the cap of half-angle ``beta`` about ``e``.

    The cosine of the polar angle is uniform on ``[cos beta, 1]`` (Archimedes);
    it is drawn as ``1 - 2 sin^2(beta/2) U`` to stay accurate for small caps.
    """
    if not 0.0 < beta <= math.pi:
        raise ValueError(f"beta must lie in (0, pi], got {beta}")
    n = 1 if size is None else int(size)
    h = 2.0 * math.sin(beta / 2.0) ** 2
    one_minus_c = h * rng.random(n)
    c = 1.0 - one_minus_c
    s = np.sqrt(np.clip(one_minus_c * (2.0 - one_minus_c), 0.0, None))
    phi = 2.0 * math.pi * rng.random(n)
    local = np.column_stack([s * np.cos(phi), s * np.sin(phi), c])
    out = local @ _rotation_to(e).T
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out[0] if size is None else out


def spread_velocities(n, w, e=DEFAULT_AXIS):
    """``n`` unit vectors on a great circle through ``e`` with consecutive angle ``w``.

    Their minimum pairwise angle is exactly ``w`` as long as ``(n-1) w <= pi``.
    """
    if n < 1 or w <= 0 or (n - 1) * w > math.pi:
        raise ValueError("need n >= 1 and 0 < (n-1) w <= pi")
    ang = w * np.arange(n)
    local = np.column_stack([np.sin(ang), np.zeros(n), np.cos(ang)])
    return local @ _rotation_to(e).T


@dataclass(frozen=True)
class ScalingRow:
    n: int
    eps: float
    T: float
    beta: float
    N: int
    e: tuple = DEFAULT_AXIS
    d: int = 3
    r: float = field(init=False)
    alpha: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if self.T <= 0 or self.N < 1:
            raise ValueError("T must be positive and N at least 1")
        r = radius_of(self.eps, self.d)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "alpha",
                           r ** (1 / self.d) * self.beta ** ((self.d - 1) / self.d))

    @property
    def rT(self):
        return self.r * self.T


def geometric_schedule(n_min=1, n_max=30, eps_ratio=0.5, T_exponent=0.5,
                       beta_exponent=0.5, N_power=2, e=DEFAULT_AXIS):
    """``eps_n = q^n``, ``T_n = eps_n^-a``, ``beta_n = eps_n^b``, ``N_n = n^p``."""
    if n_min < 1 or n_max < n_min:
        raise ValueError("need 1 <= n_min <= n_max")
    rows = []
    for n in range(n_min, n_max + 1):
        eps = eps_ratio**n
        rows.append(ScalingRow(n, eps, eps**-T_exponent, min(1.0, eps**beta_exponent),
                               int(round(n**N_power)), tuple(e)))
    return rows


@dataclass
class ScheduleReport:
    mode: str
    rows: list
    per_row: list
    flags: dict
    admissible: bool
    budget: float

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            cols = list(self.per_row[0].keys())
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for rec in self.per_row:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})


def _tail(terms):
    """Terms ratio diagnostics over the last third of a sequence."""
    terms = np.asarray(terms, float)
    k = max(2, math.ceil(len(terms) / 3))
    tail = terms[-k:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = tail[1:] / tail[:-1]
    ratios = np.where(np.isfinite(ratios), ratios, np.inf)
    q = float(ratios[-1]) if len(ratios) else math.inf
    decreasing = bool(len(ratios) and np.all(ratios < 1.0))
    rest = terms[-1] * q / (1.0 - q) if decreasing else math.inf
    return decreasing, q, float(terms.sum()) + rest


def _to_zero(terms):
    """Tail strictly decreasing and its Aitken-extrapolated limit at most half the last term."""
    terms = np.asarray(terms, float)
    if not _tail(terms)[0]:
        return False
    x0, x1, x2 = terms[-3:]
    d2 = x2 - 2.0 * x1 + x0
    limit = x2 - (x2 - x1) ** 2 / d2 if d2 != 0 else x2
    return bool(max(limit, 0.0) <= 0.5 * x2)


def check_schedule(rows, mode="thm3", budget=10.0):
    """Finite-horizon admissibility report for a schedule.

    A limit ``x_n -> 0`` is accepted when the last third of the terms is
    strictly decreasing and extrapolates to (nearly) zero; a summable series
    when its last third is strictly decreasing.  Summable series must also
    have partial sum plus geometric tail estimate within ``budget``.  The
    ``N_n``-weighted series is reported with the same ratio diagnostic.
    """
    if not rows:
        raise ScheduleError("schedule has no rows")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if len(rows) < 3:
        raise ScheduleError("need at least three rows to judge a trend")
    d = rows[0].d
    n = np.array([row.n for row in rows], float)
    rT = np.array([row.rT for row in rows])
    r_beta = np.array([(row.r / row.beta) ** ((d - 1) / d) for row in rows])
    N = np.array([row.N for row in rows], float)
    logn = np.log(n)
    sqip_terms = logn * rT + logn**2 * r_beta
    strong_terms = N * rT + N**2 * r_beta
    with np.errstate(divide="ignore"):
        n_over_log = np.where(n > 1, N / np.where(n > 1, logn, 1.0), np.inf)
    flags = {}
    flags["rT_le_1"] = bool(np.all(rT <= 1.0 + 1e-12))
    flags["T_increasing"] = bool(np.all(np.diff([row.T for row in rows]) > 0))
    flags["rT_to_0"] = _to_zero(rT)
    flags["ipip_to_0"] = _to_zero([row.r * (row.T + 1.0 / row.beta) for row in rows])
    sq_dec, sq_q, sq_total = _tail(sqip_terms)
    st_dec, st_q, st_total = _tail(strong_terms)
    flags["sqip_tail_decreasing"] = sq_dec
    flags["sqip_within_budget"] = bool(sq_total <= budget)
    flags["strong_tail_decreasing"] = st_dec
    flags["N_increasing"] = bool(np.all(np.diff(N) > 0))
    finite = np.isfinite(n_over_log)
    flags["N_over_log_increasing"] = bool(np.all(np.diff(n_over_log[finite]) > 0))

    base = flags["rT_le_1"] and flags["T_increasing"]
    if mode == "thm1":
        ok = base and flags["rT_to_0"]
    elif mode == "thm2":
        ok = base and flags["ipip_to_0"]
    else:
        ok = (base and sq_dec and flags["sqip_within_budget"] and st_dec
              and flags["N_increasing"] and flags["N_over_log_increasing"])

    per_row = []
    sq_cum = np.cumsum(sqip_terms)
    st_cum = np.cumsum(strong_terms)
    for i, row in enumerate(rows):
        per_row.append({
            "n": row.n, "eps": row.eps, "r": row.r, "T": row.T, "beta": row.beta,
            "N": row.N, "alpha": row.alpha, "rT": float(rT[i]),
            "sqip_term": float(sqip_terms[i]), "sqip_partial": float(sq_cum[i]),
            "strong_term": float(strong_terms[i]), "strong_partial": float(st_cum[i]),
            "rT_ok": int(rT[i] <= 1.0 + 1e-12),
            "N_ok": int(i == 0 or row.N > rows[i - 1].N),
        })
    flags["sqip_tail_ratio"] = sq_q
    flags["strong_tail_ratio"] = st_q
    flags["sqip_total_estimate"] = float(sq_total)
    flags["strong_total_estimate"] = float(st_total)
    return ScheduleReport(mode, list(rows), per_row, flags, bool(ok), budget)


def ratio_onset(terms, start_index=1):
    """First index from which every consecutive term ratio stays below 1."""
    terms = np.asarray(terms, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = terms[1:] / terms[:-1]
    bad = np.flatnonzero(ratios >= 1.0)
    return start_index if len(bad) == 0 else start_index + int(bad[-1]) + 1
