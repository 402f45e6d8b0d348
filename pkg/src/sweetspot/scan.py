"""Interval scan for the contiguous run of largest excess treatment effect.

For effects ``t_1..t_n`` the interval statistic is

    Z(i, j) = (j - i + 1) * (mean(t_i..t_j) - mean(t_1..t_n))
            = sum(t_i..t_j) - (j - i + 1) / n * sum(t_1..t_n).

With ``C`` the cumulative sum (``C_0 = 0``) and ``D_m = C_m - m * C_n / n``,
``Z(i, j) = D_j - D_{i-1}``. Every routine below evaluates Z through the same
``D`` array, so a reported Z equals the one recomputed from its indices.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConstraintError, ValidationError

COMPENSATED_THRESHOLD = 10**6


@dataclass(frozen=True)
class ScanConstraints:
    """Admissible interval lengths ``L = j - i + 1``.

    ``stride`` restricts ``j - i`` to multiples of ``stride``. Fractions, when
    given, override the corresponding absolute length.
    """

    min_len: int = 2
    max_len: Optional[int] = None
    stride: int = 1
    min_fraction: Optional[float] = None
    max_fraction: Optional[float] = None

    def __post_init__(self):
        if self.min_len < 2:
            raise ValidationError("min_len must be at least 2")
        if self.max_len is not None and self.max_len < self.min_len:
            raise ValidationError("min_len must not exceed max_len")
        if self.stride < 1:
            raise ValidationError("stride must be at least 1")
        for name in ("min_fraction", "max_fraction"):
            v = getattr(self, name)
            if v is not None and not 0 < v <= 1:
                raise ValidationError(f"{name} must lie in (0, 1]")
        if (self.min_fraction is not None and self.max_fraction is not None
                and self.min_fraction > self.max_fraction):
            raise ValidationError("min_fraction must not exceed max_fraction")

    def length_bounds(self, n):
        lo = self.min_len
        if self.min_fraction is not None:
            lo = max(2, math.ceil(self.min_fraction * n - 1e-12))
        hi = n if self.max_len is None else min(self.max_len, n)
        if self.max_fraction is not None:
            hi = min(n, math.floor(self.max_fraction * n + 1e-12))
        return lo, hi

    def lengths(self, n):
        lo, hi = self.length_bounds(n)
        return [L for L in range(lo, hi + 1) if (L - 1) % self.stride == 0]

    def unrestricted_above(self, n):
        """True when every length from the minimum up to ``n`` is admissible."""
        _, hi = self.length_bounds(n)
        return self.stride == 1 and hi == n


@dataclass(frozen=True)
class SweetSpotLocation:
    i_hat: int
    j_hat: int
    z_hat: float
    score_lo: float
    score_hi: float

    @property
    def length(self):
        return self.j_hat - self.i_hat + 1


def _effects(seq):
    t = getattr(seq, "effects", seq)
    t = np.asarray(t, dtype=float)
    if t.ndim != 1:
        raise ValidationError("effects must be a vector")
    return t


def centered_prefix(t, compensated_threshold=COMPENSATED_THRESHOLD):
    """``D_m = C_m - m * C_n / n`` along the last axis, with a leading zero column."""
    t = np.asarray(t, dtype=float)
    n = t.shape[-1]
    acc = np.longdouble if n > compensated_threshold else float
    C = np.zeros(t.shape[:-1] + (n + 1,), dtype=acc)
    np.cumsum(t, axis=-1, dtype=acc, out=C[..., 1:])
    C = C.astype(float)
    mean = C[..., -1:] / n
    return C - np.arange(n + 1) * mean


def z_statistic(t, i, j):
    """``Z(i, j)`` for 1-based inclusive indices ``1 <= i < j <= n``."""
    t = _effects(t)
    n = t.size
    if not (isinstance(i, (int, np.integer)) and isinstance(j, (int, np.integer))) or not 1 <= i < j <= n:
        raise ValidationError(f"need 1 <= i < j <= n, got i={i}, j={j}, n={n}")
    D = centered_prefix(t)
    return float(D[j] - D[i - 1])


TIE_ULPS = 64


def tie_tolerance(D):
    """Values of Z closer than this to the row maximum count as ties.

    Mathematically equal intervals (common with integer-valued effects) can
    differ by a few ulps once evaluated in floating point.
    """
    scale = np.max(np.abs(D), axis=-1)
    return TIE_ULPS * np.finfo(float).eps * np.maximum(scale, 1.0)


def scan_batch(T, constraints=ScanConstraints()):
    """Arg-max of Z for each row of ``T``, vectorized over rows, looping over interval lengths.

    Returns ``(z, i, j)`` arrays with 1-based indices. Ties, up to
    :func:`tie_tolerance`, go to the smallest ``i`` and then the smallest ``j``;
    ``z`` is the value at the chosen interval.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    B, n = T.shape
    lengths = constraints.lengths(n)
    if n < 2 or not lengths:
        raise ConstraintError(f"no admissible interval for n={n} under {constraints}")
    D = centered_prefix(T)
    z_max = np.full(B, -np.inf)
    for L in lengths:
        z_max = np.maximum(z_max, np.max(D[:, L:] - D[:, : n + 1 - L], axis=1))
    threshold = z_max - tie_tolerance(D)

    best_i = np.full(B, n + 1, dtype=np.int64)
    best_j = np.zeros(B, dtype=np.int64)
    for L in lengths:
        near = (D[:, L:] - D[:, : n + 1 - L]) >= threshold[:, None]
        start = np.argmax(near, axis=1)
        # lengths ascend, so for an equal start the earlier length already has the smaller j
        upd = near.any(axis=1) & (start + 1 < best_i)
        best_i = np.where(upd, start + 1, best_i)
        best_j = np.where(upd, start + L, best_j)
    rows = np.arange(B)
    return D[rows, best_j] - D[rows, best_i - 1], best_i, best_j


def max_z_batch(T, constraints=ScanConstraints()):
    """Maximum of Z for each row of ``T`` (value only).

    When all lengths from the minimum to ``n`` are admissible the maximum is
    ``max_j (D_j - min_{m <= j - L_min} D_m)``, an O(n) running-minimum pass
    returning the exact floating-point maximum. :func:`scan_batch` may instead
    report a tied interval a few ulps below it (see :func:`tie_tolerance`).
    Other constraint sets fall back to the per-length scan.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    n = T.shape[1]
    if not constraints.unrestricted_above(n):
        return scan_batch(T, constraints)[0]
    lo, _ = constraints.length_bounds(n)
    if n < 2 or lo > n:
        raise ConstraintError(f"no admissible interval for n={n} under {constraints}")
    D = centered_prefix(T)
    run_min = np.minimum.accumulate(D[:, : n + 1 - lo], axis=1)
    return np.max(D[:, lo:] - run_min, axis=1)


def find_sweet_spot(seq, constraints=ScanConstraints()):
    """Locate the maximizing interval of ``seq`` (an EffectSequence or a vector)."""
    t = _effects(seq)
    lo, _ = constraints.length_bounds(t.size)
    if t.size < max(2, lo):
        raise ConstraintError(f"sequence of length {t.size} is shorter than the minimum interval {lo}")
    z, i, j = scan_batch(t[None, :], constraints)
    i, j = int(i[0]), int(j[0])
    scores = getattr(seq, "scores", None)
    if scores is None:
        scores = np.arange(1, t.size + 1, dtype=float)
    return SweetSpotLocation(i, j, float(z[0]), float(scores[i - 1]), float(scores[j - 1]))
