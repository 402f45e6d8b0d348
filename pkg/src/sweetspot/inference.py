"""Permutation calibration of the scan maximum and bootstrap debiasing of the in-spot effect."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._rng import replicate_streams
from .errors import ValidationError
from .scan import ScanConstraints, _effects, max_z_batch, scan_batch

PLUGIN = "plugin"
ADD_ONE = "add_one"
ESTIMATORS = (PLUGIN, ADD_ONE)
QUANTILES = (0.025, 0.5, 0.975)

_CHUNK = 256


def naive_cate(seq, i, j):
    """Mean effect inside ``[i, j]`` (1-based) and outside it.

    The outside mean is ``None`` when the interval covers the whole sequence.
    """
    t = _effects(seq)
    n = t.size
    if not 1 <= i < j <= n:
        raise ValidationError(f"need 1 <= i < j <= n, got i={i}, j={j}, n={n}")
    inside = t[i - 1 : j]
    outside = np.concatenate([t[: i - 1], t[j:]])
    return float(inside.mean()), (float(outside.mean()) if outside.size else None)


def p_value_from_null(null_max_z, z_hat, estimator=PLUGIN):
    if estimator not in ESTIMATORS:
        raise ValidationError(f"unknown estimator {estimator!r}")
    null_max_z = np.asarray(null_max_z)
    k = int(np.count_nonzero(null_max_z >= z_hat))
    B = null_max_z.size
    return k / B if estimator == PLUGIN else (k + 1) / (B + 1)


@dataclass(frozen=True, eq=False)
class PermutationResult:
    p_value: float
    n_permutations: int
    null_max_z: np.ndarray
    z_hat: float
    estimator: str = PLUGIN

    @property
    def n_exceed(self):
        return int(np.count_nonzero(self.null_max_z >= self.z_hat))

    def summary(self):
        q = np.quantile(self.null_max_z, QUANTILES)
        return {
            "p_value": self.p_value,
            "estimator": self.estimator,
            "n_permutations": self.n_permutations,
            "n_exceed": self.n_exceed,
            "z_hat": self.z_hat,
            "null_mean": float(self.null_max_z.mean()),
            "null_quantiles": dict(zip(("q025", "q500", "q975"), q.tolist())),
        }


def permutation_test(seq, z_hat, constraints=ScanConstraints(), n_permutations=1000, seed=0,
                     estimator=PLUGIN):
    """Null distribution of the scan maximum under random reorderings of the effects.

    Permutation ``b`` is drawn from its own substream of ``seed``; scores are
    held fixed and each permuted sequence is re-scanned under ``constraints``.
    The p-value counts permuted maxima ``>= z_hat``.
    """
    if n_permutations < 1:
        raise ValidationError("n_permutations must be at least 1")
    if estimator not in ESTIMATORS:
        raise ValidationError(f"unknown estimator {estimator!r}")
    t = _effects(seq)
    null = np.empty(n_permutations)
    streams = replicate_streams(seed, "permutation", n_permutations)
    for start in range(0, n_permutations, _CHUNK):
        stop = min(start + _CHUNK, n_permutations)
        block = np.stack([next(streams).permutation(t) for _ in range(start, stop)])
        null[start:stop] = max_z_batch(block, constraints)
    null.flags.writeable = False
    return PermutationResult(p_value_from_null(null, z_hat, estimator), n_permutations, null,
                             float(z_hat), estimator)


def debias_estimate(tau_hat, tau_boot_mean):
    """``(bias, corrected)`` with ``corrected = 2 * tau_hat - tau_boot_mean``."""
    return tau_boot_mean - tau_hat, 2 * tau_hat - tau_boot_mean


@dataclass(frozen=True, eq=False)
class DebiasResult:
    tau_hat: float
    tau_boot_mean: float
    bias_hat: float
    tau_corrected: float
    tau_outside: Optional[float]
    boot_i: np.ndarray
    boot_j: np.ndarray
    boot_tau: np.ndarray
    boot_tau_outside: np.ndarray
    tau_outside_boot_mean: Optional[float] = None
    tau_outside_corrected: Optional[float] = None

    @property
    def n_bootstraps(self):
        return self.boot_tau.size

    def location_quantiles(self):
        return {
            "i": dict(zip(("q025", "q500", "q975"), np.quantile(self.boot_i, QUANTILES).tolist())),
            "j": dict(zip(("q025", "q500", "q975"), np.quantile(self.boot_j, QUANTILES).tolist())),
        }


def _resample_blocks(t, i, j, inside_idx, outside_idx):
    inside = t[i - 1 : j]
    outside = np.concatenate([t[: i - 1], t[j:]])
    B = inside_idx.shape[0]
    T = np.empty((B, t.size))
    T[:, i - 1 : j] = inside[inside_idx]
    rest = outside[outside_idx]
    T[:, : i - 1] = rest[:, : i - 1]
    T[:, j:] = rest[:, i - 1 :]
    return T


def _replicate_estimates(T, constraints):
    _, bi, bj = scan_batch(T, constraints)
    n = T.shape[1]
    C = np.zeros((T.shape[0], n + 1))
    np.cumsum(T, axis=1, out=C[:, 1:])
    rows = np.arange(T.shape[0])
    in_sum = C[rows, bj] - C[rows, bi - 1]
    length = bj - bi + 1
    tau = in_sum / length
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(length < n, (C[:, -1] - in_sum) / np.maximum(n - length, 1), np.nan)
    return bi, bj, tau, out


def debias_from_resamples(seq, loc, constraints, inside_idx, outside_idx):
    """Aggregate bootstrap replicates given explicit resampling indices.

    ``inside_idx`` has shape ``(B, j - i + 1)`` and indexes the in-spot pool;
    ``outside_idx`` has shape ``(B, n - (j - i + 1))`` and indexes the
    out-of-spot pool (positions before the spot first, then after).
    """
    t = _effects(seq)
    i, j = loc.i_hat, loc.j_hat
    inside_idx = np.atleast_2d(inside_idx)
    outside_idx = np.atleast_2d(outside_idx).reshape(inside_idx.shape[0], -1)
    bi_all, bj_all, tau_all, out_all = [], [], [], []
    for start in range(0, inside_idx.shape[0], _CHUNK):
        T = _resample_blocks(t, i, j, inside_idx[start : start + _CHUNK], outside_idx[start : start + _CHUNK])
        bi, bj, tau, out = _replicate_estimates(T, constraints)
        bi_all.append(bi)
        bj_all.append(bj)
        tau_all.append(tau)
        out_all.append(out)
    boot_i = np.concatenate(bi_all)
    boot_j = np.concatenate(bj_all)
    boot_tau = np.concatenate(tau_all)
    boot_out = np.concatenate(out_all)
    tau_hat, tau_out = naive_cate(t, i, j)
    tau_boot_mean = float(boot_tau.mean())
    bias, corrected = debias_estimate(tau_hat, tau_boot_mean)
    out_mean = out_corr = None
    if tau_out is not None and np.any(np.isfinite(boot_out)):
        out_mean = float(np.nanmean(boot_out))
        out_corr = 2 * tau_out - out_mean
    for a in (boot_i, boot_j, boot_tau, boot_out):
        a.flags.writeable = False
    return DebiasResult(tau_hat, tau_boot_mean, bias, corrected, tau_out, boot_i, boot_j, boot_tau,
                        boot_out, out_mean, out_corr)


def bootstrap_debias(seq, loc, constraints=ScanConstraints(), n_bootstraps=1000, seed=0):
    """Parametric-bootstrap bias correction of the in-spot mean effect.

    Each replicate resamples the in-spot positions from the in-spot values and
    the remaining positions from the remaining values (with replacement),
    re-locates the spot on the replicate and records its in-spot mean. The
    bias estimate is the replicate mean minus the observed in-spot mean.
    """
    if n_bootstraps < 1:
        raise ValidationError("n_bootstraps must be at least 1")
    t = _effects(seq)
    m = loc.j_hat - loc.i_hat + 1
    if m >= t.size:
        raise ValidationError("sweet spot covers the whole sequence; nothing outside to resample")
    inside_idx = np.empty((n_bootstraps, m), dtype=np.int64)
    outside_idx = np.empty((n_bootstraps, t.size - m), dtype=np.int64)
    for b, rng in enumerate(replicate_streams(seed, "bootstrap", n_bootstraps)):
        inside_idx[b] = rng.integers(0, m, m)
        outside_idx[b] = rng.integers(0, t.size - m, t.size - m)
    return debias_from_resamples(t, loc, constraints, inside_idx, outside_idx)


def write_null_csv(perm, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "max_z"])
        for b, z in enumerate(perm.null_max_z):
            w.writerow([b, repr(float(z))])
    return path


def write_bootstrap_csv(debias, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "i", "j", "tau_in", "tau_out"])
        for b in range(debias.n_bootstraps):
            out = float(debias.boot_tau_outside[b])
            w.writerow([b, int(debias.boot_i[b]), int(debias.boot_j[b]), repr(float(debias.boot_tau[b])),
                        repr(out) if np.isfinite(out) else ""])
    return path
