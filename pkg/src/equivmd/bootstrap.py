"""Resampling engine and the percentile, BCa and ABC decision machinery.

Resample ``b`` of a stream is row ``b`` of an index block drawn from the
stream's generator, so any single resample can be regenerated from
``(seed, b)`` alone and batches can be handed to the compiled kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from ._kernels import get_backend
from .distributions import RngSeed, std_normal_cdf, std_normal_quantile
from .errors import AbcNumericalFailure, BcaSingularity, DomainError, EmptyInputError
from .estimators import weighted_paired_statistic

DEFAULT_REPLICATES = 1000
DEFAULT_SEED = 20240229
ABC_STEP = 0.001
BCA_DENOM_TOL = 1e-8
CALIBRATION_BRACKET = (0.001, 0.999)
CALIBRATION_ITERATIONS = 40
MAX_FAILURE_FRACTION = 0.10

# stream labels below a bootstrap seed
_TEST_STREAM, _REF_STREAM, _CALIBRATION_STREAM = 1, 2, 3


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = DEFAULT_REPLICATES
    seed: RngSeed = field(default_factory=lambda: RngSeed(DEFAULT_SEED))
    alpha: float = 0.05

    def __post_init__(self):
        if self.replicates < 100:
            raise DomainError(f"need at least 100 bootstrap replicates, got {self.replicates}")
        if not 0.0 < self.alpha < 0.5:
            raise DomainError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not isinstance(self.seed, RngSeed):
            object.__setattr__(self, "seed", RngSeed(int(self.seed)))

    def with_seed(self, seed: RngSeed) -> "BootstrapConfig":
        return BootstrapConfig(self.replicates, seed, self.alpha)


@dataclass(frozen=True)
class BcaDiagnostics:
    z0: float
    accel: float
    adjusted_level: float
    singular: bool = False


class JackknifeAcceleration(NamedTuple):
    accel: float
    degenerate: bool


def resample_indices(seed: RngSeed, n: int, replicates: int, stream: int = _TEST_STREAM) -> np.ndarray:
    """``(replicates, n)`` block of row indices drawn with replacement."""
    return seed.child(stream).generator().integers(0, n, size=(replicates, n))


def two_sample_indices(seed: RngSeed, n_t: int, n_r: int, replicates: int):
    return (
        resample_indices(seed, n_t, replicates, _TEST_STREAM),
        resample_indices(seed, n_r, replicates, _REF_STREAM),
    )


def resample_two_sample(test, ref, seed: RngSeed, b: int):
    """Resample ``b`` of the two-sample bootstrap, each group independently."""
    xt = np.atleast_2d(np.asarray(test, dtype=float))
    xr = np.atleast_2d(np.asarray(ref, dtype=float))
    it = resample_indices(seed, xt.shape[0], b + 1, _TEST_STREAM)[b]
    ir = resample_indices(seed, xr.shape[0], b + 1, _REF_STREAM)[b]
    return xt[it], xr[ir]


def percentile(values, q: float) -> float:
    """Order statistic of rank ``ceil(q * B)`` (1-based) of the sorted values."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise EmptyInputError("percentile of an empty sequence")
    if not 0.0 < q < 1.0:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    rank = math.ceil(round(q * v.size, 9))
    rank = min(max(rank, 1), v.size)
    return float(np.partition(v, rank - 1)[rank - 1])


def bca_z0(replicates, point_estimate: float) -> float:
    """Bias correction from the strict proportion of replicates below the estimate."""
    r = np.asarray(replicates, dtype=float).reshape(-1)
    b = r.size
    if b == 0:
        raise EmptyInputError("no bootstrap replicates")
    prop = np.count_nonzero(r < point_estimate) / b
    prop = min(max(prop, 1.0 / (b + 1)), b / (b + 1.0))
    return std_normal_quantile(prop)


def acceleration_from_values(theta) -> JackknifeAcceleration:
    """Acceleration from leave-one-out values of a statistic."""
    t = np.asarray(theta, dtype=float).reshape(-1)
    dev = t.mean() - t
    ss = float(np.sum(dev ** 2))
    scale = max(float(np.max(np.abs(t))), 1.0)
    if ss <= (1e-14 * scale) ** 2 * t.size:
        return JackknifeAcceleration(0.0, True)
    return JackknifeAcceleration(float(np.sum(dev ** 3)) / (6.0 * ss ** 1.5), False)


def jackknife_acceleration(test, ref, statistic: Callable) -> JackknifeAcceleration:
    """Delete-one jackknife acceleration over the pooled ``n_t + n_r`` observations.

    Each observation is deleted from the group that owns it and
    ``statistic(test, ref)`` is re-evaluated.
    """
    xt = np.asarray(test, dtype=float)
    xr = np.asarray(ref, dtype=float)
    if xt.shape[0] < 2 or xr.shape[0] < 2:
        raise DomainError("jackknife needs at least 2 observations per group")
    vals = [statistic(np.delete(xt, i, axis=0), xr) for i in range(xt.shape[0])]
    vals += [statistic(xt, np.delete(xr, i, axis=0)) for i in range(xr.shape[0])]
    return acceleration_from_values(vals)


def bca_adjusted_level(z0: float, accel: float, alpha: float) -> float:
    """BCa-adjusted version of the level ``1 - alpha``."""
    z = z0 + std_normal_quantile(1.0 - alpha)
    den = 1.0 - accel * z
    if abs(den) < BCA_DENOM_TOL:
        raise BcaSingularity(f"BCa denominator {den:.3g} vanishes (z0={z0}, accel={accel})")
    return std_normal_cdf(z0 + z / den)


class AbcResult(NamedTuple):
    points: np.ndarray
    t0: float
    sighat: float
    accel: float
    z0: float
    curvature: float


def abcnon(x, stat: Callable, levels, eps: float = ABC_STEP) -> AbcResult:
    """Nonparametric ABC confidence points for a statistic in resampling form.

    Influence components and second derivatives come from central
    differences of ``stat(x, w)`` along ``e_i - w0`` with step ``eps / n``.
    Perturbed weight vectors are renormalized to sum to one.

    This is the generic, slow path; :func:`abc_upper_bound` runs the same
    construction for the paired-difference statistic in the kernels.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    ep = eps / n
    w0 = np.full(n, 1.0 / n)

    def t(w):
        return stat(x, w / w.sum())

    t0 = t(w0)
    t1 = np.empty(n)
    t2 = np.empty(n)
    for i in range(n):
        di = -w0.copy()
        di[i] += 1.0
        tp = t(w0 + ep * di)
        tm = t(w0 - ep * di)
        t1[i] = (tp - tm) / (2 * ep)
        t2[i] = (tp - 2 * t0 + tm) / ep ** 2
    sighat = math.sqrt(float(np.sum(t1 ** 2))) / n
    accel = float(np.sum(t1 ** 3)) / (6 * n ** 3 * sighat ** 3)
    delta = t1 / (n ** 2 * sighat)
    cq = (t(w0 + ep * delta) - 2 * t0 + t(w0 - ep * delta)) / (2 * sighat * ep ** 2)
    bhat = float(np.sum(t2)) / (2 * n ** 2)
    curv = bhat / sighat - cq
    z0 = std_normal_quantile(2 * std_normal_cdf(accel) * std_normal_cdf(-curv))
    points = []
    for lev in np.atleast_1d(levels):
        z = z0 + std_normal_quantile(float(lev))
        za = z / (1 - accel * z) ** 2
        points.append(t(w0 + za * delta))
    return AbcResult(np.array(points), t0, sighat, accel, z0, curv)


def paired_abc_reference(diffs, d, levels, eps: float = ABC_STEP) -> AbcResult:
    """:func:`abcnon` applied to the paired-difference statistic."""
    d = np.asarray(d, dtype=float)
    return abcnon(diffs, lambda x, w: weighted_paired_statistic(x, w, d), levels, eps)


def _check_diffs(diffs, d):
    x = np.asarray(diffs, dtype=float)
    if x.ndim != 2:
        raise DomainError("paired differences must be an (n, p) array")
    n, p = x.shape
    if n <= p + 1:
        raise DomainError(f"ABC needs more than p + 1 = {p + 1} paired differences, got {n}")
    return x, np.asarray(d, dtype=float)


def abc_upper_bound(diffs, d, level: float, step: float = ABC_STEP) -> float:
    """ABC upper confidence endpoint at `level` for the paired-difference statistic.

    Raises
    ------
    AbcNumericalFailure
        If any perturbed weighted covariance fails to be positive-definite.
    """
    x, d = _check_diffs(diffs, d)
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    ident = np.arange(x.shape[0])[None, :]
    val = float(get_backend().abc_bounds(x, ident, d, step, [level])[0, 0])
    if not math.isfinite(val):
        raise AbcNumericalFailure("ABC evaluation hit a singular weighted covariance")
    return val


def abc_point_estimate(diffs, d) -> float:
    x, d = _check_diffs(diffs, d)
    return weighted_paired_statistic(x, np.full(x.shape[0], 1.0 / x.shape[0]), d)


class Calibration(NamedTuple):
    levels: np.ndarray
    failures: int


def calibration_levels(diffs, d, config: BootstrapConfig, step: float = ABC_STEP) -> Calibration:
    """Per-resample crossing levels for ABC calibration (failures are NaN)."""
    x, d = _check_diffs(diffs, d)
    n = x.shape[0]
    target = abc_point_estimate(x, d)
    idx = resample_indices(config.seed, n, config.replicates, _CALIBRATION_STREAM)
    lo, hi = CALIBRATION_BRACKET
    lam = get_backend().abc_calibration_levels(
        x, idx, d, step, target, lo, hi, CALIBRATION_ITERATIONS
    )
    failures = int(np.count_nonzero(~np.isfinite(lam)))
    return Calibration(lam, failures)


def calibrate_level(diffs, d, alpha: float, config: BootstrapConfig, step: float = ABC_STEP) -> float:
    """Calibrated confidence level for the ABC upper bound.

    For each outer resample, the level at which its ABC upper bound
    equals the original point estimate is found by bisection; the
    ``1 - alpha`` empirical quantile of those levels is returned.
    """
    cal = calibration_levels(diffs, d, config, step)
    if cal.failures > MAX_FAILURE_FRACTION * cal.levels.size:
        raise AbcNumericalFailure(
            f"{cal.failures} of {cal.levels.size} calibration resamples failed"
        )
    return percentile(cal.levels[np.isfinite(cal.levels)], 1.0 - alpha)
