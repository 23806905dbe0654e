"""Two-sample statistics built on the pooled covariance.

Samples are plain ``(n, p)`` arrays, rows are observations.  The test
product is always passed first, the reference product second.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    DomainError,
    NotSpdError,
    UnequalSampleSizesError,
    WeightError,
)
from .linalg import SPD_TOLERANCE, SpdFactor, cholesky_spd, quadratic_form_inv


def as_sample(x, name="sample") -> np.ndarray:
    """Validate and return a float ``(n, p)`` observation matrix."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionMismatchError(f"{name} must be a 2-D array, got {a.ndim} dimensions")
    if a.shape[0] < 2:
        raise DomainError(f"need at least 2 observations per group, {name} has {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} contains non-finite entries")
    return a


def _vector(d, p, name="d") -> np.ndarray:
    v = np.asarray(d, dtype=float).reshape(-1)
    if v.size != p:
        raise DimensionMismatchError(f"{name} has length {v.size}, data have {p} variables")
    return v


@dataclass(frozen=True)
class PooledStats:
    mean_t: np.ndarray
    mean_r: np.ndarray
    pooled_cov: np.ndarray
    pooled_factor: SpdFactor
    n_t: int
    n_r: int

    @property
    def p(self) -> int:
        return self.mean_t.size

    @property
    def n(self) -> int:
        return self.n_t + self.n_r


def pooled_stats(test, ref) -> PooledStats:
    """Group means and the pooled covariance ``((n_t-1) S_t + (n_r-1) S_r) / (n_t + n_r - 2)``."""
    xt = as_sample(test, "test")
    xr = as_sample(ref, "reference")
    if xt.shape[1] != xr.shape[1]:
        raise DimensionMismatchError(
            f"test has {xt.shape[1]} variables but reference has {xr.shape[1]}"
        )
    n_t, n_r = xt.shape[0], xr.shape[0]
    mt = xt.mean(axis=0)
    mr = xr.mean(axis=0)
    ct = xt - mt
    cr = xr - mr
    cov = (ct.T @ ct + cr.T @ cr) / (n_t + n_r - 2)
    return PooledStats(mt, mr, cov, cholesky_spd(cov), n_t, n_r)


def mahalanobis_sq(s: PooledStats) -> float:
    return quadratic_form_inv(s.pooled_factor, s.mean_t - s.mean_r)


def j_scale(n_t: int, n_r: int, p: int) -> float:
    """Constant turning the plug-in squared distance into the F-distributed J²."""
    dof = n_t + n_r - p - 1
    if dof <= 0:
        raise DomainError(f"n_t + n_r - p - 1 must be positive, got {dof}")
    return dof / ((n_t + n_r - 2) * p) * (n_t * n_r / (n_t + n_r))


def j_squared(s: PooledStats, d_m_sq: float) -> float:
    return j_scale(s.n_t, s.n_r, s.p) * d_m_sq


def ncp_scale(n_t: int, n_r: int) -> float:
    """``n_t n_r / (n_t + n_r)``, the factor mapping a squared distance to an F noncentrality."""
    return n_t * n_r / (n_t + n_r)


def margin_hat(s: PooledStats, d) -> float:
    """Data-driven margin ``d' S^{-1} d`` with the pooled covariance ``S``."""
    return quadratic_form_inv(s.pooled_factor, _vector(d, s.p))


def correction_terms(n_t, n_r, p):
    """Multiplier ``(n-p-3)/(n-2)`` and offset ``p (1/n_t + 1/n_r)`` of the bias correction.

    Works elementwise on arrays of group sizes.
    """
    n = np.asarray(n_t) + np.asarray(n_r)
    return (n - p - 3) / (n - 2), p * (1.0 / np.asarray(n_t) + 1.0 / np.asarray(n_r))


def corrected_difference(a_hat, n_t, n_r, p):
    """Bias-corrected difference statistic from the uncorrected one."""
    factor, offset = correction_terms(n_t, n_r, p)
    return factor * a_hat - offset


@dataclass(frozen=True)
class DiffStatistic:
    """Point statistics for one pair of samples.

    ``a_hat = d_m_sq - margin_sq``; ``a_hat_bc`` is the bias-corrected
    version, or equal to ``a_hat`` when ``degenerate_correction`` is set
    (``n - p - 3 <= 0``).
    """

    d_m_sq: float
    margin_sq: float
    a_hat: float
    a_hat_bc: float
    j_sq: float
    n_t: int
    n_r: int
    p: int
    degenerate_correction: bool = False

    @property
    def d_m_sq_bc(self) -> float:
        factor, offset = correction_terms(self.n_t, self.n_r, self.p)
        return float(factor * self.d_m_sq - offset)

    @property
    def margin_sq_bc(self) -> float:
        factor, _ = correction_terms(self.n_t, self.n_r, self.p)
        return float(factor * self.margin_sq)

    def as_dict(self) -> dict:
        return {
            "d_m_sq": self.d_m_sq,
            "margin_sq": self.margin_sq,
            "a_hat": self.a_hat,
            "a_hat_bc": self.a_hat_bc,
            "j_sq": self.j_sq,
            "d_m_sq_bc": self.d_m_sq_bc,
            "margin_sq_bc": self.margin_sq_bc,
            "degenerate_correction": self.degenerate_correction,
        }


def diff_statistic_from(s: PooledStats, d) -> DiffStatistic:
    dm = mahalanobis_sq(s)
    mg = margin_hat(s, d)
    a_hat = dm - mg
    degenerate = s.n - s.p - 3 <= 0
    a_bc = a_hat if degenerate else float(corrected_difference(a_hat, s.n_t, s.n_r, s.p))
    return DiffStatistic(
        d_m_sq=dm,
        margin_sq=mg,
        a_hat=a_hat,
        a_hat_bc=a_bc,
        j_sq=j_squared(s, dm),
        n_t=s.n_t,
        n_r=s.n_r,
        p=s.p,
        degenerate_correction=degenerate,
    )


def diff_statistic(test, ref, d) -> DiffStatistic:
    return diff_statistic_from(pooled_stats(test, ref), d)


def leave_one_out(test, ref, d):
    """Delete-one values of the squared distance and margin over both groups.

    Row ``i < n_t`` deletes test observation ``i``; later rows delete
    reference observations.  Uses rank-one downdates of the group
    scatter matrices.

    Returns
    -------
    dm_sq, margin_sq, n_t, n_r : ndarray, shape (n_t + n_r,)
        NaN where the downdated covariance is not SPD.
    """
    from ._kernels._pykernels import _cholesky, _solve_lower_sq, _max_diag

    xt = as_sample(test, "test")
    xr = as_sample(ref, "reference")
    n_t, n_r = xt.shape[0], xr.shape[0]
    d = _vector(d, xt.shape[1])
    mt, mr = xt.mean(axis=0), xr.mean(axis=0)
    et, er = xt - mt, xr - mr
    st, sr = et.T @ et, er.T @ er

    def drop(e, m, n):
        # mean and scatter with each row removed in turn
        means = m - e / (n - 1)
        outer = np.einsum("ki,kj->kij", e, e)
        return means, -outer * (n / (n - 1))

    mt_del, st_del = drop(et, mt, n_t)
    mr_del, sr_del = drop(er, mr, n_r)
    diff = np.concatenate([mt_del - mr, mt - mr_del])
    scatter = np.concatenate([st + sr + st_del, st + sr + sr_del])
    nt_arr = np.concatenate([np.full(n_t, n_t - 1), np.full(n_r, n_t)])
    nr_arr = np.concatenate([np.full(n_t, n_r), np.full(n_r, n_r - 1)])
    pooled = scatter / (nt_arr + nr_arr - 2)[:, None, None]
    lower, ok = _cholesky(pooled, SPD_TOLERANCE * _max_diag(pooled))
    dm = _solve_lower_sq(lower, diff)
    mg = _solve_lower_sq(lower, d)
    dm[~ok] = np.nan
    mg[~ok] = np.nan
    return dm, mg, nt_arr, nr_arr


def paired_differences(test, ref) -> np.ndarray:
    """Row-wise ``test[i] - ref[i]``; the pairing is by observation index."""
    xt = as_sample(test, "test")
    xr = as_sample(ref, "reference")
    if xt.shape[0] != xr.shape[0]:
        raise UnequalSampleSizesError(
            f"paired differences need equal group sizes, got {xt.shape[0]} and {xr.shape[0]}"
        )
    if xt.shape[1] != xr.shape[1]:
        raise DimensionMismatchError("groups have different numbers of variables")
    return xt - xr


def paired_diff_statistic(test, ref, d) -> float:
    """``xbar' S_c^{-1} xbar - d' S_c^{-1} d`` on paired differences.

    ``S_c`` is half the unbiased sample covariance of the differences,
    i.e. an estimate of the common per-group covariance.
    """
    x = paired_differences(test, ref)
    n_c = x.shape[0]
    d = _vector(d, x.shape[1])
    xbar = x.mean(axis=0)
    e = x - xbar
    s_c = 0.5 * (e.T @ e) / (n_c - 1)
    factor = cholesky_spd(s_c)
    return quadratic_form_inv(factor, xbar) - quadratic_form_inv(factor, d)


def resampling_form_statistic(diffs, weights, d) -> float:
    """Weighted (plug-in) version of :func:`paired_diff_statistic`.

    ``xbar(w) = sum w_i x_i`` and ``S_c(w) = 1/2 sum w_i (x_i - xbar(w))(x_i - xbar(w))'``
    with no small-sample correction.  Positive-definiteness of ``S_c(w)``
    is judged relative to the scale of the uniformly weighted covariance,
    so weights concentrating on too few points raise :class:`NotSpdError`.
    """
    x = np.asarray(diffs, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatchError("diffs must be an (n, p) array")
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != x.shape[0]:
        raise WeightError(f"{w.size} weights for {x.shape[0]} points")
    if np.any(w < 0):
        raise WeightError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise WeightError(f"weights sum to {w.sum()!r}, not 1")
    return weighted_paired_statistic(x, w, _vector(d, x.shape[1]))


def weighted_paired_statistic(x, w, d) -> float:
    """Resampling-form statistic without weight validation.

    ABC evaluates the statistic slightly outside the probability simplex
    (signed weights that still sum to one), which this accepts.
    """
    c = x.mean(axis=0)
    z = x - c
    ref_scale = 0.5 * float(np.max(np.diag(z.T @ z))) / x.shape[0]
    m1 = w @ z
    zc = z - m1
    s_c = 0.5 * (zc.T * w) @ zc
    top = float(np.max(np.diag(s_c)))
    if not top > 0:
        raise NotSpdError("weighted covariance has no positive variance")
    factor = cholesky_spd(s_c, tol=SPD_TOLERANCE * ref_scale / top)
    xbar = c + m1
    return quadratic_form_inv(factor, xbar) - quadratic_form_inv(factor, d)
