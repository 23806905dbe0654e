"""Vectorized numpy implementation of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_ckernels`` module.  Both follow the same arithmetic recipe (two-pass
centred moments, unpivoted Cholesky with a scale-relative pivot floor,
moment-update finite differences for ABC) so their outputs agree to
rounding error.  Failed evaluations are reported as NaN, never raised.
"""

from __future__ import annotations

import numpy as np
from scipy import special

PIVOT_TOL = 1e-12
BCA_DENOM_TOL = 1e-8


def _cholesky(a, floor):
    """Batched unpivoted Cholesky.  Returns ``(lower, ok)``.

    `floor` broadcasts against ``a.shape[:-2]``; a pivot at or below it
    marks that matrix as failed (its factor is then garbage).
    """
    p = a.shape[-1]
    lower = np.zeros_like(a)
    ok = np.ones(a.shape[:-2], dtype=bool)
    for j in range(p):
        lj = lower[..., j, :j]
        pivot = a[..., j, j] - np.einsum("...k,...k->...", lj, lj)
        ok &= pivot > floor
        root = np.sqrt(np.where(pivot > 0, pivot, 1.0))
        lower[..., j, j] = root
        if j + 1 < p:
            below = a[..., j + 1:, j] - np.einsum("...ik,...k->...i", lower[..., j + 1:, :j], lj)
            lower[..., j + 1:, j] = below / root[..., None]
    return lower, ok


def _solve_lower_sq(lower, v):
    """``|L^{-1} v|^2`` for batched ``L`` and ``v`` (``v`` may broadcast)."""
    p = lower.shape[-1]
    v = np.broadcast_to(v, lower.shape[:-1])
    y = np.empty(lower.shape[:-1])
    for i in range(p):
        acc = v[..., i] - np.einsum("...k,...k->...", lower[..., i, :i], y[..., :i])
        y[..., i] = acc / lower[..., i, i]
    return np.einsum("...i,...i->...", y, y)


def _max_diag(a):
    return np.max(np.diagonal(a, axis1=-2, axis2=-1), axis=-1)


def boot_pooled(xt, xr, idx_t, idx_r, d):
    """Mahalanobis distance and margin for each two-sample resample.

    Parameters
    ----------
    xt, xr : ndarray, shape (n_t, p) and (n_r, p)
    idx_t, idx_r : ndarray of int, shape (B, n_t) and (B, n_r)
        Row indices of each resample.
    d : ndarray, shape (p,)

    Returns
    -------
    dm_sq, margin_sq : ndarray, shape (B,)
        NaN where the pooled covariance of the resample is not SPD.
    """
    xt = np.asarray(xt, dtype=float)
    xr = np.asarray(xr, dtype=float)
    d = np.asarray(d, dtype=float)
    n_t, n_r = idx_t.shape[1], idx_r.shape[1]
    gt = xt[idx_t]
    gr = xr[idx_r]
    mt = gt.mean(axis=1)
    mr = gr.mean(axis=1)
    ct = gt - mt[:, None, :]
    cr = gr - mr[:, None, :]
    scatter = np.einsum("bki,bkj->bij", ct, ct) + np.einsum("bki,bkj->bij", cr, cr)
    pooled = scatter / (n_t + n_r - 2)
    lower, ok = _cholesky(pooled, PIVOT_TOL * _max_diag(pooled))
    dm = _solve_lower_sq(lower, mt - mr)
    mg = _solve_lower_sq(lower, d)
    dm[~ok] = np.nan
    mg[~ok] = np.nan
    return dm, mg


def _paired_stat(c, m1, m2, d, floor):
    """Statistic from centred weighted moments; NaN where the covariance fails."""
    mean = c + m1
    cov = 0.5 * (m2 - m1[..., :, None] * m1[..., None, :])
    lower, ok = _cholesky(cov, floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = _solve_lower_sq(lower, mean) - _solve_lower_sq(lower, d)
    return np.where(ok, val, np.nan)


class _AbcFit:
    """ABC constants for a batch of one-sample datasets ``y[b]``."""

    def __init__(self, y, d, eps):
        bsz, n, p = y.shape
        self.d = d
        self.c = y.mean(axis=1)
        z = y - self.c[:, None, :]
        zz = np.einsum("bki,bkj->bkij", z, z)
        m0 = zz.mean(axis=1)
        self.m0 = m0
        self.floor = PIVOT_TOL * _max_diag(0.5 * m0)
        zero = np.zeros((bsz, p))
        t0 = _paired_stat(self.c, zero, m0, d, self.floor)
        self.t0 = t0
        ep = eps / n
        self.ep = ep
        cb = self.c[:, None, :]
        fl = self.floor[:, None]
        tp = _paired_stat(cb, ep * z, (1 - ep) * m0[:, None] + ep * zz, d, fl)
        tm = _paired_stat(cb, -ep * z, (1 + ep) * m0[:, None] - ep * zz, d, fl)
        t1 = (tp - tm) / (2 * ep)
        t2 = (tp - 2 * t0[:, None] + tm) / ep ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            sig = np.sqrt(np.sum(t1 ** 2, axis=1)) / n
            a = np.sum(t1 ** 3, axis=1) / (6 * n ** 3 * sig ** 3)
            delta = t1 / (n ** 2 * sig[:, None])
        delta = np.where(np.isfinite(delta), delta, 0.0)
        self.sum_delta = delta.sum(axis=1)
        self.g1 = np.einsum("bk,bki->bi", delta, z)
        self.g2 = np.einsum("bk,bkij->bij", delta, zz)
        with np.errstate(invalid="ignore", divide="ignore"):
            cq = (self.along(ep) - 2 * t0 + self.along(-ep)) / (2 * sig * ep ** 2)
            bhat = np.sum(t2, axis=1) / (2 * n ** 2)
            curv = bhat / sig - cq
            z0 = special.ndtri(2 * special.ndtr(a) * special.ndtr(-curv))
        bad = ~(np.isfinite(sig) & (sig > 0) & np.isfinite(a) & np.isfinite(z0))
        bad |= ~np.all(np.isfinite(t1), axis=1) | ~np.all(np.isfinite(t2), axis=1)
        bad |= ~np.isfinite(t0)
        self.sig, self.a, self.z0, self.bad = sig, a, z0, bad

    def along(self, tau):
        """Statistic at normalized weights ``(p0 + tau * delta) / s``."""
        tau = np.broadcast_to(np.asarray(tau, dtype=float), self.t0.shape)
        s = 1.0 + tau * self.sum_delta
        m1 = (tau[:, None] * self.g1) / s[:, None]
        m2 = (self.m0 + tau[:, None, None] * self.g2) / s[:, None, None]
        return _paired_stat(self.c, m1, m2, self.d, self.floor)

    def bound(self, level):
        """Upper ABC endpoint at confidence `level` (array over the batch)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            z = self.z0 + special.ndtri(level)
            den = 1.0 - self.a * z
            za = z / den ** 2
        fail = self.bad | (np.abs(den) < BCA_DENOM_TOL) | ~np.isfinite(za)
        out = self.along(np.where(fail, 0.0, za))
        return np.where(fail, np.nan, out)


def _gather(x, idx):
    return np.asarray(x, dtype=float)[np.asarray(idx)]


def abc_bounds(x, idx, d, eps, levels):
    """ABC upper endpoints for each resample ``x[idx[b]]`` at each level.

    Returns an array of shape ``(B, len(levels))`` with NaN on failure.
    """
    fit = _AbcFit(_gather(x, idx), np.asarray(d, dtype=float), eps)
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    out = np.empty((fit.t0.shape[0], levels.size))
    for k, lev in enumerate(levels):
        out[:, k] = fit.bound(np.full(fit.t0.shape, lev))
    return out


def abc_constants(x, idx, d, eps):
    """``(t0, sighat, accel, z0)`` per resample, NaN-free only where fit succeeded."""
    fit = _AbcFit(_gather(x, idx), np.asarray(d, dtype=float), eps)
    return fit.t0, fit.sig, fit.a, fit.z0, fit.bad


def abc_calibration_levels(x, idx, d, eps, target, lo, hi, iters):
    """Level at which each resample's ABC upper bound crosses `target`.

    Bisection on the level over ``[lo, hi]``: whenever the bound at the
    midpoint is below the target the crossing lies above it.  At extreme
    levels the tilted weights can leave the region where the weighted
    covariance is positive definite; such an evaluation is treated as
    beyond the crossing on its own side of 1/2, i.e. the endpoint is
    extended monotonically.  Resamples whose fit fails come back as NaN.
    """
    fit = _AbcFit(_gather(x, idx), np.asarray(d, dtype=float), eps)
    bsz = fit.t0.shape[0]
    a = np.full(bsz, float(lo))
    b = np.full(bsz, float(hi))
    failed = fit.bad.copy()
    for _ in range(iters):
        mid = 0.5 * (a + b)
        val = fit.bound(mid)
        below = np.where(np.isfinite(val), val < target, mid < 0.5)
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    lam = 0.5 * (a + b)
    lam[failed] = np.nan
    return lam
