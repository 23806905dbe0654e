"""Dense symmetric positive-definite linear algebra.

Covariance matrices in this package are tiny (p is 3 or 4 in the
simulation study), so everything here is a straightforward unpivoted
Cholesky followed by triangular solves.  Inverse-weighted quadratic
forms ``v' M^{-1} v`` are never formed through an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NotSpdError

SPD_TOLERANCE = 1e-12
SYMMETRY_TOLERANCE = 1e-8


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor ``L`` with ``L @ L.T == M``."""

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve_lower(self, v: np.ndarray) -> np.ndarray:
        """Forward substitution, returns ``L^{-1} v``."""
        v = self._check(v)
        return _forward(self.lower, v)

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Return ``M^{-1} v``."""
        y = self.solve_lower(v)
        return _backward(self.lower, y)

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"vector of length {v.shape[-1] if v.ndim else 0} does not match factor of dim {self.dim}"
            )
        return v


def _forward(lower: np.ndarray, v: np.ndarray) -> np.ndarray:
    p = lower.shape[0]
    y = np.empty(p)
    for i in range(p):
        y[i] = (v[i] - lower[i, :i] @ y[:i]) / lower[i, i]
    return y


def _backward(lower: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = lower.shape[0]
    x = np.empty(p)
    for i in range(p - 1, -1, -1):
        x[i] = (y[i] - lower[i + 1:, i] @ x[i + 1:]) / lower[i, i]
    return x


def cholesky_spd(m, tol: float = SPD_TOLERANCE) -> SpdFactor:
    """Unpivoted Cholesky factorization of a symmetric positive-definite matrix.

    Parameters
    ----------
    m : array_like, shape (p, p)
        Symmetric matrix.
    tol : float
        A pivot is rejected when it is at most ``tol`` times the largest
        diagonal entry of `m`.

    Raises
    ------
    NotSpdError
        If `m` is not finite, not symmetric, or has a non-positive pivot.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise DimensionMismatchError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotSpdError("matrix has non-finite entries")
    scale = float(np.max(np.abs(a)))
    if scale > 0 and np.max(np.abs(a - a.T)) > SYMMETRY_TOLERANCE * scale:
        raise NotSpdError("matrix is not symmetric")
    p = a.shape[0]
    threshold = tol * float(np.max(np.diag(a)))
    lower = np.zeros((p, p))
    for j in range(p):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if not pivot > threshold or pivot <= 0.0:
            raise NotSpdError(f"non-positive pivot {pivot:.3g} at position {j}")
        lower[j, j] = np.sqrt(pivot)
        if j + 1 < p:
            lower[j + 1:, j] = (a[j + 1:, j] - lower[j + 1:, :j] @ lower[j, :j]) / lower[j, j]
    return SpdFactor(lower)


def quadratic_form_inv(factor: SpdFactor, v) -> float:
    """Return ``v' M^{-1} v`` using one triangular solve (``|L^{-1} v|^2``)."""
    y = factor.solve_lower(v)
    return float(y @ y)


def bilinear_form_inv(factor: SpdFactor, u, v) -> float:
    """Return ``u' M^{-1} v``."""
    yu = factor.solve_lower(u)
    yv = factor.solve_lower(v)
    return float(yu @ yv)
