"""Random sampling and the noncentral F distribution.

The noncentral F CDF is evaluated as a Poisson mixture of regularized
incomplete beta functions; the beta function itself comes from
:mod:`scipy.special`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .errors import ConvergenceFailure, DomainError
from .linalg import cholesky_spd

#: Neglected Poisson mass allowed when truncating the mixture series.
SERIES_TAIL = 1e-13
QUANTILE_MAX_ITER = 200


@dataclass(frozen=True)
class RngSeed:
    """A master seed plus a tuple of integer stream labels.

    Identical ``(master, labels)`` always produce the same generator;
    distinct label tuples produce statistically independent streams
    (numpy ``SeedSequence`` spawn keys).
    """

    master: int
    labels: tuple = ()

    def child(self, *labels: int) -> "RngSeed":
        return RngSeed(self.master, self.labels + tuple(int(x) for x in labels))

    def sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master, spawn_key=self.labels)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence()))

    def key(self) -> int:
        """128-bit digest of the stream state, handy for collision checks."""
        words = self.sequence().generate_state(2, np.uint64)
        return (int(words[0]) << 64) | int(words[1])


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, RngSeed):
        return seed.generator()
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class MvnParams:
    mean: np.ndarray
    cov: np.ndarray
    _factor: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DomainError(f"mean of length {mean.size} incompatible with cov of shape {cov.shape}")
        if not np.all(np.isfinite(mean)):
            raise DomainError("mean must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_factor", cholesky_spd(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def factor(self):
        return self._factor


@dataclass(frozen=True)
class NoncentralFParams:
    d1: float
    d2: float
    ncp: float = 0.0

    def __post_init__(self):
        if not (self.d1 > 0 and self.d2 > 0):
            raise DomainError(f"degrees of freedom must be positive, got ({self.d1}, {self.d2})")
        if not self.ncp >= 0:
            raise DomainError(f"noncentrality must be nonnegative, got {self.ncp}")


def std_normal_cdf(x: float) -> float:
    return float(special.ndtr(x))


def std_normal_quantile(q: float) -> float:
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    return float(special.ndtri(q))


def _poisson_window(mu: float) -> tuple[int, int]:
    """Index range around the Poisson mode whose complement has mass < SERIES_TAIL."""
    mode = int(math.floor(mu))
    radius = int(math.ceil(10.0 + 8.0 * math.sqrt(mu)))
    while True:
        lo = max(0, mode - radius)
        hi = mode + radius
        left = special.pdtr(lo - 1, mu) if lo > 0 else 0.0
        right = special.pdtrc(hi, mu)
        if left + right < SERIES_TAIL:
            return lo, hi
        radius *= 2


def noncentral_f_cdf(x: float, params: NoncentralFParams) -> float:
    """``P(F <= x)`` for ``F ~ F(d1, d2, ncp)``.

    Uses ``sum_j Pois(j; ncp/2) * I_y(d1/2 + j, d2/2)`` with
    ``y = d1 x / (d1 x + d2)``, keeping only the Poisson indices around
    the mode that carry all but ``SERIES_TAIL`` of the mass.
    """
    if not x >= 0:
        raise DomainError(f"noncentral F CDF needs x >= 0, got {x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    d1, d2, ncp = params.d1, params.d2, params.ncp
    y = d1 * x / (d1 * x + d2)
    if ncp == 0:
        return float(special.betainc(0.5 * d1, 0.5 * d2, y))
    mu = 0.5 * ncp
    lo, hi = _poisson_window(mu)
    j = np.arange(lo, hi + 1, dtype=float)
    weights = np.exp(j * math.log(mu) - mu - special.gammaln(j + 1.0))
    terms = special.betainc(0.5 * d1 + j, 0.5 * d2, y)
    total = float(np.sum(weights * terms))
    return min(max(total, 0.0), 1.0)


def noncentral_f_quantile(alpha: float, params: NoncentralFParams) -> float:
    """Lower `alpha` quantile of ``F(d1, d2, ncp)``.

    Brackets ``[0, upper]`` with `upper` doubled until the CDF exceeds
    `alpha`, then runs Brent's safeguarded bisection/secant root finder.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return _quantile_cached(float(alpha), float(params.d1), float(params.d2), float(params.ncp))


@lru_cache(maxsize=4096)
def _quantile_cached(alpha: float, d1: float, d2: float, ncp: float) -> float:
    params = NoncentralFParams(d1, d2, ncp)

    def f(x):
        return noncentral_f_cdf(x, params) - alpha

    lo, hi = 0.0, max(1.0, (d1 + ncp) / d1)
    doublings = 0
    while f(hi) <= 0:
        lo, hi = hi, 2.0 * hi
        doublings += 1
        if doublings > QUANTILE_MAX_ITER:
            raise ConvergenceFailure(f"could not bracket the {alpha} quantile of {params}")
    try:
        root, info = optimize.brentq(
            f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
            maxiter=QUANTILE_MAX_ITER, full_output=True, disp=False,
        )
    except (RuntimeError, ValueError) as exc:
        raise ConvergenceFailure(str(exc)) from exc
    if not info.converged:
        raise ConvergenceFailure(f"root finder did not converge for {params} at alpha={alpha}")
    return float(root)


def sample_mvn(params: MvnParams, n: int, seed) -> np.ndarray:
    """Draw an ``(n, p)`` multivariate normal sample, row ``i = mean + L z_i``."""
    if n < 2:
        raise DomainError(f"need n >= 2, got {n}")
    rng = as_generator(seed)
    z = rng.standard_normal((n, params.dim))
    return params.mean + z @ params.factor.lower.T


def lognormal_underlying(params: MvnParams) -> MvnParams:
    """Normal parameters whose exponential has the requested mean and covariance."""
    mean, cov = params.mean, params.cov
    if np.any(mean <= 0):
        raise DomainError("lognormal sampling needs strictly positive means")
    ratio = 1.0 + cov / np.outer(mean, mean)
    if np.any(ratio <= 0):
        raise DomainError("covariance is not attainable by a lognormal with these means")
    s = np.log(ratio)
    m = np.log(mean) - 0.5 * np.diag(s)
    return MvnParams(m, s)


def sample_mvln(params: MvnParams, n: int, seed) -> np.ndarray:
    """Moment-matched multivariate lognormal sample.

    The output has mean ``params.mean`` and covariance ``params.cov``.
    """
    under = lognormal_underlying(params)
    return np.exp(sample_mvn(under, n, seed))
