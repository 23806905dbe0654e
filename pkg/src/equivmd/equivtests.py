"""Equivalence decision procedures.

Every procedure tests ``H0: D_M^2 >= margin`` against ``H1: D_M^2 < margin``
and rejects H0 (declares equivalence) on a strict inequality.  The six
percentile/BCa variants share a single two-sample bootstrap pass when
run together through :func:`evaluate_methods`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import bootstrap as bs
from ._kernels import get_backend
from .distributions import MvnParams, NoncentralFParams, noncentral_f_quantile
from .errors import (
    AbcNumericalFailure,
    BcaSingularity,
    DomainError,
    EquivMDError,
    NotSpdError,
    UnknownMethodError,
)
from .estimators import (
    DiffStatistic,
    as_sample,
    corrected_difference,
    diff_statistic_from,
    leave_one_out,
    ncp_scale,
    paired_differences,
    pooled_stats,
)
from .linalg import cholesky_spd, quadratic_form_inv


class Method(str, Enum):
    EXACT_FIXED_MARGIN = "ExactFixedMargin"
    T2EQ = "T2EQ"
    T2EQTM = "T2EQTM"
    PCT_MD = "PctBootstrapOnMD"
    PCT_DIF = "PctBootstrapOnDif"
    PCT_DIF_BC = "PctBootstrapOnDifBC"
    BCA_MD = "BCaBootstrapOnMD"
    BCA_DIF = "BCaBootstrapOnDif"
    BCA_DIF_BC = "BCaBootstrapOnDifBC"
    ABC = "ABCOnPairedDif"
    CALIB_ABC = "CalibABCOnPairedDif"

    def __str__(self):
        return self.value

    @property
    def is_bootstrap(self) -> bool:
        return self in _BOOTSTRAP_VARIANTS

    @property
    def is_abc(self) -> bool:
        return self in (Method.ABC, Method.CALIB_ABC)


# (resampled statistic, BCa?) for each percentile-type method
_BOOTSTRAP_VARIANTS = {
    Method.PCT_MD: ("md", False),
    Method.PCT_DIF: ("dif", False),
    Method.PCT_DIF_BC: ("dif_bc", False),
    Method.BCA_MD: ("md", True),
    Method.BCA_DIF: ("dif", True),
    Method.BCA_DIF_BC: ("dif_bc", True),
}

_ALIASES = {
    "ABCBootstrapOnPairedDif": Method.ABC,
    "CaliABCBootstrapOnPairedDif": Method.CALIB_ABC,
    "CalibABC": Method.CALIB_ABC,
    "ABC": Method.ABC,
}

#: The ten procedures compared in the simulation study, in table order.
STUDY_METHODS = (
    Method.T2EQTM,
    Method.PCT_DIF_BC,
    Method.BCA_DIF_BC,
    Method.PCT_DIF,
    Method.CALIB_ABC,
    Method.BCA_DIF,
    Method.BCA_MD,
    Method.ABC,
    Method.T2EQ,
    Method.PCT_MD,
)


# Human-readable decision rules, echoed in every outcome's diagnostics.
DECISION_RULES = {
    Method.EXACT_FIXED_MARGIN: "J2 < F quantile(alpha) with ncp from the fixed margin",
    Method.T2EQ: "J2 < F quantile(alpha) with ncp from the estimated margin",
    Method.T2EQTM: "J2 < F quantile(alpha) with ncp from the true-covariance margin",
    Method.PCT_MD: "(1-alpha) percentile of bootstrap D2_M < original-sample margin (margin not resampled)",
    Method.PCT_DIF: "(1-alpha) percentile of bootstrap A_hat < 0",
    Method.PCT_DIF_BC: "(1-alpha) percentile of bootstrap A_hat_bc < 0",
    Method.BCA_MD: "BCa-adjusted percentile of bootstrap D2_M < original-sample margin; z0 counts D2_M* < D2_M",
    Method.BCA_DIF: "BCa-adjusted percentile of bootstrap A_hat < 0",
    Method.BCA_DIF_BC: "BCa-adjusted percentile of bootstrap A_hat_bc < 0",
    Method.ABC: "ABC upper bound at level 1-alpha of the paired-difference statistic < 0",
    Method.CALIB_ABC: "ABC upper bound at the calibrated level of the paired-difference statistic < 0",
}


def parse_method(name) -> Method:
    if isinstance(name, Method):
        return name
    key = str(name).strip()
    if key in _ALIASES:
        return _ALIASES[key]
    for m in Method:
        if m.value.lower() == key.lower():
            return m
    raise UnknownMethodError(f"unknown method {name!r}")


@dataclass(frozen=True)
class TestConfig:
    method: Method
    d: np.ndarray
    alpha: float = 0.05
    bootstrap: bs.BootstrapConfig = field(default_factory=bs.BootstrapConfig)
    fixed_margin_sq: float | None = None
    true_params: MvnParams | None = None

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "method", parse_method(self.method))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float).reshape(-1))
        if not 0.0 < self.alpha < 0.5:
            raise DomainError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        exact = self.method is Method.EXACT_FIXED_MARGIN
        if exact != (self.fixed_margin_sq is not None):
            raise DomainError("fixed_margin_sq is required for, and only for, ExactFixedMargin")
        if exact and not self.fixed_margin_sq >= 0:
            raise DomainError("fixed_margin_sq must be nonnegative")
        tm = self.method is Method.T2EQTM
        if tm != (self.true_params is not None):
            raise DomainError("true_params is required for, and only for, T2EQTM")


@dataclass(frozen=True)
class TestOutcome:
    """Result of one decision procedure.

    `threshold` is the critical value (F-based tests), the bootstrap
    percentile (percentile/BCa tests) or the ABC upper bound, and
    `reference` is what it is compared against.
    """

    method: Method
    reject: bool
    statistic: float
    threshold: float
    reference: float = 0.0
    stats: DiffStatistic | None = None
    diagnostics: dict = field(default_factory=dict)
    failed: bool = False

    __test__ = False

    def as_dict(self) -> dict:
        out = {
            "method": self.method.value,
            "reject": self.reject,
            "decision": "REJECT" if self.reject else "FAIL-TO-REJECT",
            "statistic": self.statistic,
            "threshold": self.threshold,
            "reference": self.reference,
            "failed": self.failed,
            "diagnostics": _jsonable(self.diagnostics),
        }
        if self.stats is not None:
            out["statistics"] = self.stats.as_dict()
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _failure(method, stats, reason, **diag):
    return TestOutcome(
        method=method, reject=False, statistic=float("nan"), threshold=float("nan"),
        stats=stats, diagnostics={"failure": reason, **diag}, failed=True,
    )


def _f_test(method, stats: DiffStatistic, alpha, margin_sq):
    p = stats.p
    d2 = stats.n_t + stats.n_r - p - 1
    ncp = ncp_scale(stats.n_t, stats.n_r) * margin_sq
    crit = noncentral_f_quantile(alpha, NoncentralFParams(p, d2, ncp))
    return TestOutcome(
        method=method,
        reject=bool(stats.j_sq < crit),
        statistic=stats.j_sq,
        threshold=crit,
        reference=crit,
        stats=stats,
        diagnostics={"rule": DECISION_RULES[method], "ncp": ncp, "margin_sq": margin_sq, "df": (p, d2)},
    )


def true_margin_sq(true_params, d) -> float:
    """``d' Sigma^{-1} d`` with the true covariance (MvnParams or a matrix)."""
    cov = true_params.cov if isinstance(true_params, MvnParams) else np.asarray(true_params, float)
    return quadratic_form_inv(cholesky_spd(cov), np.asarray(d, dtype=float))


def _stats(test, ref, d):
    return diff_statistic_from(pooled_stats(test, ref), d)


def exact_fixed_margin_test(test, ref, cfg: TestConfig) -> TestOutcome:
    """Exact level-alpha test for a pre-specified constant margin."""
    return _f_test(Method.EXACT_FIXED_MARGIN, _stats(test, ref, cfg.d), cfg.alpha, cfg.fixed_margin_sq)


def t2eq_test(test, ref, cfg: TestConfig) -> TestOutcome:
    """F test with the estimated margin plugged into the noncentrality."""
    st = _stats(test, ref, cfg.d)
    return _f_test(Method.T2EQ, st, cfg.alpha, st.margin_sq)


def t2eqtm_test(test, ref, cfg: TestConfig) -> TestOutcome:
    """Like T2EQ but with the margin computed from the true covariance (simulation only)."""
    st = _stats(test, ref, cfg.d)
    return _f_test(Method.T2EQTM, st, cfg.alpha, true_margin_sq(cfg.true_params, cfg.d))


class _BootstrapPass:
    """Replicates and jackknife values shared by the percentile/BCa variants."""

    def __init__(self, xt, xr, d, stats: DiffStatistic, config: bs.BootstrapConfig):
        self.xt, self.xr, self.d, self.stats = xt, xr, d, stats
        idx_t, idx_r = bs.two_sample_indices(config.seed, xt.shape[0], xr.shape[0], config.replicates)
        self.dm, self.mg = get_backend().boot_pooled(xt, xr, idx_t, idx_r, d)
        self.failures = int(np.count_nonzero(~np.isfinite(self.dm)))
        self._loo = None

    def replicates(self, kind):
        st = self.stats
        if kind == "md":
            rep = self.dm
        elif kind == "dif":
            rep = self.dm - self.mg
        else:
            rep = corrected_difference(self.dm - self.mg, st.n_t, st.n_r, st.p)
        return rep[np.isfinite(rep)]

    def point(self, kind):
        return {"md": self.stats.d_m_sq, "dif": self.stats.a_hat, "dif_bc": self.stats.a_hat_bc}[kind]

    def reference(self, kind):
        return self.stats.margin_sq if kind == "md" else 0.0

    def jackknife(self, kind):
        if self._loo is None:
            self._loo = leave_one_out(self.xt, self.xr, self.d)
        dm, mg, nt, nr = self._loo
        if kind == "md":
            vals = dm
        elif kind == "dif":
            vals = dm - mg
        else:
            vals = corrected_difference(dm - mg, nt, nr, self.stats.p)
        return vals[np.isfinite(vals)]


def _bootstrap_outcome(method, bp: _BootstrapPass, alpha) -> TestOutcome:
    kind, use_bca = _BOOTSTRAP_VARIANTS[method]
    st = bp.stats
    if kind == "dif_bc" and st.degenerate_correction:
        return _failure(method, st, "degenerate_correction")
    total = bp.dm.size
    if bp.failures > bs.MAX_FAILURE_FRACTION * total:
        return _failure(method, st, "singular_resamples", resample_failures=bp.failures)
    reps = bp.replicates(kind)
    point = bp.point(kind)
    level = 1.0 - alpha
    diag = {"rule": DECISION_RULES[method], "resample_failures": bp.failures, "level": level}
    if use_bca:
        z0 = bs.bca_z0(reps, point)
        acc = bs.acceleration_from_values(bp.jackknife(kind))
        try:
            level = bs.bca_adjusted_level(z0, acc.accel, alpha)
            singular = False
        except BcaSingularity:
            singular = True
        diag.update(
            bca=bs.BcaDiagnostics(z0, acc.accel, level, singular).__dict__,
            degenerate_jackknife=acc.degenerate,
            level=level,
        )
    thr = bs.percentile(reps, level)
    ref = bp.reference(kind)
    return TestOutcome(
        method=method, reject=bool(thr < ref), statistic=point, threshold=thr,
        reference=ref, stats=st, diagnostics=diag,
    )


def bootstrap_test(test, ref, cfg: TestConfig) -> TestOutcome:
    """Percentile or BCa bootstrap test, selected by ``cfg.method``."""
    if not cfg.method.is_bootstrap:
        raise UnknownMethodError(f"{cfg.method} is not a percentile/BCa bootstrap method")
    xt, xr = as_sample(test, "test"), as_sample(ref, "reference")
    st = _stats(xt, xr, cfg.d)
    bp = _BootstrapPass(xt, xr, cfg.d, st, cfg.bootstrap)
    return _bootstrap_outcome(cfg.method, bp, cfg.alpha)


def _abc_outcome(method, x, d, alpha, config: bs.BootstrapConfig, stats=None) -> TestOutcome:
    try:
        t0 = bs.abc_point_estimate(x, d)
    except NotSpdError:
        return _failure(method, stats, "singular_paired_covariance")
    diag = {"rule": DECISION_RULES[method], "point_estimate": t0}
    level = 1.0 - alpha
    try:
        if method is Method.CALIB_ABC:
            cal = bs.calibration_levels(x, d, config)
            diag["calibration_failures"] = cal.failures
            if cal.failures > bs.MAX_FAILURE_FRACTION * cal.levels.size:
                raise AbcNumericalFailure("too many calibration resamples failed")
            level = bs.percentile(cal.levels[np.isfinite(cal.levels)], 1.0 - alpha)
            diag["calibrated_level"] = level
        bound = bs.abc_upper_bound(x, d, level)
    except AbcNumericalFailure as exc:
        return _failure(method, stats, "abc_numerical_failure", detail=str(exc), **diag)
    diag["level"] = level
    return TestOutcome(
        method=method, reject=bool(bound < 0.0), statistic=t0, threshold=bound,
        reference=0.0, stats=stats, diagnostics=diag,
    )


def abc_test(test, ref, cfg: TestConfig) -> TestOutcome:
    """ABC (optionally calibrated) upper-bound test on paired differences."""
    if not cfg.method.is_abc:
        raise UnknownMethodError(f"{cfg.method} is not an ABC method")
    x = paired_differences(test, ref)
    bs._check_diffs(x, cfg.d)
    return _abc_outcome(cfg.method, x, cfg.d, cfg.alpha, cfg.bootstrap, stats=_try_stats(test, ref, cfg.d))


def _try_stats(test, ref, d):
    try:
        return _stats(test, ref, d)
    except NotSpdError:
        return None


def run_test(test, ref, cfg: TestConfig) -> TestOutcome:
    """Dispatch to the procedure named by ``cfg.method``."""
    m = cfg.method
    if m is Method.EXACT_FIXED_MARGIN:
        return exact_fixed_margin_test(test, ref, cfg)
    if m is Method.T2EQ:
        return t2eq_test(test, ref, cfg)
    if m is Method.T2EQTM:
        return t2eqtm_test(test, ref, cfg)
    if m.is_bootstrap:
        return bootstrap_test(test, ref, cfg)
    return abc_test(test, ref, cfg)


def evaluate_methods(test, ref, methods, d, alpha=0.05, bootstrap=None,
                     true_margin=None, fixed_margin_sq=None) -> dict:
    """Apply several procedures to the same pair of samples.

    Bootstrap replicates and the jackknife are computed once and reused
    by every percentile/BCa variant.  Numerical failures become
    non-rejections flagged with ``failed=True``; they never propagate.

    Parameters
    ----------
    true_margin : float, optional
        ``d' Sigma^{-1} d`` with the true covariance, needed by T2EQTM.
    fixed_margin_sq : float, optional
        Constant margin for ExactFixedMargin.
    """
    bootstrap = bootstrap or bs.BootstrapConfig(alpha=alpha)
    methods = [parse_method(m) for m in methods]
    if Method.T2EQTM in methods and true_margin is None:
        raise DomainError("T2EQTM needs true_margin")
    if Method.EXACT_FIXED_MARGIN in methods and fixed_margin_sq is None:
        raise DomainError("ExactFixedMargin needs fixed_margin_sq")
    xt, xr = as_sample(test, "test"), as_sample(ref, "reference")
    d = np.asarray(d, dtype=float).reshape(-1)
    out = {}
    try:
        st = _stats(xt, xr, d)
    except NotSpdError:
        st = None
    bp = None
    for m in methods:
        try:
            if m.is_abc:
                x = paired_differences(xt, xr)
                bs._check_diffs(x, d)
                out[m] = _abc_outcome(m, x, d, alpha, bootstrap, stats=st)
                continue
            if st is None:
                out[m] = _failure(m, None, "singular_pooled_covariance")
                continue
            if m is Method.T2EQ:
                out[m] = _f_test(m, st, alpha, st.margin_sq)
            elif m is Method.T2EQTM:
                out[m] = _f_test(m, st, alpha, true_margin)
            elif m is Method.EXACT_FIXED_MARGIN:
                out[m] = _f_test(m, st, alpha, fixed_margin_sq)
            else:
                if bp is None:
                    bp = _BootstrapPass(xt, xr, d, st, bootstrap)
                out[m] = _bootstrap_outcome(m, bp, alpha)
        except EquivMDError as exc:
            out[m] = _failure(m, st, type(exc).__name__, detail=str(exc))
    return out
