"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension ``_ckernels`` is used when it was built; otherwise
the numpy twin in ``_pykernels`` is used.  Set ``EQUIVMD_BACKEND`` to
``python`` or ``compiled`` to force a choice (``compiled`` raises if the
extension is missing).
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

COMPILED_AVAILABLE = _ckernels is not None


def _select(name):
    if name is None:
        name = os.environ.get("EQUIVMD_BACKEND", "auto")
    name = name.lower()
    if name == "auto":
        return "compiled" if COMPILED_AVAILABLE else "python"
    if name == "compiled" and not COMPILED_AVAILABLE:
        raise ImportError("EQUIVMD_BACKEND=compiled but the _ckernels extension is not built")
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown kernel backend {name!r}")
    return name


class Backend:
    """Thin adapter that normalizes dtypes and forwards to one kernel module."""

    def __init__(self, name=None):
        self.name = _select(name)
        self._mod = _ckernels if self.name == "compiled" else _pykernels

    def __repr__(self):
        return f"Backend({self.name!r})"

    def boot_pooled(self, xt, xr, idx_t, idx_r, d):
        return self._mod.boot_pooled(_f2(xt), _f2(xr), _i2(idx_t), _i2(idx_r), _f1(d))

    def abc_bounds(self, x, idx, d, eps, levels):
        return self._mod.abc_bounds(_f2(x), _i2(idx), _f1(d), float(eps), _f1(np.atleast_1d(levels)))

    def abc_constants(self, x, idx, d, eps):
        return self._mod.abc_constants(_f2(x), _i2(idx), _f1(d), float(eps))

    def abc_calibration_levels(self, x, idx, d, eps, target, lo, hi, iters):
        return self._mod.abc_calibration_levels(
            _f2(x), _i2(idx), _f1(d), float(eps), float(target), float(lo), float(hi), int(iters)
        )


def _f1(a):
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1)


def _f2(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i2(a):
    return np.ascontiguousarray(np.atleast_2d(a), dtype=np.intp)


_active = Backend()


def get_backend() -> Backend:
    return _active


def set_backend(name) -> Backend:
    """Switch the process-wide backend; returns the previous one."""
    global _active
    previous = _active
    _active = Backend(name)
    return previous
