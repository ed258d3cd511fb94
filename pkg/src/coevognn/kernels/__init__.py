"""Sparse kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``COEVO_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("COEVO_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _native as _impl

        BACKEND = "native"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def csr_spmm(indptr, indices, values, dense, impl=None):
    impl = impl or _impl
    return impl.csr_spmm(_i64(indptr), _i64(indices), _f64(values), _f64(dense))


def csr_spmm_t(indptr, indices, values, grad, n_cols, impl=None):
    impl = impl or _impl
    return impl.csr_spmm_t(_i64(indptr), _i64(indices), _f64(values), _f64(grad), int(n_cols))


def csr_edge_dot(indptr, indices, left, right, impl=None):
    impl = impl or _impl
    return impl.csr_edge_dot(_i64(indptr), _i64(indices), _f64(left), _f64(right))


def csr_contains(indptr, indices, rows, cols, impl=None):
    impl = impl or _impl
    return impl.csr_contains(_i64(indptr), _i64(indices), _i64(rows), _i64(cols))


def backends():
    """All importable backends keyed by name, for tests and benchmarks."""
    out = {"python": _fallback}
    try:
        from . import _native

        out["native"] = _native
    except ImportError:
        pass
    return out
