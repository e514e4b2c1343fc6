"""Kernel backend selection.

The Cython build is used when importable; set ``TAXOZSL_PURE_PYTHON=1`` to
force the numpy fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("TAXOZSL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def backends():
    """Available ``{name: module}`` pairs, for equivalence tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def _resolve(impl):
    if impl is None:
        return _impl
    if isinstance(impl, str):
        found = backends()
        if impl not in found:
            raise ValueError(f"kernel backend {impl!r} is not available ({sorted(found)})")
        return found[impl]
    return impl


def _prep(queries, bank):
    q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    b = np.ascontiguousarray(np.atleast_2d(bank), dtype=np.float64)
    return q, b


def sq_dists(queries, bank, impl=None):
    q, b = _prep(queries, bank)
    return _resolve(impl).sq_dists(q, b)


def knn_query(queries, bank, bank_cls, n_classes, k, impl=None):
    q, b = _prep(queries, bank)
    cls = np.ascontiguousarray(bank_cls, dtype=np.int64)
    return _resolve(impl).knn_query(q, b, cls, int(n_classes), int(k))
