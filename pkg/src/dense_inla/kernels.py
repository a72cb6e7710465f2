"""Backend selection for the hot design-matrix and mixture kernels.

The compiled extension is used when it imports; otherwise the NumPy
fallback. Set ``DENSE_INLA_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from dense_inla import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("DENSE_INLA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from dense_inla import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def available_backends():
    """Names of the kernel backends importable in this environment."""
    names = ["python"]
    try:
        from dense_inla import _kernels  # noqa: F401
    except ImportError:
        pass
    else:
        names.append("cython")
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from dense_inla import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _idx(cols):
    return np.ascontiguousarray(cols, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def design_gather(cols, vals, M, backend=None):
    return get_backend(backend).design_gather(_idx(cols), _f64(vals), _f64(M))


def design_rmatvec(cols, vals, v, s, backend=None):
    return get_backend(backend).design_rmatvec(_idx(cols), _f64(vals), _f64(v), int(s))


def design_gram(cols, vals, w, s, backend=None):
    return get_backend(backend).design_gram(_idx(cols), _f64(vals), _f64(w), int(s))


def mixture_quantiles(means, sds, weights, probs, tol=1e-8, backend=None):
    return get_backend(backend).mixture_quantiles(
        _f64(means), _f64(sds), _f64(weights), _f64(probs), tol
    )
