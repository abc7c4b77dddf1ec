"""Hot-loop dispatch: the compiled extension when importable, numpy otherwise.

Set ``MOMENTSTEIN_PURE_PYTHON=1`` to force the numpy implementation.
"""
import os

import numpy as np

from . import _fallback

_impl = _fallback
BACKEND = "python"
if os.environ.get("MOMENTSTEIN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _fallback


def default_threads():
    try:
        return max(1, int(os.environ.get("MOMENTSTEIN_THREADS", "1")))
    except ValueError:
        return 1


def _rows(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def _vec(a):
    return np.ascontiguousarray(a, dtype=np.float64).ravel()


def max_affine(X, Y, c, threads=None, impl=None):
    impl = impl or _impl
    return impl.max_affine(_rows(X), _rows(Y), _vec(c), threads or default_threads())


def logsumexp_affine(X, Y, c, beta, threads=None, impl=None):
    impl = impl or _impl
    return impl.logsumexp_affine(
        _rows(X), _rows(Y), _vec(c), float(beta), threads or default_threads()
    )


def sinkhorn_softmin(X, Y, h, eps, p, threads=None, impl=None):
    impl = impl or _impl
    return impl.sinkhorn_softmin(
        _rows(X), _rows(Y), _vec(h), float(eps), float(p), threads or default_threads()
    )


def mean_distance(X, Y, threads=None, impl=None):
    impl = impl or _impl
    return float(impl.mean_distance(_rows(X), _rows(Y), threads or default_threads()))


def quantile_wpp(xa, wa, xb, wb, p, impl=None):
    """W_p^p between two sorted 1D weighted clouds via the quantile coupling."""
    impl = impl or _impl
    return float(impl.quantile_wpp(_vec(xa), _vec(wa), _vec(xb), _vec(wb), float(p)))
