"""Pure numpy versions of the compiled kernels in ``_core.pyx``.

Signatures and outputs match the compiled module; work is chunked over rows
so memory stays bounded for large clouds.
"""
import numpy as np
from scipy.special import logsumexp

_CHUNK = 2048


def _chunks(n):
    for start in range(0, n, _CHUNK):
        yield slice(start, min(n, start + _CHUNK))


def _pair_cost(X, Y, p):
    sq = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
    return sq if p == 2.0 else sq ** (0.5 * p)


def max_affine(X, Y, c, threads=1):
    vals = np.empty(X.shape[0])
    idx = np.empty(X.shape[0], dtype=np.int64)
    for sl in _chunks(X.shape[0]):
        aff = X[sl] @ Y.T - c
        idx[sl] = np.argmax(aff, axis=1)
        vals[sl] = aff[np.arange(aff.shape[0]), idx[sl]]
    return vals, idx


def logsumexp_affine(X, Y, c, beta, threads=1):
    M, d = X.shape
    vals = np.empty(M)
    grad = np.empty((M, d))
    hess = np.empty((M, d, d))
    for sl in _chunks(M):
        a = beta * (X[sl] @ Y.T - c)
        lse = logsumexp(a, axis=1)
        w = np.exp(a - lse[:, None])
        vals[sl] = lse / beta
        g = w @ Y
        grad[sl] = g
        second = np.einsum("ij,jk,jl->ikl", w, Y, Y)
        hess[sl] = beta * (second - g[:, :, None] * g[:, None, :])
    return vals, grad, hess


def sinkhorn_softmin(X, Y, h, eps, p, threads=1):
    out = np.empty(X.shape[0])
    for sl in _chunks(X.shape[0]):
        out[sl] = -eps * logsumexp(h[None, :] - _pair_cost(X[sl], Y, p) / eps, axis=1)
    return out


def mean_distance(X, Y, threads=1):
    rows = np.empty(X.shape[0])
    for sl in _chunks(X.shape[0]):
        rows[sl] = np.sqrt(_pair_cost(X[sl], Y, 2.0)).sum(axis=1)
    total = 0.0
    for r in rows:
        total += r
    return total / (X.shape[0] * Y.shape[0])


def quantile_wpp(xa, wa, xb, wb, p):
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    cuts = np.union1d(ca, cb)
    cuts = cuts[cuts <= min(ca[-1], cb[-1])]
    lo = np.concatenate(([0.0], cuts[:-1]))
    mid = 0.5 * (lo + cuts)
    ia = np.minimum(np.searchsorted(ca, mid), len(xa) - 1)
    ib = np.minimum(np.searchsorted(cb, mid), len(xb) - 1)
    return float(np.sum((cuts - lo) * np.abs(xa[ia] - xb[ib]) ** p))
