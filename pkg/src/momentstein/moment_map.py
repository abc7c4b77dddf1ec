"""Convex potentials ``phi`` whose gradient pushes ``e^{-phi}`` onto a target measure.

Backends
--------
closed_form
    Exact maps for Gaussian, uniform boxes, centered exponentials, and their
    linear images.
grid1d
    Potential tabulated on a 1D grid, produced by :func:`solve_1d`.
product
    Coordinatewise sums of 1D maps.
max_affine
    ``max_i <x, y_i> - c_i``, the solution class for discrete targets.
smoothed_max_affine
    Log-sum-exp smoothing of a max-affine potential.

All evaluators take arrays of shape ``(M, d)`` (``(M,)`` is accepted in 1D)
and return values ``(M,)``, gradients ``(M, d)`` and Hessians ``(M, d, d)``.
"""
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats
from scipy.interpolate import CubicHermiteSpline

from . import _kernels, _rng
from .errors import (
    HyperplaneSupportError,
    InsufficientQuadratureError,
    LegendreDivergenceError,
    NoClosedFormError,
    NotCenteredError,
    OutsideRangeError,
    SamplingUnsupportedError,
    SolverStalledError,
)
from .measures import TRUNCATION_NATS, Measure, _Table, make_measure
from .quadrature import QuadratureRule, gauss_legendre, tensor_rule

logger = logging.getLogger(__name__)


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, dim) if dim > 1 else x[:, None]
    return x


class MomentMap:
    """Common interface of all backends."""

    backend = "abstract"
    dim = 1
    normalization = None

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def legendre(self, y):
        """``(phi*(y), grad phi*(y))`` for ``y`` in the interior of the gradient range."""
        raise NotImplementedError

    def inverse_gradient(self, y):
        return self.legendre(y)[1]

    @property
    def log_normalizer(self):
        """``log int e^{-phi} dx``; zero for a normalized solution."""
        raise NotImplementedError

    def log_base_density(self, x):
        return -self.value(x) - self.log_normalizer

    def base_density(self, x):
        return np.exp(self.log_base_density(x))

    def base_quadrature(self):
        raise NotImplementedError

    def sample_base(self, count, seed):
        raise SamplingUnsupportedError()

    def to_dict(self):
        raise NotImplementedError(f"{self.backend} maps are not serializable")

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# one-dimensional maps
# ---------------------------------------------------------------------------


class Map1D(MomentMap):
    """Base for 1D maps: bracketing Legendre inversion and base-density helpers."""

    dim = 1
    grad_range = (-np.inf, np.inf)

    def _value(self, x):
        raise NotImplementedError

    def _grad(self, x):
        raise NotImplementedError

    def _hess(self, x):
        raise NotImplementedError

    def _inverse_grad(self, y):
        return None

    def value(self, x):
        return self._value(_as_points(x, 1)[:, 0])

    def gradient(self, x):
        return self._grad(_as_points(x, 1)[:, 0])[:, None]

    def hessian(self, x):
        return self._hess(_as_points(x, 1)[:, 0])[:, None, None]

    def in_range(self, y):
        lo, hi = self.grad_range
        y = np.asarray(y, dtype=float)
        return (y > lo) & (y < hi)

    def _bracket(self, y):
        lo = np.full_like(y, -1.0)
        hi = np.full_like(y, 1.0)
        for _ in range(200):
            move = self._grad(lo) > y
            if not move.any():
                break
            lo = np.where(move, 2.0 * lo, lo)
        for _ in range(200):
            move = self._grad(hi) < y
            if not move.any():
                break
            hi = np.where(move, 2.0 * hi, hi)
        return lo, hi

    def _solve_grad(self, y):
        exact = self._inverse_grad(y)
        if exact is not None:
            return exact
        lo, hi = self._bracket(y)
        x = 0.5 * (lo + hi)
        for _ in range(200):
            gx = self._grad(x) - y
            hi = np.where(gx > 0, x, hi)
            lo = np.where(gx < 0, x, lo)
            h = self._hess(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                nxt = x - gx / h
            bad = ~np.isfinite(nxt) | (nxt <= lo) | (nxt >= hi)
            nxt = np.where(bad, 0.5 * (lo + hi), nxt)
            done = (np.abs(gx) <= 1e-15 * (1.0 + np.abs(y))) | (hi - lo <= 1e-15 * (1.0 + np.abs(x)))
            x = np.where(done, x, nxt)
            if done.all():
                break
        return x

    def legendre(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if not np.all(self.in_range(y)):
            raise OutsideRangeError()
        x = self._solve_grad(y)
        return x * y - self._value(x), x[:, None]

    # base density -----------------------------------------------------------
    def argmin(self):
        return float(self._solve_grad(np.array([0.0]))[0])

    def base_interval(self, nats=TRUNCATION_NATS):
        key = ("interval", nats)
        cache = self.__dict__.setdefault("_cache", {})
        if key in cache:
            return cache[key]
        xm = self.argmin()
        vm = float(self._value(np.array([xm]))[0])

        def excess(t):
            return float(self._value(np.array([t]))[0]) - vm - nats

        ends = []
        for sign in (-1.0, 1.0):
            step = 1.0
            while excess(xm + sign * step) < 0:
                step *= 2.0
                if step > 1e8:
                    raise OutsideRangeError("base density does not decay")
            ends.append(optimize.brentq(excess, xm, xm + sign * step) if sign > 0
                        else optimize.brentq(excess, xm - step, xm))
        cache[key] = tuple(ends)
        return cache[key]

    def _base_breaks(self):
        return ()

    def _base_nodes(self, panels=256, order=16):
        a, b = self.base_interval()
        cuts = [a] + [t for t in self._base_breaks() if a < t < b] + [b]
        xs, ws = [], []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            k = max(8, int(round(panels * (hi - lo) / (b - a))))
            x, w = gauss_legendre(lo, hi, k, order)
            xs.append(x)
            ws.append(w)
        return np.concatenate(xs), np.concatenate(ws)

    @property
    def log_normalizer(self):
        cache = self.__dict__.setdefault("_cache", {})
        if "logZ" not in cache:
            x, w = self._base_nodes()
            v = self._value(x)
            m = v.min()
            cache["logZ"] = float(math.log(np.sum(w * np.exp(-(v - m)))) - m)
        return cache["logZ"]

    def base_quadrature(self, panels=256, order=16):
        x, w = self._base_nodes(panels, order)
        dens = np.exp(-self._value(x) - self.log_normalizer)
        return QuadratureRule(x[:, None], w * dens, {"kind": "gauss_legendre", "nodes": len(x)})

    def _table(self):
        cache = self.__dict__.setdefault("_cache", {})
        if "table" not in cache:
            a, b = self.base_interval(64.0)
            cache["table"] = _Table(lambda t: -self._value(t), a, b, cells=4096)
        return cache["table"]

    def _base_quantile(self, u):
        t = self._table()
        out = np.empty_like(u)
        up = u > 0.5
        out[~up] = t.ppf(u[~up])
        out[up] = t.isf(1.0 - u[up])
        return out

    def sample_base(self, count, seed, stream=0):
        u = _rng.uniforms(seed, count, 1, stream=stream)[:, 0]
        return self._base_quantile(u)[:, None]


# standard shapes psi for the closed forms: value, gradient, Hessian, conjugate,
# inverse gradient, gradient range, base quantile
def _cube_conj(y):
    return special.xlogy(1 + y, 1 + y) + special.xlogy(1 - y, 1 - y) - math.log(4.0)


_SHAPES = {
    "gaussian": dict(
        value=lambda z: 0.5 * z * z + 0.5 * math.log(2 * math.pi),
        grad=lambda z: z,
        hess=lambda z: np.ones_like(z),
        conj=lambda y: 0.5 * y * y - 0.5 * math.log(2 * math.pi),
        inv=lambda y: y,
        range=(-np.inf, np.inf),
        quantile=lambda u: special.ndtri(u),
    ),
    "cube": dict(
        value=lambda z: 2.0 * np.logaddexp(0.5 * z, -0.5 * z) - 2.0 * math.log(2.0) + math.log(4.0),
        grad=lambda z: np.tanh(0.5 * z),
        hess=lambda z: 0.5 / np.cosh(0.5 * z) ** 2,
        conj=_cube_conj,
        inv=lambda y: 2.0 * np.arctanh(y),
        range=(-1.0, 1.0),
        quantile=lambda u: special.logit(u),
    ),
    "exponential": dict(
        value=lambda z: np.exp(z) - z,
        grad=lambda z: np.expm1(z),
        hess=lambda z: np.exp(z),
        conj=lambda y: special.xlogy(1 + y, 1 + y) - (1 + y),
        inv=lambda y: np.log1p(y),
        range=(-1.0, np.inf),
        quantile=lambda u: np.log(-np.log1p(-u)),
    ),
}


class ClosedForm1D(Map1D):
    """``phi(x) = psi(a x) - log a`` for a standard shape ``psi``.

    ``a`` rescales the target: the map for ``a * Y`` when ``psi`` is the map
    for ``Y``. Shapes: ``gaussian`` (standard normal), ``cube`` (uniform on
    [-1, 1]), ``exponential`` (density ``e^{-(y+1)}`` on [-1, inf)).
    """

    backend = "closed_form"

    def __init__(self, shape, scale=1.0):
        if shape not in _SHAPES:
            raise NoClosedFormError()
        self.shape = shape
        self.scale = float(scale)
        self._s = _SHAPES[shape]
        lo, hi = self._s["range"]
        self.grad_range = (lo * self.scale, hi * self.scale)
        self.normalization = {"convention": "grad_at_origin", "value": 0.0}

    def _value(self, x):
        return self._s["value"](self.scale * x) - math.log(self.scale)

    def _grad(self, x):
        return self.scale * self._s["grad"](self.scale * x)

    def _hess(self, x):
        return self.scale**2 * self._s["hess"](self.scale * x)

    def _inverse_grad(self, y):
        return self._s["inv"](y / self.scale) / self.scale

    def legendre(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if not np.all(self.in_range(y)):
            raise OutsideRangeError()
        return self._s["conj"](y / self.scale) + math.log(self.scale), self._inverse_grad(y)[:, None]

    @property
    def log_normalizer(self):
        return 0.0

    def argmin(self):
        return 0.0

    def _base_quantile(self, u):
        return self._s["quantile"](u) / self.scale

    def to_dict(self):
        return {"backend": "closed_form", "family": self.shape, "scale": self.scale}

    def __repr__(self):
        return f"ClosedForm1D({self.shape!r}, scale={self.scale})"


class FunctionMap1D(Map1D):
    """A 1D potential given by callables (value, gradient, Hessian)."""

    backend = "closed_form"

    def __init__(self, value, grad, hess, grad_range=(-np.inf, np.inf), name="custom"):
        self._v, self._g, self._h = value, grad, hess
        self.grad_range = grad_range
        self.name = name

    def _value(self, x):
        return np.asarray(self._v(x), dtype=float) * np.ones_like(x)

    def _grad(self, x):
        return np.asarray(self._g(x), dtype=float) * np.ones_like(x)

    def _hess(self, x):
        return np.asarray(self._h(x), dtype=float) * np.ones_like(x)


class GridMap1D(Map1D):
    """Potential tabulated on increasing nodes with gradients and Hessians.

    Values use cubic Hermite interpolation of (phi, phi'); gradients use cubic
    Hermite interpolation of (phi', phi''); the Hessian is interpolated the
    same way from (phi'', finite-difference phi'''). Outside the nodes the potential is continued
    affinely with the boundary slope.
    """

    backend = "grid1d"

    def __init__(self, nodes, values, gradients, hessians, normalization=None, info=None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.gradients = np.asarray(gradients, dtype=float)
        self.hessians = np.asarray(hessians, dtype=float)
        self.normalization = normalization or {}
        self.info = info or {}
        self._vs = CubicHermiteSpline(self.nodes, self.values, self.gradients, extrapolate=False)
        self._gs = CubicHermiteSpline(self.nodes, self.gradients, self.hessians, extrapolate=False)
        self._hs = CubicHermiteSpline(self.nodes, self.hessians, _fd5(self.nodes, self.hessians),
                                      extrapolate=False)
        self.grad_range = (float(self.gradients[0]), float(self.gradients[-1]))

    def _split(self, x):
        return x < self.nodes[0], x > self.nodes[-1]

    def _value(self, x):
        x = np.asarray(x, dtype=float)
        left, right = self._split(x)
        out = self._vs(np.clip(x, self.nodes[0], self.nodes[-1]))
        out = np.where(left, self.values[0] + self.gradients[0] * (x - self.nodes[0]), out)
        return np.where(right, self.values[-1] + self.gradients[-1] * (x - self.nodes[-1]), out)

    def _grad(self, x):
        x = np.asarray(x, dtype=float)
        left, right = self._split(x)
        out = self._gs(np.clip(x, self.nodes[0], self.nodes[-1]))
        out = np.where(left, self.gradients[0], out)
        return np.where(right, self.gradients[-1], out)

    def _hess(self, x):
        x = np.asarray(x, dtype=float)
        left, right = self._split(x)
        out = self._hs(np.clip(x, self.nodes[0], self.nodes[-1]))
        return np.where(left | right, 0.0, out)

    def _bracket(self, y):
        k = np.clip(np.searchsorted(self.gradients, y, side="right") - 1, 0, len(self.nodes) - 2)
        return self.nodes[k], self.nodes[k + 1]

    def dual(self):
        """The Legendre transform as a grid map on the (strictly increasing) gradient nodes."""
        g = self.gradients
        keep = np.concatenate(([True], np.diff(g) > 1e-12 * (1.0 + np.abs(g[1:]))))
        keep &= self.hessians > 0
        y = g[keep]
        x = self.nodes[keep]
        conj = x * y - self.values[keep]
        return GridMap1D(y, conj, x, 1.0 / self.hessians[keep], normalization={"dual_of": "grid1d"})

    def _base_breaks(self):
        return (self.nodes[0], self.nodes[-1])

    def to_dict(self):
        return {
            "backend": "grid1d",
            "nodes": self.nodes.tolist(),
            "values": self.values.tolist(),
            "gradients": self.gradients.tolist(),
            "hessians": self.hessians.tolist(),
            "normalization": self.normalization,
        }


# ---------------------------------------------------------------------------
# products and linear images
# ---------------------------------------------------------------------------


class ProductMap(MomentMap):
    """``phi(x) = sum_k phi_k(x_k)`` for 1D factors."""

    backend = "product"

    def __init__(self, maps):
        self.maps = list(maps)
        self.dim = len(self.maps)
        self.normalization = {"factors": [getattr(m, "normalization", None) for m in self.maps]}

    def _cols(self, x):
        return _as_points(x, self.dim)

    def value(self, x):
        x = self._cols(x)
        return sum(m.value(x[:, k]) for k, m in enumerate(self.maps))

    def gradient(self, x):
        x = self._cols(x)
        return np.concatenate([m.gradient(x[:, k]) for k, m in enumerate(self.maps)], axis=1)

    def hessian(self, x):
        x = self._cols(x)
        diag = np.stack([m.hessian(x[:, k])[:, 0, 0] for k, m in enumerate(self.maps)], axis=1)
        out = np.zeros((len(x), self.dim, self.dim))
        idx = np.arange(self.dim)
        out[:, idx, idx] = diag
        return out

    def legendre(self, y):
        y = self._cols(y)
        parts = [m.legendre(y[:, k]) for k, m in enumerate(self.maps)]
        return sum(p[0] for p in parts), np.concatenate([p[1] for p in parts], axis=1)

    @property
    def log_normalizer(self):
        return sum(m.log_normalizer for m in self.maps)

    def base_quadrature(self):
        if self.dim == 1:
            return self.maps[0].base_quadrature()
        if self.dim == 2:
            rules = []
            for m in self.maps:
                r = m.base_quadrature(panels=64, order=8)
                rules.append((r.points[:, 0], r.weights))
            pts, w = tensor_rule(rules)
            return QuadratureRule(pts, w, {"kind": "tensor_gauss_legendre", "nodes": len(pts)})
        count = 1 << 16
        return QuadratureRule(self.sample_base(count, 0), np.full(count, 1.0 / count),
                              {"kind": "monte_carlo", "count": count})

    def sample_base(self, count, seed, stream=0):
        u = _rng.uniforms(seed, count, self.dim, stream=stream)
        return np.stack([m._base_quantile(u[:, k]) for k, m in enumerate(self.maps)], axis=1)

    def to_dict(self):
        return {"backend": "product", "factors": [m.to_dict() for m in self.maps]}


class LinearMap(MomentMap):
    """``phi(x) = psi(A^T x) - log|det A|``: the map for ``A Y`` given the map for ``Y``."""

    backend = "closed_form"

    def __init__(self, base, matrix):
        self.base = base
        self.A = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.dim = self.A.shape[0]
        self.Ainv = np.linalg.inv(self.A)
        self.logdet = float(np.linalg.slogdet(self.A)[1])
        self.normalization = {"linear_image_of": getattr(base, "normalization", None)}

    def value(self, x):
        x = _as_points(x, self.dim)
        return self.base.value(x @ self.A) - self.logdet

    def gradient(self, x):
        x = _as_points(x, self.dim)
        return self.base.gradient(x @ self.A) @ self.A.T

    def hessian(self, x):
        x = _as_points(x, self.dim)
        H = self.base.hessian(x @ self.A)
        return np.einsum("ij,mjk,lk->mil", self.A, H, self.A)

    def legendre(self, y):
        y = _as_points(y, self.dim)
        v, z = self.base.legendre(y @ self.Ainv.T)
        return v + self.logdet, z @ self.Ainv

    @property
    def log_normalizer(self):
        return self.base.log_normalizer

    def base_quadrature(self):
        r = self.base.base_quadrature()
        return QuadratureRule(r.points @ self.Ainv, r.weights, r.descriptor)

    def sample_base(self, count, seed, stream=0):
        return self.base.sample_base(count, seed, stream=stream) @ self.Ainv

    def to_dict(self):
        return {"backend": "closed_form", "family": "linear", "matrix": self.A.tolist(),
                "base": self.base.to_dict()}


# ---------------------------------------------------------------------------
# max-affine potentials
# ---------------------------------------------------------------------------


def _log_cell_mass(y, c, a, b):
    """log of ``int_a^b exp(-(y x - c)) dx`` for scalars or arrays."""
    y, c, a, b = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (y, c, a, b)))
    out = np.full(y.shape, -np.inf)
    width = b - a
    pos, neg, zero = (y > 0) & (width > 0), (y < 0) & (width > 0), (y == 0) & (width > 0)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out[pos] = (c[pos] - y[pos] * a[pos] + np.log(-np.expm1(-y[pos] * width[pos]))
                    - np.log(y[pos]))
        out[neg] = (c[neg] - y[neg] * b[neg] + np.log(-np.expm1(y[neg] * width[neg]))
                    - np.log(-y[neg]))
        out[zero] = c[zero] + np.log(width[zero])
    return out


def _upper_envelope_1d(y, c):
    """Active lines and breakpoints of ``max_i y_i x - c_i`` for sorted distinct slopes."""
    hull = []
    for i in range(len(y)):
        while hull:
            j = hull[-1]
            xj = (c[i] - c[j]) / (y[i] - y[j])
            if len(hull) >= 2:
                k = hull[-2]
                xk = (c[j] - c[k]) / (y[j] - y[k])
                if xj <= xk:
                    hull.pop()
                    continue
            break
        hull.append(i)
    breaks = [(c[hull[t + 1]] - c[hull[t]]) / (y[hull[t + 1]] - y[hull[t]]) for t in range(len(hull) - 1)]
    return np.array(hull, dtype=int), np.array(breaks)


def _inradius(Y):
    d = Y.shape[1]
    if d == 1:
        return float(min(-Y[:, 0].min(), Y[:, 0].max()))
    from scipy.spatial import ConvexHull

    eq = ConvexHull(Y).equations
    return float(np.min(-eq[:, -1]))


class MaxAffineMap(MomentMap):
    """``phi(x) = max_i <x, y_i> - c_i`` (slopes ``y_i``, intercepts ``c_i``)."""

    backend = "max_affine"

    def __init__(self, slopes, intercepts, normalization=None, info=None):
        Y = np.asarray(slopes, dtype=float)
        self.slopes = Y[:, None] if Y.ndim == 1 else Y
        self.intercepts = np.asarray(intercepts, dtype=float).ravel()
        self.dim = self.slopes.shape[1]
        self.normalization = normalization or {}
        self.info = info or {}
        if self.dim == 1:
            order = np.argsort(self.slopes[:, 0], kind="stable")
            self._order = order

    @property
    def atoms(self):
        return list(zip(self.slopes.tolist(), self.intercepts.tolist()))

    def value(self, x):
        return _kernels.max_affine(_as_points(x, self.dim), self.slopes, self.intercepts)[0]

    def cell_index(self, x):
        return _kernels.max_affine(_as_points(x, self.dim), self.slopes, self.intercepts)[1]

    def gradient(self, x):
        return self.slopes[self.cell_index(x)]

    def hessian(self, x):
        return np.zeros((len(_as_points(x, self.dim)), self.dim, self.dim))

    def legendre(self, y):
        y = _as_points(y, self.dim)
        if self.dim == 1:
            o = self._order
            ys, cs = self.slopes[o, 0], self.intercepts[o]
            if np.any((y[:, 0] <= ys[0]) | (y[:, 0] >= ys[-1])):
                raise OutsideRangeError()
            hull, breaks = _upper_envelope_1d(ys, cs)
            yh, ch = ys[hull], cs[hull]
            # lower convex envelope of (y_i, c_i) restricted to active atoms
            k = np.clip(np.searchsorted(yh, y[:, 0], side="right") - 1, 0, len(yh) - 2)
            t = (y[:, 0] - yh[k]) / (yh[k + 1] - yh[k])
            val = (1 - t) * ch[k] + t * ch[k + 1]
            return val, breaks[k][:, None]
        out_v, out_x = [], []
        m = len(self.slopes)
        A_eq = np.vstack([self.slopes.T, np.ones((1, m))])
        for yy in y:
            res = optimize.linprog(self.intercepts, A_eq=A_eq, b_eq=np.append(yy, 1.0),
                                   bounds=(0, None), method="highs")
            if res.status != 0:
                raise OutsideRangeError()
            out_v.append(res.fun)
            out_x.append(-res.eqlin.marginals[:-1] if res.eqlin is not None else np.zeros(self.dim))
        return np.array(out_v), np.array(out_x)

    # exact 1D cell masses ------------------------------------------------------
    def log_cell_masses(self):
        """log of ``int_{cell_i} e^{-phi}`` per atom (1D exact, otherwise Monte Carlo)."""
        if self.dim != 1:
            return np.log(_mc_cell_masses(self.slopes, self.intercepts, 1 << 16, 0)[0])
        o = self._order
        ys, cs = self.slopes[o, 0], self.intercepts[o]
        hull, breaks = _upper_envelope_1d(ys, cs)
        lo = np.concatenate(([-np.inf], breaks))
        hi = np.concatenate((breaks, [np.inf]))
        out = np.full(len(ys), -np.inf)
        out[hull] = _log_cell_mass(ys[hull], cs[hull], lo, hi)
        res = np.empty_like(out)
        res[o] = out
        return res

    @property
    def log_normalizer(self):
        lm = self.log_cell_masses()
        return float(special.logsumexp(lm))

    def cell_masses(self):
        lm = self.log_cell_masses()
        return np.exp(lm - special.logsumexp(lm))

    def _breaks(self):
        o = self._order
        return _upper_envelope_1d(self.slopes[o, 0], self.intercepts[o])

    def base_quadrature(self, panels=256, order=16):
        if self.dim != 1:
            count = 1 << 16
            return QuadratureRule(self.sample_base(count, 0), np.full(count, 1.0 / count),
                                  {"kind": "monte_carlo", "count": count})
        hull, breaks = self._breaks()
        o = self._order
        ys = self.slopes[o, 0][hull]
        cs = self.intercepts[o][hull]
        lz = self.log_normalizer
        xs, ws = [], []
        edges = np.concatenate(([-np.inf], breaks, [np.inf]))
        for y, c, a, b in zip(ys, cs, edges[:-1], edges[1:]):
            # truncate each cell where e^{-phi} has dropped TRUNCATION_NATS below its cell maximum
            if not np.isfinite(a):
                a = b - TRUNCATION_NATS / abs(y)
            if not np.isfinite(b):
                b = a + TRUNCATION_NATS / abs(y)
            x, w = gauss_legendre(a, b, max(4, panels // len(ys)), order)
            xs.append(x)
            ws.append(w * np.exp(-(y * x - c) - lz))
        return QuadratureRule(np.concatenate(xs)[:, None], np.concatenate(ws), {"kind": "gauss_legendre"})

    def sample_base(self, count, seed, stream=0):
        if self.dim == 1:
            hull, breaks = self._breaks()
            o = self._order
            ys = self.slopes[o, 0][hull]
            cs = self.intercepts[o][hull]
            edges = np.concatenate(([-np.inf], breaks, [np.inf]))
            lm = _log_cell_mass(ys, cs, edges[:-1], edges[1:])
            p = np.exp(lm - special.logsumexp(lm))
            u = _rng.uniforms(seed, count, 2, stream=stream)
            cell = np.minimum(np.searchsorted(np.cumsum(p), u[:, 0] * np.sum(p), side="right"), len(p) - 1)
            y, a, b = ys[cell], edges[cell], edges[cell + 1]
            v = u[:, 1]
            x = np.empty(count)
            # exponential law e^{-y x} restricted to [a, b]
            pos, neg, zero = y > 0, y < 0, y == 0
            x[pos] = a[pos] - np.log1p(-v[pos] * -np.expm1(-y[pos] * (b[pos] - a[pos]))) / y[pos]
            x[neg] = b[neg] - np.log1p(-v[neg] * -np.expm1(y[neg] * (b[neg] - a[neg]))) / y[neg]
            x[zero] = a[zero] + v[zero] * (b[zero] - a[zero])
            return x[:, None]
        return _rejection_sample(self.slopes, self.intercepts, count, seed, stream)

    def to_dict(self):
        return {"backend": "max_affine", "slopes": self.slopes.tolist(),
                "intercepts": self.intercepts.tolist(), "normalization": self.normalization}


def _laplace_proposal(Y, c):
    r = _inradius(Y)
    if not r > 0:
        raise HyperplaneSupportError()
    d = Y.shape[1]
    lam = r / math.sqrt(d)
    # e^{-phi(x)} <= e^{max c} e^{-r |x|_2} <= e^{max c} e^{-lam |x|_1}
    return lam


def _rejection_sample(Y, c, count, seed, stream=0, beta=None):
    d = Y.shape[1]
    lam = _laplace_proposal(Y, c)
    cmax = float(np.max(c))
    out = []
    have = 0
    block = 0
    while have < count:
        n = max(4 * (count - have), 1024)
        u = _rng.uniforms(seed, n, d + 1, stream=stream * 1_000_003 + block)
        block += 1
        s = u[:, :d] - 0.5
        x = -np.sign(s) * np.log1p(-2 * np.abs(s)) / lam
        phi = _kernels.max_affine(x, Y, c)[0]
        log_ratio = -phi - cmax + lam * np.abs(x).sum(axis=1)
        if beta is not None:
            log_ratio -= _kernels.logsumexp_affine(x, Y, c, beta)[0] - phi
        keep = np.log(u[:, d]) < log_ratio
        out.append(x[keep])
        have += int(keep.sum())
    return np.concatenate(out)[:count]


def _mc_points(d, count, seed, lam, replicates):
    """Scrambled-Sobol points pushed through a product Laplace law, with IS weights."""
    per = max(1, count // replicates)
    per = 1 << int(math.ceil(math.log2(per)))
    groups = []
    for r in range(replicates):
        sob = stats.qmc.Sobol(d, scramble=True, seed=np.random.default_rng(_rng.mix_seed(seed, r)))
        u = sob.random(per)
        u = np.clip(u, 1e-16, 1 - 1e-16)
        s = u - 0.5
        x = -np.sign(s) * np.log1p(-2 * np.abs(s)) / lam
        logq = d * math.log(lam / 2.0) - lam * np.abs(x).sum(axis=1)
        groups.append((x, -logq))
    return groups


def _mc_cell_masses(Y, c, count, seed, replicates=8, groups=None):
    lam = _laplace_proposal(Y, c)
    groups = groups or _mc_points(Y.shape[1], count, seed, lam, replicates)
    reps = []
    for x, logw in groups:
        vals, idx = _kernels.max_affine(x, Y, c)
        w = np.exp(logw - vals) / len(x)
        reps.append(np.bincount(idx, weights=w, minlength=len(c)))
    reps = np.array(reps)
    return reps.mean(axis=0), reps


class SmoothedMaxAffineMap(Map1D):
    """``phi_beta(x) = beta^{-1} log sum_i exp(beta (<x, y_i> - c_i))``."""

    backend = "smoothed_max_affine"

    def __init__(self, slopes, intercepts, beta, normalization=None):
        if not beta > 0:
            raise ValueError("temperature must be positive")
        Y = np.asarray(slopes, dtype=float)
        self.slopes = Y[:, None] if Y.ndim == 1 else Y
        self.intercepts = np.asarray(intercepts, dtype=float).ravel()
        self.beta = float(beta)
        self.dim = self.slopes.shape[1]
        self.normalization = normalization or {}
        if self.dim == 1:
            self.grad_range = (float(self.slopes.min()), float(self.slopes.max()))

    def _eval(self, x):
        return _kernels.logsumexp_affine(_as_points(x, self.dim), self.slopes, self.intercepts, self.beta)

    def _value(self, x):
        return self._eval(x)[0]

    def _grad(self, x):
        return self._eval(x)[1][:, 0]

    def _hess(self, x):
        return self._eval(x)[2][:, 0, 0]

    def value(self, x):
        return self._eval(x)[0]

    def gradient(self, x):
        return self._eval(x)[1]

    def hessian(self, x):
        return self._eval(x)[2]

    def in_range(self, y):
        if self.dim == 1:
            return super().in_range(y)
        return np.ones(len(y), dtype=bool)

    def legendre(self, y):
        if self.dim == 1:
            return super().legendre(y)
        return _newton_legendre(self, _as_points(y, self.dim))

    @property
    def log_normalizer(self):
        if self.dim == 1:
            return super().log_normalizer
        cache = self.__dict__.setdefault("_cache", {})
        if "logZ" not in cache:
            lam = _laplace_proposal(self.slopes, self.intercepts)
            vals = []
            for x, logw in _mc_points(self.dim, 1 << 16, 0, lam, 8):
                v = self._eval(x)[0]
                vals.append(special.logsumexp(logw - v) - math.log(len(x)))
            cache["logZ"] = float(special.logsumexp(vals) - math.log(len(vals)))
        return cache["logZ"]

    def base_quadrature(self, panels=256, order=16):
        if self.dim == 1:
            return super().base_quadrature(panels, order)
        count = 1 << 15
        return QuadratureRule(self.sample_base(count, 0), np.full(count, 1.0 / count),
                              {"kind": "monte_carlo", "count": count})

    def sample_base(self, count, seed, stream=0):
        if self.dim == 1:
            return super().sample_base(count, seed, stream)
        return _rejection_sample(self.slopes, self.intercepts, count, seed, stream, beta=self.beta)

    def to_dict(self):
        return {"backend": "smoothed_max_affine", "slopes": self.slopes.tolist(),
                "intercepts": self.intercepts.tolist(), "beta": self.beta}


def _newton_legendre(phi, y, max_iter=100):
    """Damped Newton on ``phi(x) - <x, y>`` for strictly convex ``phi`` in d >= 2."""
    x = np.zeros_like(y)
    for _ in range(max_iter):
        g = phi.gradient(x) - y
        if np.max(np.abs(g)) < 1e-12:
            break
        H = phi.hessian(x)
        try:
            step = np.linalg.solve(H, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise LegendreDivergenceError() from None
        f0 = phi.value(x) - np.sum(x * y, axis=1)
        t = np.ones(len(x))
        for _ in range(60):
            xn = x - t[:, None] * step
            fn = phi.value(xn) - np.sum(xn * y, axis=1)
            bad = fn > f0 - 1e-4 * t * np.sum(g * step, axis=1) + 1e-14 * np.abs(f0)
            if not bad.any():
                break
            t = np.where(bad, 0.5 * t, t)
        x = x - t[:, None] * step
    else:
        raise LegendreDivergenceError()
    if not np.all(np.isfinite(x)):
        raise LegendreDivergenceError()
    return np.sum(x * y, axis=1) - phi.value(x), x


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def _closed_form_factor(f):
    fam = f.family
    if abs(f.loc) > 1e-12:
        raise NotCenteredError()
    if fam == "gaussian":
        return ClosedForm1D("gaussian", f.scale)
    if fam == "uniform_box":
        return ClosedForm1D("cube", f.scale)
    if fam == "exponential_centered":
        return ClosedForm1D("exponential", f.scale)
    raise NoClosedFormError()


def closed_form_map(mu):
    """Exact moment map for Gaussian, uniform box, exponential and two-point targets.

    Accepts a :class:`Measure` or a measure spec dict.
    """
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    if mu.kind == "empirical":
        pts, w = mu.points, mu.weights
        if mu.dim == 1 and len(pts) == 2 and abs(w[0] - 0.5) < 1e-15 and abs(pts[0, 0] + pts[1, 0]) < 1e-15:
            a = abs(pts[0, 0])
            c = -math.log(2.0 / a)
            return MaxAffineMap(np.array([[-a], [a]]), np.array([c, c]),
                                normalization={"convention": "symmetric"})
        raise NoClosedFormError()
    maps = [_closed_form_factor(f) for f in mu.factors]
    return maps[0] if len(maps) == 1 else ProductMap(maps)


def compose_linear(psi, matrix):
    """Map for ``A Y`` from the map ``psi`` of ``Y`` (e.g. parallelepipeds from the cube)."""
    return LinearMap(psi, matrix)


def _fd5(x, v):
    """Derivative at each node from the 5-point Lagrange interpolant (any node spacing)."""
    n = len(x)
    if n < 5:
        return np.gradient(v, x, edge_order=1)
    start = np.clip(np.arange(n) - 2, 0, n - 5)
    idx = start[:, None] + np.arange(5)[None, :]
    X = x[idx]
    x0 = x[:, None]
    out = np.zeros(n)
    for k in range(5):
        others = [m for m in range(5) if m != k]
        denom = np.prod([X[:, k] - X[:, m] for m in others], axis=0)
        # d/dx prod_{m != k} (x - x_m) at x0
        deriv = np.zeros(n)
        for skip in others:
            term = np.ones(n)
            for m in others:
                if m != skip:
                    term = term * (x0[:, 0] - X[:, m])
            deriv += term
        out += v[idx[:, k]] * deriv / denom
    return out


def _trap4(f, df, h):
    """Cell integrals of a smooth function from values and derivatives (4th order)."""
    return 0.5 * h * (f[:-1] + f[1:]) - h * h / 12.0 * (df[1:] - df[:-1])


@dataclass
class _State:
    x: np.ndarray
    phi: np.ndarray
    g: np.ndarray
    hess: np.ndarray = None
    residual: float = np.inf
    change: float = np.inf
    iterations: int = 0
    history: list = field(default_factory=list)


def _iterate(factor, x, phi, g, tol, max_iter, damping, change_tol, min_iter=1):
    h = np.diff(x)
    st = _State(x, phi, g)
    for k in range(1, max_iter + 1):
        m = st.phi.min()
        w = np.exp(-(st.phi - m))
        cells = _trap4(w, -st.g * w, h)
        # tails beyond the grid follow the affine continuation
        left = w[0] / abs(st.g[0]) if st.g[0] < 0 else 0.0
        right = w[-1] / st.g[-1] if st.g[-1] > 0 else 0.0
        F = left + np.concatenate(([0.0], np.cumsum(cells)))
        S = right + np.concatenate((np.cumsum(cells[::-1])[::-1], [0.0]))
        Z = F[-1] + right
        tiny = np.finfo(float).tiny
        T = np.where(F <= S, factor.ppf(np.clip(F / Z, tiny, 0.5)), factor.isf(np.clip(S / Z, tiny, 0.5)))
        # where the tail probability underflows T is flat; drop its derivative there
        flat = (F / Z < tiny) | (S / Z < tiny)
        with np.errstate(over="ignore"):
            dT = np.exp(-(st.phi - m) - math.log(Z) - factor.logpdf(T))
        dT[flat | ~np.isfinite(dT)] = 0.0
        antider = np.concatenate(([0.0], np.cumsum(_trap4(T, dT, h))))
        phi_new = (1 - damping) * st.phi + damping * antider
        g_new = (1 - damping) * st.g + damping * T
        # fix the additive constant so that int e^{-phi} = 1
        m2 = phi_new.min()
        w2 = np.exp(-(phi_new - m2))
        tail = (w2[0] / abs(g_new[0]) if g_new[0] < 0 else 0.0) + (w2[-1] / g_new[-1] if g_new[-1] > 0 else 0.0)
        phi_new = phi_new + math.log(np.sum(_trap4(w2, -g_new * w2, h)) + tail) - m2
        st.change = float(np.max(np.abs(phi_new - st.phi)))
        st.phi, st.g = phi_new, g_new
        st.hess = _fd5(x, st.g)
        r = np.exp(-st.phi) - np.exp(factor.logpdf(st.g)) * st.hess
        st.residual = float(np.max(np.abs(r[2:-2])))
        st.iterations = k
        if k >= min_iter and st.change < change_tol and st.residual < tol:
            break
    return st


def solve_1d(mu, nodes=8192, bounds=None, tol=1e-6, max_iter=2000, damping=0.5,
             gradient_at_origin=0.0, change_tol=None, regrid=True):
    """Moment map of a centered 1D analytic measure by damped fixed-point iteration.

    Each sweep forms ``nu ~ e^{-phi}`` on the grid, the monotone rearrangement
    ``T = F_mu^{-1} o F_nu``, and relaxes ``phi`` towards an antiderivative of
    ``T``. Stops when the sup change is below ``change_tol`` (default
    ``tol / 1000``) and the residual of ``e^{-phi} = rho(phi') phi''`` is
    below ``tol``.

    Parameters
    ----------
    mu : Measure
        Centered, one-dimensional, analytic.
    nodes : int
        Grid size.
    bounds : (float, float), optional
        Initial grid interval; widened automatically until ``e^{-phi}`` has
        dropped 48 nats at both ends and the gradient range covers the
        quadrature support of ``mu``.
    regrid : bool
        After a first solve on a uniform grid, redistribute the nodes with
        density proportional to ``sqrt(1 + phi'^2)`` and solve again.
    gradient_at_origin : float
        Translation convention: the returned map satisfies
        ``phi'(0) = gradient_at_origin``.

    Returns
    -------
    GridMap1D
    """
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    if mu.kind != "analytic":
        raise ValueError("solve_1d needs an analytic measure; use solve_semidiscrete for clouds")
    if mu.dim != 1:
        raise ValueError("solve_1d is one-dimensional; use solve_product")
    if not mu.centered:
        raise NotCenteredError()
    f = mu.factors[0]
    var = f.var
    change_tol = tol / 1000 if change_tol is None else change_tol
    if bounds is None:
        gauss = math.sqrt(100.0 / var)
        left = 50.0 / abs(f.lo) if np.isfinite(f.lo) else gauss
        right = 50.0 / abs(f.hi) if np.isfinite(f.hi) else gauss
        bounds = (-left, right)
    lo, hi = map(float, bounds)
    tlo, thi = f.truncation()
    prev = None
    for attempt in range(12):
        x = np.linspace(lo, hi, nodes)
        if prev is None:
            phi, g = 0.5 * var * x * x, var * x
        else:
            phi, g = prev._value(x), prev._grad(x)
        st = _iterate(f, x, phi, g, tol, max_iter, damping, change_tol)
        if st.iterations >= max_iter and not (st.change < change_tol and st.residual < tol):
            raise SolverStalledError(st.residual, st.iterations)
        drop_l = st.phi[0] - st.phi.min()
        drop_r = st.phi[-1] - st.phi.min()
        cover_l = st.g[0] <= tlo or st.g[0] <= f.lo + 1e-12 * max(1.0, abs(f.lo))
        cover_r = st.g[-1] >= thi or st.g[-1] >= f.hi - 1e-12 * max(1.0, abs(f.hi))
        grow_l = drop_l < 48.0 or not cover_l
        grow_r = drop_r < 48.0 or not cover_r
        prev = GridMap1D(x, st.phi, st.g, st.hess)
        if not (grow_l or grow_r):
            break
        span = hi - lo
        if grow_l:
            lo -= 0.5 * span
        if grow_r:
            hi += 0.5 * span
    else:
        raise SolverStalledError(st.residual, st.iterations)
    if regrid:
        # equidistribute sqrt(1 + phi'^2) so that h |phi'| stays small where e^{-phi} decays fast
        # trim to where e^{-phi} is within 60 nats of its peak, keeping quadrature coverage
        live = np.flatnonzero(st.phi - st.phi.min() <= 60.0)
        i0 = live[0] if (st.g[live[0]] <= tlo or st.g[live[0]] <= f.lo + 1e-12) else 0
        i1 = live[-1] if (st.g[live[-1]] >= thi or st.g[live[-1]] >= f.hi - 1e-12) else len(x) - 1
        x, gg = x[i0:i1 + 1], st.g[i0:i1 + 1]
        dens = np.sqrt(1.0 + gg**2)
        arc = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(x) * (dens[1:] + dens[:-1]))))
        x = np.interp(np.linspace(0.0, arc[-1], nodes), arc, x)
        st = _iterate(f, x, prev._value(x), prev._grad(x), tol, max_iter, damping, change_tol, min_iter=30)
        if not (st.change < change_tol and st.residual < tol):
            raise SolverStalledError(st.residual, st.iterations)
    # translation convention phi'(0) = gradient_at_origin
    spline = CubicHermiteSpline(x, st.g, st.hess)
    target = float(gradient_at_origin)
    k = int(np.clip(np.searchsorted(st.g, target) - 1, 0, len(x) - 2))
    shift = optimize.brentq(lambda t: float(spline(t)) - target, x[k], x[k + 1], xtol=1e-15)
    normalization = {"convention": "grad_at_origin", "value": target, "shift": shift}
    info = {"iterations": st.iterations, "residual": st.residual, "change": st.change,
            "nodes": nodes, "bounds": [float(x[0] - shift), float(x[-1] - shift)]}
    logger.debug("solve_1d converged: %s", info)
    return GridMap1D(x - shift, st.phi, st.g, st.hess, normalization=normalization, info=info)


def solve_product(maps):
    """Sum of 1D maps acting on separate coordinates."""
    maps = list(maps)
    for m in maps:
        if getattr(m, "dim", None) != 1:
            raise ValueError("product factors must be one-dimensional maps")
    return ProductMap(maps)


def solve_map(mu, backend="auto", **kw):
    """Dispatch to a closed form, the 1D solver, a product, or the semi-discrete solver."""
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    if backend in ("auto", "closed_form"):
        try:
            return closed_form_map(mu)
        except (NoClosedFormError, NotCenteredError):
            if backend == "closed_form":
                raise
    if mu.kind == "empirical" or backend in ("max_affine", "smoothed_max_affine"):
        phi = solve_semidiscrete(mu, tol=kw.get("tol"))
        if backend == "smoothed_max_affine":
            return smooth_max_affine(phi, kw.get("beta", 10.0))
        return phi
    grid_kw = {k: v for k, v in kw.items() if k in ("nodes", "tol", "max_iter", "bounds") and v is not None}
    if mu.dim == 1:
        return solve_1d(mu, **grid_kw)
    from .measures import from_factors

    maps = []
    for f in mu.factors:
        try:
            maps.append(_closed_form_factor(f) if backend == "auto" else None)
        except NoClosedFormError:
            maps.append(None)
        if maps[-1] is None:
            maps[-1] = solve_1d(from_factors([f], f.family), **grid_kw)
    return ProductMap(maps)


# ---------------------------------------------------------------------------
# semi-discrete solver
# ---------------------------------------------------------------------------


def solve_semidiscrete(mu, quad=None, tol=None, max_iter=20000, seed=0):
    """Max-affine moment map of a centered discrete measure.

    Minimizes the convex dual ``J(c) = sum_i p_i c_i - log int e^{-max_i(<x,y_i> - c_i)} dx``
    by gradient descent with Barzilai-Borwein steps and Armijo backtracking.
    ``grad J = p - (normalized cell masses)``. Cell masses are exact in 1D and
    use randomized quasi-Monte Carlo (``quad = {"count": ..., "replicates": ...}``)
    in higher dimension.
    """
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    if mu.kind != "empirical":
        raise ValueError("solve_semidiscrete needs an empirical measure")
    if not mu.centered:
        raise NotCenteredError()
    Y, p = mu.points, mu.weights
    m, d = Y.shape
    if m < 2:
        raise HyperplaneSupportError()
    scale = max(1.0, float(np.max(np.abs(mu.covariance))))
    if np.linalg.matrix_rank(mu.covariance, tol=1e-12 * scale) < d:
        raise HyperplaneSupportError()
    if tol is None:
        tol = 1e-9 if d == 1 else 1e-3
    quad = dict(quad or {})

    if d == 1:
        def masses(c):
            lm = MaxAffineMap(Y, c).log_cell_masses()
            lz = special.logsumexp(lm)
            return np.exp(lm - lz), lz
        reps_fn = None
    else:
        count = int(quad.get("count", 1 << 17))
        replicates = int(quad.get("replicates", 8))
        lam = _laplace_proposal(Y, np.zeros(m))
        groups = _mc_points(d, count, seed, lam, replicates)
        pooled = (np.concatenate([g[0] for g in groups]), np.concatenate([g[1] for g in groups]))

        def masses(c):
            vals, idx = _kernels.max_affine(pooled[0], Y, c)
            lw = pooled[1] - vals
            lz = special.logsumexp(lw)
            return np.bincount(idx, weights=np.exp(lw - lz), minlength=m), lz - math.log(len(lw))

        def reps_fn(c):
            out = []
            for x, logw in groups:
                vals, idx = _kernels.max_affine(x, Y, c)
                lw = logw - vals
                out.append(np.bincount(idx, weights=np.exp(lw - special.logsumexp(lw)), minlength=m))
            return np.array(out)

    def objective(c):
        mass, lz = masses(c)
        return float(np.dot(p, c) - lz), p - mass

    c = np.zeros(m)
    J, grad = objective(c)
    step = 1.0
    prev_c = prev_g = None
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol / 10:
            break
        if prev_c is not None:
            s, yv = c - prev_c, grad - prev_g
            sy = float(np.dot(s, yv))
            if sy > 0:
                step = float(np.dot(s, s) / sy)
        t = step
        for _ in range(60):
            cn = c - t * grad
            Jn, gn = objective(cn)
            if Jn <= J - 1e-4 * t * float(np.dot(grad, grad)):
                break
            t *= 0.5
        prev_c, prev_g = c, grad
        c, J, grad = cn, Jn, gn
    gnorm = float(np.max(np.abs(grad)))
    if gnorm >= tol:
        raise SolverStalledError(gnorm, it)
    mass, lz = masses(c)
    c = c - lz
    info = {"iterations": it, "gradient_norm": gnorm, "tol": tol}
    if reps_fn is not None:
        reps = reps_fn(c)
        se = float(np.max(reps.std(axis=0, ddof=1) / math.sqrt(len(reps))))
        info["mass_standard_error"] = se
        if se > tol:
            raise InsufficientQuadratureError(f"insufficient quadrature (standard error {se:.2e} > tol {tol:.1e})")
    info["cell_masses"] = mass.tolist()
    return MaxAffineMap(Y, c, normalization={"convention": "c0 = 0 start; int e^{-phi} = 1"}, info=info)


def smooth_max_affine(phi, beta):
    """Log-sum-exp smoothing; ``phi <= phi_beta <= phi + log(m)/beta``."""
    if not beta > 0:
        raise ValueError("temperature must be positive")
    return SmoothedMaxAffineMap(phi.slopes, phi.intercepts, beta,
                                normalization={"smoothed_from": phi.normalization})


def legendre(phi, y):
    """``(phi*(y), grad phi*(y))``; ``grad phi*`` inverts ``grad phi``."""
    return phi.legendre(y)


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


@dataclass
class ResidualReport:
    residual: np.ndarray
    sup: float
    flagged: int


def verify_tke_residual(phi, mu, points):
    """Pointwise ``e^{-phi(x)}/Z - rho(grad phi(x)) det Hess phi(x)`` and its sup-norm.

    Points whose gradient leaves the closed support of ``mu`` or whose Hessian
    determinant is not finite are flagged and excluded from the sup.
    """
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    x = _as_points(points, phi.dim)
    grad = phi.gradient(x)
    det = np.linalg.det(phi.hessian(x))
    ok = mu.in_support(grad) & np.isfinite(det)
    rho = np.zeros(len(x))
    rho[ok] = mu.density(grad[ok])
    r = np.exp(-phi.value(x) - phi.log_normalizer) - rho * det
    r[~ok] = np.nan
    flagged = int((~ok).sum())
    if flagged:
        logger.warning("verify_tke_residual: %d points flagged", flagged)
    sup = float(np.nanmax(np.abs(r))) if ok.any() else float("nan")
    return ResidualReport(r, sup, flagged)


@dataclass
class PushforwardReport:
    statistic: float
    p_value: float
    method: str
    count: int


def _discrete_ks(sample, atoms, weights):
    order = np.argsort(atoms)
    atoms, weights = atoms[order], weights[order]
    cdf = np.cumsum(weights)
    s = np.sort(sample)
    emp = np.searchsorted(s, atoms, side="right") / len(s)
    emp_left = np.searchsorted(s, atoms, side="left") / len(s)
    stat = max(np.max(np.abs(emp - cdf)), np.max(np.abs(emp_left - (cdf - weights))))
    return float(stat), float(stats.kstwo.sf(stat, len(s)))


def pushforward_check(phi, mu, count=100_000, seed=0, permutations=99):
    """Sample ``X ~ e^{-phi}``, push through ``grad phi`` and compare with ``mu``.

    1D: Kolmogorov-Smirnov statistic against the CDF of ``mu``.
    d >= 2: energy distance against a sample of ``mu`` with a permutation p-value.
    """
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    X = phi.sample_base(count, seed)
    Y = phi.gradient(X)
    if phi.dim == 1:
        if mu.kind == "empirical":
            stat, pv = _discrete_ks(Y[:, 0], mu.points[:, 0], mu.weights)
        else:
            res = stats.kstest(Y[:, 0], mu.factors[0].cdf)
            stat, pv = float(res.statistic), float(res.pvalue)
        return PushforwardReport(stat, pv, "ks", count)
    M = mu.sample(count, seed=_rng.mix_seed(seed, 1)[0])
    stat = _energy(Y, M)
    pooled = np.concatenate([Y, M])
    perm_rng = np.random.Generator(np.random.Philox(key=_rng.mix_seed(seed, 2)))
    exceed = 0
    for _ in range(permutations):
        idx = perm_rng.permutation(len(pooled))
        if _energy(pooled[idx[:count]], pooled[idx[count:]]) >= stat:
            exceed += 1
    return PushforwardReport(stat, (exceed + 1) / (permutations + 1), "energy", count)


def _energy(A, B):
    return 2 * _kernels.mean_distance(A, B) - _kernels.mean_distance(A, A) - _kernels.mean_distance(B, B)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def map_from_dict(data):
    backend = data["backend"]
    if backend == "closed_form":
        if data.get("family") == "linear":
            return LinearMap(map_from_dict(data["base"]), data["matrix"])
        return ClosedForm1D(data["family"], data.get("scale", 1.0))
    if backend == "grid1d":
        return GridMap1D(data["nodes"], data["values"], data["gradients"], data["hessians"],
                         normalization=data.get("normalization"))
    if backend == "product":
        return ProductMap([map_from_dict(f) for f in data["factors"]])
    if backend == "max_affine":
        return MaxAffineMap(data["slopes"], data["intercepts"], normalization=data.get("normalization"))
    if backend == "smoothed_max_affine":
        return SmoothedMaxAffineMap(data["slopes"], data["intercepts"], data["beta"])
    raise ValueError(f"unknown backend {backend!r}")


def load_map(path):
    with open(path) as fh:
        return map_from_dict(json.load(fh))
