"""Probability measures on R^d.

Analytic measures are products of one-dimensional factors (Gaussian, uniform,
centered exponential, quartic, or a generic ``e^{-V}``); each factor carries an
exact or tabulated CDF, a quantile function and a composite Gauss-Legendre
rule on the region where its log-density is within ``TRUNCATION_NATS`` of its
maximum. Empirical measures are finite weighted point clouds.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import optimize, special

from . import _rng
from .errors import (
    HyperplaneSupportError,
    IntegrationError,
    SamplingUnsupportedError,
    UnknownFamilyError,
)
from .quadrature import QuadratureRule, gauss_legendre, tensor_rule

logger = logging.getLogger(__name__)

TRUNCATION_NATS = 46.0
CENTER_TOL = 1e-8
ISOTROPY_TOL = 1e-6
# tabulated CDFs reach further out than the quadrature truncation
_TABLE_NATS = 64.0


class Factor1D:
    """A law on R of the form ``loc + scale * Z`` for a standard shape ``Z``.

    Subclasses implement the ``_``-prefixed methods in the standardized
    coordinate ``z``.
    """

    family = "abstract"
    log_concave = True
    z_lo, z_hi = -np.inf, np.inf

    def __init__(self, loc=0.0, scale=1.0):
        if not scale > 0:
            raise ValueError("nonpositive scale")
        self.loc = float(loc)
        self.scale = float(scale)
        self._moments = None

    # -- standard shape hooks -------------------------------------------------
    def _logpdf(self, z):
        raise NotImplementedError

    def _dlogpdf(self, z):
        raise NotImplementedError

    def _cdf(self, z):
        raise NotImplementedError

    def _sf(self, z):
        raise NotImplementedError

    def _ppf(self, u):
        raise NotImplementedError

    def _isf(self, q):
        raise NotImplementedError

    def _truncation(self):
        raise NotImplementedError

    def _epsilon(self):
        """Lower bound on the second derivative of ``-log density`` in ``z``."""
        return None

    def params(self):
        raise NotImplementedError

    # -- public API in x coordinates -----------------------------------------
    @property
    def lo(self):
        return self.loc + self.scale * self.z_lo

    @property
    def hi(self):
        return self.loc + self.scale * self.z_hi

    def _z(self, x):
        return (np.asarray(x, dtype=float) - self.loc) / self.scale

    def in_support(self, x):
        z = self._z(x)
        return (z >= self.z_lo) & (z <= self.z_hi)

    def logpdf(self, x):
        z = self._z(x)
        inside = (z >= self.z_lo) & (z <= self.z_hi)
        zc = np.where(inside, z, 0.0)
        return np.where(inside, self._logpdf(zc) - math.log(self.scale), -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def dlogpdf(self, x):
        return self._dlogpdf(self._z(x)) / self.scale

    def cdf(self, x):
        z = np.clip(self._z(x), self.z_lo, self.z_hi)
        return self._cdf(z)

    def sf(self, x):
        z = np.clip(self._z(x), self.z_lo, self.z_hi)
        return self._sf(z)

    def ppf(self, u):
        return self.loc + self.scale * self._ppf(np.asarray(u, dtype=float))

    def isf(self, q):
        return self.loc + self.scale * self._isf(np.asarray(q, dtype=float))

    def quantile(self, u):
        """Quantile function using the survival branch above the median."""
        u = np.asarray(u, dtype=float)
        upper = u > 0.5
        out = np.empty_like(u)
        out[~upper] = self.ppf(u[~upper])
        out[upper] = self.isf(1.0 - u[upper])
        return out

    def truncation(self):
        zl, zh = self._truncation()
        return self.loc + self.scale * zl, self.loc + self.scale * zh

    @property
    def epsilon(self):
        e = self._epsilon()
        return None if e is None else e / self.scale**2

    def rule(self, panels=128, order=20):
        """Lebesgue nodes/weights on the truncated support."""
        a, b = self.truncation()
        return gauss_legendre(a, b, panels, order)

    def moments(self):
        if self._moments is None:
            x, w = self.rule()
            w = w * self.pdf(x)
            mass = w.sum()
            mean = np.dot(w, x) / mass
            var = np.dot(w, (x - mean) ** 2) / mass
            self._moments = (float(mass), float(mean), float(var))
        return self._moments

    @property
    def mean(self):
        return self.moments()[1]

    @property
    def var(self):
        return self.moments()[2]

    def affine(self, loc, scale):
        """The law of ``loc + scale * Z`` for this factor's shape."""
        new = self.__class__.__new__(self.__class__)
        new.__dict__.update(self.__dict__)
        new.loc = float(loc)
        new.scale = float(scale)
        new._moments = None
        return new

    def spec(self):
        return {"family": self.family, "dim": 1, "params": self.params()}

    def __repr__(self):
        return f"{self.__class__.__name__}({self.params()})"


class GaussianFactor(Factor1D):
    family = "gaussian"

    def __init__(self, variance=1.0, mean=0.0):
        if not variance > 0:
            raise ValueError("nonpositive scale")
        super().__init__(mean, math.sqrt(variance))

    def _logpdf(self, z):
        return -0.5 * z * z - 0.5 * math.log(2 * math.pi)

    def _dlogpdf(self, z):
        return -z

    def _cdf(self, z):
        return special.ndtr(z)

    def _sf(self, z):
        return special.ndtr(-z)

    def _ppf(self, u):
        return special.ndtri(u)

    def _isf(self, q):
        return -special.ndtri(q)

    def _truncation(self):
        r = math.sqrt(2 * TRUNCATION_NATS)
        return -r, r

    def _epsilon(self):
        return 1.0

    def moments(self):
        return 1.0, self.loc, self.scale**2

    def params(self):
        p = {"variance": self.scale**2}
        if self.loc:
            p["mean"] = self.loc
        return p


class UniformFactor(Factor1D):
    family = "uniform_box"
    z_lo, z_hi = -1.0, 1.0

    def __init__(self, lo=-1.0, hi=1.0):
        if not hi > lo:
            raise ValueError("nonpositive scale")
        super().__init__(0.5 * (lo + hi), 0.5 * (hi - lo))

    def _logpdf(self, z):
        return np.full_like(np.asarray(z, dtype=float), -math.log(2.0))

    def _dlogpdf(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def _cdf(self, z):
        return 0.5 * (z + 1.0)

    def _sf(self, z):
        return 0.5 * (1.0 - z)

    def _ppf(self, u):
        return 2.0 * u - 1.0

    def _isf(self, q):
        return 1.0 - 2.0 * q

    def _truncation(self):
        return -1.0, 1.0

    def moments(self):
        return 1.0, self.loc, self.scale**2 / 3.0

    def params(self):
        return {"lo": self.lo, "hi": self.hi}


class ExponentialFactor(Factor1D):
    """Density ``e^{-(z+1)}`` on ``[-1, inf)``: mean 0, variance 1."""

    family = "exponential_centered"
    z_lo = -1.0

    def __init__(self, scale=1.0, loc=0.0):
        super().__init__(loc, scale)

    def _logpdf(self, z):
        return -(z + 1.0)

    def _dlogpdf(self, z):
        return np.full_like(np.asarray(z, dtype=float), -1.0)

    def _cdf(self, z):
        return -np.expm1(-(z + 1.0))

    def _sf(self, z):
        return np.exp(-(z + 1.0))

    def _ppf(self, u):
        return -1.0 - np.log1p(-u)

    def _isf(self, q):
        return -1.0 - np.log(q)

    def _truncation(self):
        return -1.0, TRUNCATION_NATS - 1.0

    def moments(self):
        return 1.0, self.loc, self.scale**2

    def params(self):
        p = {"scale": self.scale}
        if self.loc:
            p["loc"] = self.loc
        return p


class _Table:
    """Tabulated CDF of an unnormalized log-density on a finite interval."""

    def __init__(self, logf, a, b, cells=2048, order=16):
        self.logf = logf
        self.edges = np.linspace(a, b, cells + 1)
        t, w = np.polynomial.legendre.leggauss(order)
        self._t, self._w = t, w
        h = np.diff(self.edges)
        x = self.edges[:-1, None] + 0.5 * h[:, None] * (t[None, :] + 1.0)
        lf = logf(x)
        self.logmax = float(np.max(lf))
        mass = 0.5 * h * np.sum(w[None, :] * np.exp(lf - self.logmax), axis=1)
        self.total = float(mass.sum())
        self.log_norm = math.log(self.total) + self.logmax
        self.cum_left = np.concatenate(([0.0], np.cumsum(mass)))
        self.cum_right = np.concatenate((np.cumsum(mass[::-1])[::-1], [0.0]))

    def _cell(self, x):
        k = np.searchsorted(self.edges, x, side="right") - 1
        return np.clip(k, 0, len(self.edges) - 2)

    def _partial(self, a, b):
        half = 0.5 * (b - a)
        x = a[..., None] + half[..., None] * (self._t + 1.0)
        return half * np.sum(self._w * np.exp(self.logf(x) - self.logmax), axis=-1)

    def pdf(self, x):
        return np.exp(self.logf(x) - self.log_norm)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.edges[0], self.edges[-1])
        k = self._cell(x)
        return (self.cum_left[k] + self._partial(self.edges[k], x)) / self.total

    def sf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.edges[0], self.edges[-1])
        k = self._cell(x)
        return (self.cum_right[k + 1] + self._partial(x, self.edges[k + 1])) / self.total

    def _invert(self, target, upper):
        target = np.asarray(target, dtype=float)
        shape = target.shape
        target = target.ravel()
        if upper:
            table = self.cum_right / self.total
            k = np.searchsorted(-table, -target, side="left") - 1
        else:
            table = self.cum_left / self.total
            k = np.searchsorted(table, target, side="right") - 1
        k = np.clip(k, 0, len(self.edges) - 2)
        a, b = self.edges[k], self.edges[k + 1]
        ta, tb = table[k], table[k + 1]
        frac = np.where(tb != ta, (target - ta) / np.where(tb != ta, tb - ta, 1.0), 0.5)
        x = a + np.clip(frac, 0.0, 1.0) * (b - a)
        lo, hi = a.copy(), b.copy()
        active = np.ones(x.shape, dtype=bool)
        for _ in range(60):
            xa = x[active]
            val = self.sf(xa) if upper else self.cdf(xa)
            err = val - target[active]
            # maintain a bracket; the tabulated CDF is monotone
            below = err < 0 if upper else err > 0
            above = err > 0 if upper else err < 0
            la, ha = lo[active], hi[active]
            ha = np.where(below, xa, ha)
            la = np.where(above, xa, la)
            step = (err if upper else -err) / np.maximum(self.pdf(xa), 1e-300)
            # the tabulated CDF is only accurate to a few ulps, so stop there
            xtol = 4e-15 * (1.0 + np.abs(xa))
            done = (np.abs(step) <= xtol) | (np.abs(err) <= 2e-16 * np.abs(target[active])) | (ha - la <= xtol)
            nxt = xa + step
            bad = ~((nxt > la) & (nxt < ha))
            nxt = np.where(bad, 0.5 * (la + ha), nxt)
            x[active] = np.where(done, xa + np.where(np.abs(step) <= xtol, step, 0.0), nxt)
            lo[active], hi[active] = la, ha
            idx = np.flatnonzero(active)
            active[idx[done]] = False
            if not active.any():
                break
        return x.reshape(shape)

    def ppf(self, u):
        return self._invert(u, upper=False)

    def isf(self, q):
        return self._invert(q, upper=True)

    def truncation(self, nats):
        grid = np.linspace(self.edges[0], self.edges[-1], 20001)
        keep = grid[self.logf(grid) >= self.logmax - nats]
        return float(keep[0]), float(keep[-1])


class PotentialFactor(Factor1D):
    """Normalized density proportional to ``e^{-V}`` for a convex ``V`` on R."""

    family = "potential"

    def __init__(self, potential, dpotential, d2potential=None, interval=None,
                 loc=0.0, scale=1.0, name=None, epsilon=None):
        super().__init__(loc, scale)
        self.potential = potential
        self.dpotential = dpotential
        self.d2potential = d2potential
        self._eps = epsilon
        self.name = name
        a, b = interval if interval is not None else _potential_interval(potential, dpotential)
        self._table = _Table(lambda z: -potential(z), a, b)
        self._trunc = self._table.truncation(TRUNCATION_NATS)

    def _logpdf(self, z):
        return -self.potential(z) - self._table.log_norm

    def _dlogpdf(self, z):
        return -self.dpotential(z)

    def _cdf(self, z):
        return self._table.cdf(z)

    def _sf(self, z):
        return self._table.sf(z)

    def _ppf(self, u):
        return self._table.ppf(u)

    def _isf(self, q):
        return self._table.isf(q)

    def _truncation(self):
        return self._trunc

    def _epsilon(self):
        return self._eps

    def params(self):
        return {"name": self.name, "loc": self.loc, "scale": self.scale}


def _potential_interval(V, dV, nats=_TABLE_NATS):
    lo, hi = -1.0, 1.0
    while dV(lo) > 0:
        lo *= 2.0
    while dV(hi) < 0:
        hi *= 2.0
    xmin = optimize.brentq(dV, lo, hi) if dV(lo) < 0 < dV(hi) else 0.0
    vmin = V(xmin)
    a, b = xmin - 1.0, xmin + 1.0
    while V(a) - vmin < nats:
        a = xmin - 2.0 * (xmin - a)
    while V(b) - vmin < nats:
        b = xmin + 2.0 * (b - xmin)
    a = optimize.brentq(lambda x: V(x) - vmin - nats, a, xmin)
    b = optimize.brentq(lambda x: V(x) - vmin - nats, xmin, b)
    return a, b


class QuarticFactor(PotentialFactor):
    """Density proportional to ``exp(-z^2/2 - alpha z^4)``."""

    family = "quartic"

    def __init__(self, alpha=0.25, scale=1.0, loc=0.0):
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        self.alpha = float(alpha)
        if alpha > 0:
            r = math.sqrt((-0.5 + math.sqrt(0.25 + 4 * alpha * _TABLE_NATS)) / (2 * alpha))
        else:
            r = math.sqrt(2 * _TABLE_NATS)
        super().__init__(
            lambda z: 0.5 * z * z + alpha * (z * z) ** 2,
            lambda z: z + 4 * alpha * z * z * z,
            lambda z: 1.0 + 12 * alpha * z * z,
            interval=(-r, r),
            loc=loc,
            scale=scale,
            name="quartic",
            epsilon=1.0,
        )

    def params(self):
        p = {"alpha": self.alpha}
        if self.scale != 1.0:
            p["scale"] = self.scale
        if self.loc:
            p["loc"] = self.loc
        return p


class PushforwardFactor(Factor1D):
    """Law of ``T(X)`` for an increasing ``T`` and a base factor ``X``.

    ``T`` must come with its derivative and inverse; quantiles and the
    quadrature rule are those of the base mapped through ``T``.
    """

    family = "pushforward"
    log_concave = False

    def __init__(self, base, T, dT, T_inv, name=None):
        super().__init__(0.0, 1.0)
        self.base = base
        self.T, self.dT, self.T_inv = T, dT, T_inv
        self.name = name
        self.z_lo = float(T(base.lo)) if np.isfinite(base.lo) else -np.inf
        self.z_hi = float(T(base.hi)) if np.isfinite(base.hi) else np.inf

    def _logpdf(self, z):
        x = self.T_inv(z)
        return self.base.logpdf(x) - np.log(self.dT(x))

    def _dlogpdf(self, z):
        h = 1e-6 * (1.0 + np.abs(z))
        return (self._logpdf(z + h) - self._logpdf(z - h)) / (2 * h)

    def _cdf(self, z):
        return self.base.cdf(self.T_inv(z))

    def _sf(self, z):
        return self.base.sf(self.T_inv(z))

    def _ppf(self, u):
        return self.T(self.base.ppf(u))

    def _isf(self, q):
        return self.T(self.base.isf(q))

    def _truncation(self):
        a, b = self.base.truncation()
        return float(self.T(a)), float(self.T(b))

    def rule(self, panels=128, order=20):
        x, w = self.base.rule(panels, order)
        # Lebesgue weights transform with the Jacobian
        return self.T(x), w * self.dT(x)

    def affine(self, loc, scale):
        raise NotImplementedError("pushforward factors are not rescaled")

    def params(self):
        return {"name": self.name, "base": self.base.spec()}


def _factor_from_spec(family, params):
    params = dict(params or {})
    if family == "gaussian":
        var = params.get("variance", params.get("sigma2", 1.0))
        return GaussianFactor(var, params.get("mean", 0.0))
    if family == "uniform_box":
        return UniformFactor(params.get("lo", -1.0), params.get("hi", 1.0))
    if family == "exponential_centered":
        return ExponentialFactor(params.get("scale", 1.0), params.get("loc", 0.0))
    if family == "quartic":
        return QuarticFactor(params.get("alpha", 0.25), params.get("scale", 1.0), params.get("loc", 0.0))
    raise UnknownFamilyError(f"unknown family {family!r}")


@dataclass(frozen=True, eq=False)
class Measure:
    """A probability measure on R^d.

    ``kind == "analytic"``: a product of :class:`Factor1D`.
    ``kind == "empirical"``: weighted points; ``counts``/``denominator`` hold
    exact rational weights ``k/n`` when the cloud was given unweighted.
    """

    kind: str
    dim: int
    family: str
    factors: tuple = ()
    points: np.ndarray | None = None
    weights: np.ndarray | None = None
    counts: np.ndarray | None = None
    denominator: int | None = None
    mean: np.ndarray = None
    covariance: np.ndarray = None
    centered: bool = False
    isotropic: bool = False
    auto_centered: bool = False
    transform: dict | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    # -- density ---------------------------------------------------------------
    @property
    def is_analytic(self):
        return self.kind == "analytic"

    @property
    def log_concave(self):
        return self.is_analytic and all(f.log_concave for f in self.factors)

    @property
    def epsilon(self):
        """Uniform log-concavity constant, ``None`` if not uniformly log-concave."""
        if not self.is_analytic:
            return None
        eps = [f.epsilon for f in self.factors]
        return None if any(e is None for e in eps) else min(eps)

    def _pts(self, x):
        x = np.asarray(x, dtype=float)
        return x.reshape(-1, self.dim) if x.ndim < 2 else x

    def log_density(self, x):
        self._need_analytic()
        x = self._pts(x)
        return sum(f.logpdf(x[:, k]) for k, f in enumerate(self.factors))

    def density(self, x):
        return np.exp(self.log_density(x))

    def grad_log_density(self, x):
        self._need_analytic()
        x = self._pts(x)
        return np.stack([f.dlogpdf(x[:, k]) for k, f in enumerate(self.factors)], axis=1)

    def in_support(self, x, open_=False):
        self._need_analytic()
        x = self._pts(x)
        ok = np.ones(len(x), dtype=bool)
        for k, f in enumerate(self.factors):
            if open_:
                ok &= (x[:, k] > f.lo) & (x[:, k] < f.hi)
            else:
                ok &= (x[:, k] >= f.lo) & (x[:, k] <= f.hi)
        return ok

    def _need_analytic(self):
        if not self.is_analytic:
            raise ValueError("operation requires an analytic measure")

    # -- integration -------------------------------------------------------------
    def quadrature(self, panels=None, order=None, mc_count=1 << 16):
        """Rule for expectations: Gauss-Legendre for d <= 2, Monte Carlo beyond."""
        key = ("quad", panels, order, mc_count)
        if key in self._cache:
            return self._cache[key]
        if not self.is_analytic:
            rule = QuadratureRule(self.points, self.weights, {"kind": "empirical"})
        elif self.dim == 1:
            f = self.factors[0]
            x, w = f.rule(panels or 128, order or 20)
            rule = QuadratureRule(
                x[:, None], w * f.pdf(x),
                {"kind": "gauss_legendre", "nodes": len(x), "interval": list(f.truncation())},
                lebesgue_weights=w,
            )
        elif self.dim == 2:
            rules = [f.rule(panels or 32, order or 16) for f in self.factors]
            pts, lw = tensor_rule(rules)
            dens = tensor_rule([(r[0], r[1] * f.pdf(r[0])) for r, f in zip(rules, self.factors)])[1]
            rule = QuadratureRule(
                pts, dens, {"kind": "tensor_gauss_legendre", "nodes": len(pts)}, lebesgue_weights=lw
            )
        else:
            pts = sample(self, mc_count, seed=0)
            rule = QuadratureRule(
                pts, np.full(mc_count, 1.0 / mc_count), {"kind": "monte_carlo", "count": mc_count}
            )
        self._cache[key] = rule
        return rule

    def expect(self, fn):
        rule = self.quadrature()
        return rule.expect(fn(rule.points))

    # -- sampling ----------------------------------------------------------------
    def sample(self, count, seed, threads=1):
        return sample(self, count, seed, threads=threads)

    # -- description ---------------------------------------------------------------
    def spec(self):
        if self.kind == "empirical":
            return {
                "family": "empirical",
                "dim": self.dim,
                "params": {"points": self.points.tolist(), "weights": self.weights.tolist()},
            }
        if self.family == "product" or len({f.family for f in self.factors}) > 1:
            return {
                "family": "product",
                "dim": self.dim,
                "params": {"factors": [f.spec() for f in self.factors]},
            }
        specs = [f.params() for f in self.factors]
        if all(s == specs[0] for s in specs):
            return {"family": self.factors[0].family, "dim": self.dim, "params": specs[0]}
        return {
            "family": "product",
            "dim": self.dim,
            "params": {"factors": [f.spec() for f in self.factors]},
        }

    def factor(self, k=0):
        return self.factors[k]


# -- construction -----------------------------------------------------------------


def _analytic(factors, family, center=True, transform=None):
    factors = list(factors)
    means = np.array([f.mean for f in factors])
    auto = False
    if center and np.linalg.norm(means) >= CENTER_TOL:
        logger.warning("measure %s is not centered (mean %s); recentering", family, means)
        factors = [f.affine(f.loc - m, f.scale) for f, m in zip(factors, means)]
        means = np.array([f.mean for f in factors])
        auto = True
    cov = np.diag([f.var for f in factors])
    centered = bool(np.linalg.norm(means) < CENTER_TOL)
    iso = centered and bool(np.max(np.abs(cov - np.eye(len(factors)))) < ISOTROPY_TOL)
    return Measure(
        kind="analytic",
        dim=len(factors),
        family=family,
        factors=tuple(factors),
        mean=means,
        covariance=cov,
        centered=centered,
        isotropic=iso,
        auto_centered=auto,
        transform=transform,
    )


def from_factors(factors, family="product", center=True):
    return _analytic(factors, family, center=center)


def empirical(points, weights=None, check_support=True, family="empirical", transform=None):
    """Weighted point cloud; duplicate points are merged."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    if n == 0:
        raise ValueError("empty cloud")
    counts = denom = None
    if weights is None:
        uniq, inv = np.unique(pts, axis=0, return_inverse=True)
        counts = np.bincount(inv.ravel(), minlength=len(uniq)).astype(np.int64)
        denom = n
        pts = uniq
        w = counts / denom
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape[0] != n or np.any(w < 0):
            raise ValueError("weights must be nonnegative, one per point")
        w = w / w.sum()
    mean = w @ pts
    cov = (pts - mean).T @ ((pts - mean) * w[:, None])
    cov = 0.5 * (cov + cov.T)
    if check_support:
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.linalg.matrix_rank(cov, tol=1e-12 * scale) < d:
            raise HyperplaneSupportError()
    centered = bool(np.linalg.norm(mean) < CENTER_TOL)
    iso = centered and bool(np.max(np.abs(cov - np.eye(d))) < ISOTROPY_TOL)
    return Measure(
        kind="empirical",
        dim=d,
        family=family,
        points=pts,
        weights=w,
        counts=counts,
        denominator=denom,
        mean=mean,
        covariance=cov,
        centered=centered,
        isotropic=iso,
        transform=transform,
    )


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_cloud_csv(path):
    """Read ``x1,...,xd[,weight]`` rows; the header line is optional.

    Malformed cells raise ``ValueError`` naming ``path:line:column``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows, header, width = [], None, None
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not v.strip() for v in row):
                continue
            if header is None and width is None and not all(_is_number(v) for v in row):
                header = [h.strip() for h in row]
                width = len(header)
                continue
            if width is None:
                width = len(row)
            if len(row) != width:
                raise ValueError(f"{path}:{lineno}:{min(len(row), width) + 1}: expected {width} columns, got {len(row)}")
            vals = []
            for col, v in enumerate(row, start=1):
                try:
                    vals.append(float(v))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}:{col}: not a number: {v.strip()!r}") from None
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    if header and header[-1] == "weight":
        return data[:, :-1], data[:, -1]
    return data, None


def make_measure(spec, center=True):
    """Build a :class:`Measure` from a JSON-style description.

    ``spec`` is a dict ``{"family", "dim", "params"}`` or a path to a JSON
    file holding one. Supported families: ``gaussian``, ``uniform_box``,
    ``exponential_centered``, ``quartic``, ``product``, ``empirical``.
    Non-centered analytic input is recentred and flagged ``auto_centered``
    unless ``center=False``.
    """
    if isinstance(spec, Measure):
        return spec
    if isinstance(spec, (str, Path)):
        with open(spec) as fh:
            spec = json.load(fh)
    family = spec.get("family")
    params = spec.get("params", {}) or {}
    dim = int(spec.get("dim", 1))
    if family == "empirical":
        if "csv" in params:
            pts, w = load_cloud_csv(params["csv"])
        else:
            pts, w = params.get("points"), params.get("weights")
        return empirical(pts, w)
    if family == "product":
        factors = []
        for sub in params.get("factors", []):
            m = make_measure(sub, center=False)
            factors.extend(m.factors)
        if not factors:
            raise ValueError("product needs at least one factor")
        return _analytic(factors, "product", center=center)
    if dim < 1:
        raise ValueError("dim must be positive")
    factor = _factor_from_spec(family, params)
    return _analytic([factor] * dim, family, center=center)


def standard_gaussian(dim=1):
    return make_measure({"family": "gaussian", "dim": dim, "params": {"variance": 1.0}})


def whiten(mu):
    """Affine image ``A (x - mean)`` with ``A = covariance^{-1/2}``.

    The applied ``A`` and shift are stored in ``result.transform``.
    """
    cov = mu.covariance
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 1e-14 * max(1.0, vals.max()):
        raise HyperplaneSupportError()
    A = (vecs / np.sqrt(vals)) @ vecs.T
    shift = mu.mean.copy()
    transform = {"matrix": A.tolist(), "shift": shift.tolist()}
    if mu.is_analytic:
        sd = np.sqrt(np.diag(cov))
        factors = [
            f.affine((f.loc - m) / s, f.scale / s) for f, m, s in zip(mu.factors, shift, sd)
        ]
        out = _analytic(factors, mu.family, center=False)
        return replace(out, transform=transform, _cache={})
    pts = (mu.points - shift) @ A.T
    if mu.counts is not None:
        w = None
        pts = np.repeat(pts, mu.counts, axis=0)
    else:
        w = mu.weights
    return empirical(pts, w, family=mu.family, transform=transform)


def sample(mu, count, seed, threads=1):
    """Draw ``count`` points; identical ``(mu, count, seed)`` give identical output."""
    count = int(count)
    if mu.kind == "empirical":
        if mu.counts is not None:
            r = _rng.integers(seed, count, mu.denominator)
            idx = np.searchsorted(np.cumsum(mu.counts), r, side="right")
        else:
            u = _rng.uniforms(seed, count, 1, threads=threads)[:, 0]
            cw = np.cumsum(mu.weights)
            idx = np.searchsorted(cw, u * cw[-1], side="right")
        return mu.points[np.minimum(idx, len(mu.points) - 1)]
    if not mu.factors:
        raise SamplingUnsupportedError()
    u = _rng.uniforms(seed, count, mu.dim, threads=threads)
    return np.stack([f.quantile(u[:, k]) for k, f in enumerate(mu.factors)], axis=1)


def moments(mu):
    """Mean vector and covariance matrix under the measure's quadrature."""
    mean, cov = np.asarray(mu.mean, dtype=float), np.asarray(mu.covariance, dtype=float)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise IntegrationError()
    return mean.copy(), cov.copy()
