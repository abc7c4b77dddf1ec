"""Numerical checks of variance inequalities built on Stein kernels.

Every check integrates both sides of its inequality on one quadrature rule,
so equality cases cancel to rounding instead of to the mismatch of two grids.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import SingularHessianError, UnsupportedKernelError
from .measures import Measure, PotentialFactor, from_factors, make_measure
from .stein import Potential1D, _SCALAR_TESTS

DEFAULT_TOL = 1e-8


class Side(NamedTuple):
    lhs: float
    rhs: float
    margin: float


@dataclass
class InequalityReport:
    """Per-test sides of ``lhs <= rhs`` with ``margin = rhs - lhs``."""

    name: str
    tests: dict
    descriptor: dict
    quadrature: dict
    tol: float = DEFAULT_TOL
    extra: dict = field(default_factory=dict)

    @property
    def worst_margin(self):
        return min(s.margin for s in self.tests.values())

    @property
    def worst_test(self):
        return min(self.tests, key=lambda k: self.tests[k].margin)

    @property
    def passed(self):
        return self.worst_margin >= -self.tol

    def to_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "worst_test": self.worst_test,
            "tol": self.tol,
            "tests": {k: s._asdict() for k, s in self.tests.items()},
            "descriptor": self.descriptor,
            "quadrature": self.quadrature,
            **self.extra,
        }


@dataclass(frozen=True)
class ScalarTest:
    """Scalar ``f`` on R^d with its gradient, both vectorized over rows."""

    name: str
    value: object
    gradient: object


def scalar_test_family(dim, version="v1"):
    """Monomials to degree 4 and sin/cos to frequency 3 in each coordinate.

    For ``dim >= 2`` the products ``y_i y_j`` and the diagonal ``(y_1 + ... + y_d)``
    are added so that the weight is exercised off its diagonal.
    """
    if version != "v1":
        raise ValueError(f"unknown test family {version!r}")
    out = []
    for i in range(dim):
        for name, m, dm in _SCALAR_TESTS:
            def value(y, i=i, m=m):
                return m(y[:, i])

            def grad(y, i=i, dm=dm):
                g = np.zeros_like(y)
                g[:, i] = dm(y[:, i])
                return g

            out.append(ScalarTest(f"{name}[y{i + 1}]", value, grad))
    if dim >= 2:
        for i in range(dim):
            for j in range(i + 1, dim):
                def value(y, i=i, j=j):
                    return y[:, i] * y[:, j]

                def grad(y, i=i, j=j):
                    g = np.zeros_like(y)
                    g[:, i] = y[:, j]
                    g[:, j] = y[:, i]
                    return g

                out.append(ScalarTest(f"y{i + 1}*y{j + 1}", value, grad))
        out.append(ScalarTest("sum", lambda y: y.sum(axis=1), lambda y: np.ones_like(y)))
    return out


def _tests(tests, dim):
    if tests is None or isinstance(tests, str):
        return scalar_test_family(dim, tests or "v1")
    return [t if isinstance(t, ScalarTest) else ScalarTest(*t) for t in tests]


def _measure(mu):
    return mu if isinstance(mu, Measure) else make_measure(mu)


def _weighted_sides(rule, tests, weight):
    """Variance and weighted energy for each test; ``weight`` is ``(m, d, d)``."""
    y = rule.points
    out = {}
    for t in tests:
        f = t.value(y)
        mean = rule.expect(f)
        var = float(rule.expect((f - mean) ** 2))
        g = t.gradient(y)
        energy = float(rule.expect(np.einsum("ma,mab,mb->m", g, weight, g)))
        out[t.name] = Side(var, energy, energy - var)
    return out


def _require_moment_map(tau):
    if getattr(tau, "source", None) != "moment_map":
        raise UnsupportedKernelError(
            f"unsupported kernel source {getattr(tau, 'source', None)!r}: "
            "the weighted inequality is only established for moment-map kernels"
        )


def weighted_poincare_check(tau, mu, tests=None, quadrature=None, tol=DEFAULT_TOL):
    """Check ``Var_mu(f) <= int <tau grad f, grad f> dmu`` on a test family.

    Parameters
    ----------
    tau : SteinKernelField
        Must come from :func:`kernel_from_moment_map`.
    mu : Measure or dict
        Target measure; its quadrature rule carries both integrals.
    tests : list of ScalarTest, optional
        Defaults to :func:`scalar_test_family`.
    tol : float
        A report passes when every margin is at least ``-tol``.
    """
    _require_moment_map(tau)
    mu = _measure(mu)
    rule = quadrature or mu.quadrature()
    family = tests if isinstance(tests, str) else ("v1" if tests is None else "custom")
    tests = _tests(tests, mu.dim)
    sides = _weighted_sides(rule, tests, tau(rule.points))
    return InequalityReport(
        "weighted_poincare", sides, {"family": family, "count": len(tests)},
        dict(rule.descriptor), tol,
    )


def _potentials(V):
    if isinstance(V, Potential1D):
        return [V]
    return list(V)


def _check_hessian_floor(p, nodes, h):
    """Refine the smallest nodal ``V''`` between neighbours; quadrature nodes can straddle a zero."""
    from scipy.optimize import minimize_scalar

    order = np.argsort(nodes)
    x, hv = nodes[order], h[order]
    i = int(np.argmin(hv))
    a, b = x[max(i - 1, 0)], x[min(i + 1, len(x) - 1)]
    if b > a:
        res = minimize_scalar(lambda t: float(np.asarray(p.hess(np.array([t])), dtype=float).ravel()[0]),
                              bounds=(a, b), method="bounded", options={"xatol": 1e-12 * (1 + abs(a) + abs(b))})
        if res.fun <= 1e-10 * float(np.max(hv)):
            raise SingularHessianError(f"Hess V is singular near {res.x:.6g}")


def brascamp_lieb_check(V, tests=None, panels=128, order=20, tol=DEFAULT_TOL):
    """Check ``Var_nu(f) <= int <(Hess V)^{-1} grad f, grad f> dnu`` for ``nu ~ e^{-V}``.

    ``V`` is a :class:`Potential1D` or a sequence of them, read as the
    separable potential ``sum_i V_i(x_i)``. The measure is normalized
    numerically on the region where ``V`` stays within 46 nats of its minimum.
    """
    pots = _potentials(V)
    factors = [PotentialFactor(p.value, p.grad, p.hess, name=p.name) for p in pots]
    nu = from_factors(factors, "potential", center=False)
    rule = nu.quadrature(panels=panels, order=order)
    y = rule.points
    h = np.stack([np.asarray(p.hess(y[:, k]), dtype=float) * np.ones(len(y)) for k, p in enumerate(pots)], axis=1)
    bad = ~np.isfinite(h) | (h <= 0)
    if np.any(bad):
        k = int(np.argmax(bad.any(axis=1)))
        raise SingularHessianError(f"Hess V is singular at {y[k].tolist()}")
    for k, p in enumerate(pots):
        _check_hessian_floor(p, y[:, k], h[:, k])
    weight = np.zeros((len(y), nu.dim, nu.dim))
    idx = np.arange(nu.dim)
    weight[:, idx, idx] = 1.0 / h
    tests = _tests(tests, nu.dim)
    sides = _weighted_sides(rule, tests, weight)
    return InequalityReport(
        "brascamp_lieb", sides, {"potential": [p.name for p in pots], "count": len(tests)},
        dict(rule.descriptor), tol,
    )


class KlartagResult(NamedTuple):
    lhs: float
    rhs: float
    passed: bool


def klartag_moment_check(tau, mu, p, theta=None, quadrature=None):
    """Compare ``int |<tau theta, theta>|^p dmu`` with ``8^p p^(2p) (theta^T Cov theta)^p``.

    Parameters
    ----------
    tau : SteinKernelField
        Moment-map kernel of ``mu``.
    mu : Measure
        Must be flagged log-concave.
    p : int
        Moment order, at least 1.
    theta : array_like, optional
        Direction, normalized internally; defaults to the first basis vector.
    """
    if int(p) != p or p < 1:
        raise ValueError(f"moment order must be an integer >= 1, got {p}")
    p = int(p)
    _require_moment_map(tau)
    mu = _measure(mu)
    if not mu.log_concave:
        raise ValueError("moment estimate requires a log-concave measure")
    if theta is None:
        theta = np.eye(mu.dim)[0]
    theta = np.asarray(theta, dtype=float).reshape(mu.dim)
    theta = theta / np.linalg.norm(theta)
    rule = quadrature or mu.quadrature()
    q = np.einsum("a,mab,b->m", theta, tau(rule.points), theta)
    lhs = float(rule.expect(np.abs(q) ** p))
    var = float(theta @ mu.covariance @ theta)
    rhs = 8.0**p * float(p) ** (2 * p) * var**p
    return KlartagResult(lhs, rhs, bool(lhs <= rhs))


def run_suite(tau, mu, suite="all", p_values=(1, 2, 3), directions=16, seed=0, tol=DEFAULT_TOL):
    """Run the weighted-Poincare and moment checks for one kernel.

    Moment checks use the basis directions plus ``directions`` random unit
    vectors drawn from ``seed``; they are skipped for measures that are not
    log-concave.
    """
    from . import _rng

    mu = _measure(mu)
    out = {}
    if suite in ("all", "poincare"):
        out["weighted_poincare"] = weighted_poincare_check(tau, mu, tol=tol).to_dict()
    if suite in ("all", "klartag") and mu.log_concave:
        dirs = list(np.eye(mu.dim))
        if mu.dim > 1 and directions:
            dirs += list(_rng.normals(seed, directions, mu.dim))
        rows = []
        for th in dirs:
            for p in p_values:
                r = klartag_moment_check(tau, mu, p, th)
                rows.append({"p": p, "theta": (th / np.linalg.norm(th)).tolist(), **r._asdict()})
        out["klartag"] = {"passed": all(r["passed"] for r in rows), "checks": rows}
    if not out:
        raise ValueError(f"unknown suite {suite!r}")
    out["passed"] = all(v["passed"] for v in out.values())
    return out

