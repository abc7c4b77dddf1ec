"""Stein kernels: from moment maps, the explicit 1D formula, sums, and transported references.

A Stein kernel for ``mu`` relative to ``e^{-V}`` is a matrix field ``tau`` with
``int grad V . f dmu = int <tau, grad f>_HS dmu`` for smooth ``f``; the
Gaussian reference is ``V = |x|^2 / 2``.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import KernelInvariantError, NotCenteredError, OutsideRangeError, SingularHessianError
from .measures import CENTER_TOL, Measure, PushforwardFactor, from_factors, make_measure
from .quadrature import gauss_legendre

SYM_TOL = 1e-10
PSD_TOL = 1e-10


def _pts(y, dim):
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        return y.reshape(1, 1)
    if y.ndim == 1:
        return y[:, None] if dim == 1 else y.reshape(-1, dim)
    return y


@dataclass(frozen=True)
class SteinKernelField:
    """A matrix-valued field ``y -> tau(y)`` of shape ``(M, d, d)``.

    Attributes
    ----------
    evaluator : callable
        Maps ``(M, d)`` points to ``(M, d, d)`` matrices.
    source : str
        One of ``moment_map``, ``explicit_1d``, ``transported``, ``constant``.
    reference : dict
        ``{"name": "gaussian"}`` or ``{"name": "potential", "grad": callable}``.
    """

    evaluator: object
    source: str
    dim: int
    reference: dict = field(default_factory=lambda: {"name": "gaussian"})
    check: bool = True

    def __call__(self, y):
        y = _pts(y, self.dim)
        tau = np.asarray(self.evaluator(y), dtype=float)
        if self.check and tau.size:
            sym = np.max(np.abs(tau - np.swapaxes(tau, 1, 2)))
            if sym > SYM_TOL * max(1.0, float(np.max(np.abs(tau)))):
                raise KernelInvariantError("symmetric", float(sym))
            lam = np.linalg.eigvalsh(0.5 * (tau + np.swapaxes(tau, 1, 2)))[:, 0]
            if np.min(lam) < -PSD_TOL:
                raise KernelInvariantError("positive semidefinite", float(np.min(lam)))
        return tau

    def reference_grad(self, y):
        grad = self.reference.get("grad")
        return y if grad is None else grad(y)

    def __add__(self, c):
        """``tau + c Id``; used to build deliberately wrong kernels."""
        ev, d = self.evaluator, self.dim
        return SteinKernelField(lambda y: ev(y) + c * np.eye(d), self.source, d, self.reference, check=False)

    def to_csv(self, points, path):
        y = _pts(points, self.dim)
        tau = self(y)
        d = self.dim
        header = [f"y{i + 1}" for i in range(d)] + [f"t{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row, t in zip(y, tau):
                w.writerow([f"{v:.17g}" for v in row] + [f"{v:.17g}" for v in t.ravel()])


def constant_kernel(matrix, reference=None):
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = A.shape[0]
    return SteinKernelField(lambda y: np.broadcast_to(A, (len(y), d, d)).copy(), "constant", d,
                            reference or {"name": "gaussian"})


def identity_kernel(dim=1, reference=None):
    return constant_kernel(np.eye(dim), reference)


def kernel_from_moment_map(phi):
    """``tau(y) = Hess phi(grad phi*(y))``, evaluated through the Legendre transform."""

    def evaluate(y):
        _, x = phi.legendre(y)
        return phi.hessian(x)

    return SteinKernelField(evaluate, "moment_map", phi.dim)


def _far_end(f, y0, side, nats=80.0):
    """Point beyond ``y0`` where the log-density of ``f`` has dropped ``nats`` below its value at the mode side."""
    lo, hi = f.lo, f.hi
    end = hi if side > 0 else lo
    if np.isfinite(end):
        return end
    t_lo, t_hi = f.truncation()
    start = t_hi if side > 0 else t_lo
    ref = float(np.max(f.logpdf(np.linspace(t_lo, t_hi, 257))))
    step = max(1.0, abs(start - y0))
    x = start
    for _ in range(200):
        if f.logpdf(np.array([x]))[0] < ref - nats:
            return x
        x += side * step
        step *= 1.5
    return x


def kernel_1d_explicit(mu, panels=64, order=20):
    """``tau(y) = rho(y)^{-1} int_y^inf s rho(s) ds`` for a centered 1D measure.

    For ``y < 0`` the equivalent lower-tail form ``-rho(y)^{-1} int_{-inf}^y s rho(s) ds``
    is used (the two agree because ``mu`` is centered); both are integrated
    with composite Gauss-Legendre on log-density ratios to avoid underflow.
    At a finite right endpoint ``tau = 0``.
    """
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    if mu.dim != 1 or mu.kind != "analytic":
        raise ValueError("explicit kernel needs a one-dimensional analytic measure")
    f = mu.factors[0]
    if abs(f.mean) > CENTER_TOL * max(1.0, math.sqrt(f.var)):
        raise NotCenteredError()
    # a pushforward T(X) is integrated in the base variable: s = T(x), rho(s) ds = rho_X(x) dx
    if isinstance(f, PushforwardFactor):
        base, T = f.base, f.T
        to_base = f.T_inv

        def log_ratio(x, yb):
            return base.logpdf(x) - (base.logpdf(yb) - np.log(f.dT(yb)))[:, None]
    else:
        base, T = f, (lambda t: t)
        to_base = (lambda t: t)

        def log_ratio(x, yb):
            return f.logpdf(x) - f.logpdf(yb)[:, None]

    right = _far_end(base, 0.0, +1)
    left = _far_end(base, 0.0, -1)

    def evaluate(y):
        y = y[:, 0]
        if not np.all((y > f.lo) & (y < f.hi) | (y == f.hi)):
            raise OutsideRangeError()
        out = np.zeros_like(y)
        up = y >= 0
        if up.any():
            yb = to_base(y[up])
            s, w = gauss_legendre(yb, np.maximum(np.full_like(yb, right), yb), panels, order)
            out[up] = np.sum(w * T(s) * np.exp(log_ratio(s, yb)), axis=1)
        dn = ~up
        if dn.any():
            yb = to_base(y[dn])
            s, w = gauss_legendre(np.full_like(yb, left), yb, panels, order)
            out[dn] = -np.sum(w * T(s) * np.exp(log_ratio(s, yb)), axis=1)
        out[y == f.hi] = 0.0
        return out[:, None, None]

    return SteinKernelField(evaluate, "explicit_1d", 1)


# ---------------------------------------------------------------------------
# test families
# ---------------------------------------------------------------------------

_SCALAR_TESTS = [
    ("x", lambda t: t, lambda t: np.ones_like(t)),
    ("x^2", lambda t: t**2, lambda t: 2 * t),
    ("x^3", lambda t: t**3, lambda t: 3 * t**2),
    ("x^4", lambda t: t**4, lambda t: 4 * t**3),
] + [
    item
    for k in (1, 2, 3)
    for item in (
        (f"sin{k}x", lambda t, k=k: np.sin(k * t), lambda t, k=k: k * np.cos(k * t)),
        (f"cos{k}x", lambda t, k=k: np.cos(k * t), lambda t, k=k: -k * np.sin(k * t)),
    )
]


@dataclass(frozen=True)
class VectorTest:
    """Vector field ``f`` with Jacobian ``J[a, b] = d f_a / d y_b``."""

    name: str
    value: object
    jacobian: object


def vector_test_family(dim, version="v1"):
    """Fields ``m(y_i) e_j`` for monomials up to degree 4 and sin/cos with frequency 1..3."""
    if version != "v1":
        raise ValueError(f"unknown test family {version!r}")
    out = []
    for i in range(dim):
        for j in range(dim):
            for name, m, dm in _SCALAR_TESTS:
                def value(y, i=i, j=j, m=m):
                    v = np.zeros_like(y)
                    v[:, j] = m(y[:, i])
                    return v

                def jac(y, i=i, j=j, dm=dm):
                    J = np.zeros(y.shape + (y.shape[1],))
                    J[:, j, i] = dm(y[:, i])
                    return J

                out.append(VectorTest(f"{name}[y{i + 1}]e{j + 1}", value, jac))
    return out


def _tests(tests, dim):
    if tests is None or isinstance(tests, str):
        return vector_test_family(dim, tests or "v1")
    return list(tests)


@dataclass
class ResidualResult:
    residuals: dict
    lhs: dict
    rhs: dict

    @property
    def max(self):
        return max(self.residuals.values())


def stein_identity_residual(tau, mu, tests=None, quadrature=None):
    """``|int grad V . f dmu - int <tau, grad f> dmu|`` per test field.

    ``grad V`` comes from the kernel's reference (identity for the Gaussian).
    """
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    rule = quadrature or mu.quadrature()
    y = rule.points
    T = tau(y)
    gV = tau.reference_grad(y)
    res, lhs, rhs = {}, {}, {}
    for t in _tests(tests, mu.dim):
        a = float(rule.expect(np.sum(gV * t.value(y), axis=1)))
        b = float(rule.expect(np.einsum("mab,mab->m", T, t.jacobian(y))))
        lhs[t.name], rhs[t.name], res[t.name] = a, b, abs(a - b)
    return ResidualResult(res, lhs, rhs)


@dataclass
class ZScoreResult:
    zscores: dict
    differences: dict
    standard_errors: dict

    @property
    def max_abs(self):
        return max(abs(z) for z in self.zscores.values())


def sum_kernel_residual(tau, mu, n, tests=None, count=100_000, seed=0, chunk=1 << 16):
    """Monte Carlo check of the kernel of ``n^{-1/2} sum X_i`` through the tower property.

    Compares ``E[S . f(S)]`` with ``E[(1/n) sum_i <tau(X_i), grad f(S)>]``
    on paired samples and reports each mean difference as a z-score.
    """
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    d = mu.dim
    tests = _tests(tests, d)
    X = mu.sample(count * n, seed).reshape(count, n, d)
    S = X.sum(axis=1) / math.sqrt(n)
    tau_mean = np.zeros((count, d, d))
    flat = X.reshape(-1, d)
    for start in range(0, len(flat), chunk):
        block = tau(flat[start:start + chunk])
        idx = np.arange(start, start + len(block)) // n
        np.add.at(tau_mean, idx, block)
    tau_mean /= n
    z, diffs, ses = {}, {}, {}
    for t in tests:
        D = np.sum(S * t.value(S), axis=1) - np.einsum("mab,mab->m", tau_mean, t.jacobian(S))
        mean = float(D.mean())
        se = float(D.std(ddof=1) / math.sqrt(count))
        diffs[t.name], ses[t.name] = mean, se
        z[t.name] = mean / se if se > 0 else (0.0 if mean == 0 else math.copysign(np.inf, mean))
    return ZScoreResult(z, diffs, ses)


# ---------------------------------------------------------------------------
# transported kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Potential1D:
    """Convex ``V`` on R with first and second derivatives and the inverse of ``V'``."""

    value: object
    grad: object
    hess: object
    grad_inv: object = None
    name: str = "V"


def pushforward_by_gradient(mu, V):
    """``mu_V = (V')_# mu`` for a 1D analytic ``mu``."""
    mu = make_measure(mu) if not isinstance(mu, Measure) else mu
    if mu.dim != 1:
        raise ValueError("transport pipeline is one-dimensional (apply per coordinate for products)")
    inv = V.grad_inv or _invert_monotone(V.grad, V.hess)
    factor = PushforwardFactor(mu.factors[0], V.grad, V.hess, inv, name=f"{mu.family}_pushed_by_{V.name}")
    return from_factors([factor], factor.family, center=False)


def _invert_monotone(g, dg):
    """Vectorized inverse of an increasing ``g`` by bracketed Newton steps."""

    def inv(y):
        y = np.asarray(y, dtype=float)
        shape = y.shape
        y = y.ravel()
        lo, hi = np.full_like(y, -1.0), np.full_like(y, 1.0)
        for _ in range(1100):
            move = g(lo) > y
            if not move.any():
                break
            lo[move] *= 2
        for _ in range(1100):
            move = g(hi) < y
            if not move.any():
                break
            hi[move] *= 2
        x = 0.5 * (lo + hi)
        for _ in range(200):
            r = g(x) - y
            hi = np.where(r > 0, x, hi)
            lo = np.where(r < 0, x, lo)
            nxt = x - r / dg(x)
            bad = ~((nxt > lo) & (nxt < hi))
            nxt = np.where(bad, 0.5 * (lo + hi), nxt)
            if np.all(np.abs(nxt - x) <= 1e-15 * (1 + np.abs(x))):
                x = nxt
                break
            x = nxt
        return x.reshape(shape)

    return inv


def transported_kernel(tau_tilde, V, mu=None, method="explicit"):
    """Kernel of ``mu`` relative to ``e^{-V}``: ``tau(x) = tau_tilde(V'(x)) / V''(x)``.

    ``tau_tilde`` is a Gaussian-reference kernel of ``mu_V = (V')_# mu``. When
    it is ``None`` it is built from ``mu``: ``method="explicit"`` applies the
    1D tail formula to ``mu_V``; ``method="moment_map"`` solves for the moment
    map of ``mu_V`` and uses its Hessian kernel.
    """
    if tau_tilde is None:
        if mu is None:
            raise ValueError("need mu to build the kernel of the pushforward")
        mu_v = pushforward_by_gradient(mu, V)
        if method == "moment_map":
            from .moment_map import solve_1d

            tau_tilde = kernel_from_moment_map(solve_1d(mu_v))
        else:
            tau_tilde = kernel_1d_explicit(mu_v)

    def evaluate(x):
        h = np.asarray(V.hess(x[:, 0]), dtype=float) * np.ones(len(x))
        if np.any(~(h > 0)):
            raise SingularHessianError()
        y = np.asarray(V.grad(x[:, 0]), dtype=float)
        return tau_tilde(y[:, None]) / h[:, None, None]

    return SteinKernelField(evaluate, "transported", 1, {"name": "potential", "grad": lambda x: V.grad(x)})


# ---------------------------------------------------------------------------
# operator norm
# ---------------------------------------------------------------------------


@dataclass
class OperatorNormProfile:
    norms: np.ndarray
    max: float
    bound: float | None
    within_bound: bool | None


def operator_norm_profile(tau, points, epsilon=None, tol=1e-3):
    """Largest eigenvalue of ``tau`` per point; checks ``<= 1/epsilon + tol`` when ``epsilon`` is given."""
    T = tau(points)
    norms = np.linalg.eigvalsh(0.5 * (T + np.swapaxes(T, 1, 2)))[:, -1]
    mx = float(norms.max())
    bound = None if epsilon is None else 1.0 / epsilon
    ok = None if bound is None else bool(mx <= bound + tol)
    return OperatorNormProfile(norms, mx, bound, ok)
