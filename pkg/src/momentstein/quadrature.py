"""Composite Gauss-Legendre rules and their tensor products."""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _leggauss(order):
    return np.polynomial.legendre.leggauss(order)


def gauss_legendre(a, b, panels=128, order=20):
    """Nodes and weights of a composite Gauss-Legendre rule on ``[a, b]``.

    Parameters
    ----------
    a, b : float or array_like
        Interval endpoints. Arrays of equal shape give one rule per interval,
        returned with the panel/node axis last.
    panels : int
        Number of equal-width panels.
    order : int
        Gauss points per panel.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t, w = _leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    left, right = edges[:-1], edges[1:]
    u = (0.5 * (right - left)[:, None] * (t[None, :] + 1.0) + left[:, None]).ravel()
    wu = (0.5 * (right - left)[:, None] * w[None, :]).ravel()
    span = (b - a)[..., None]
    return a[..., None] + span * u, span * wu


def tensor_rule(rules):
    """Tensor product of 1D ``(nodes, weights)`` rules."""
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return pts, w


@dataclass(frozen=True)
class QuadratureRule:
    """Points with weights such that ``sum(w * f(x))`` approximates ``E_mu[f]``.

    ``lebesgue_weights`` is set for deterministic grid rules; it integrates
    against Lebesgue measure on the truncated support.
    """

    points: np.ndarray
    weights: np.ndarray
    descriptor: dict = field(default_factory=dict)
    lebesgue_weights: np.ndarray | None = None

    def expect(self, values):
        values = np.asarray(values)
        out = np.tensordot(self.weights, values, axes=(0, 0))
        if not np.all(np.isfinite(out)):
            from .errors import IntegrationError

            raise IntegrationError()
        return out
