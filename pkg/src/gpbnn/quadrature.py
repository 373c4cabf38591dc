"""Gauss-Hermite quadrature for the physicists' weight exp(-x^2).

Nodes of order S are the roots of the degree-S physicists' Hermite
polynomial; the weight attached to root z is
sqrt(pi) 2^(S-1) S! / (S^2 H_{S-1}(z)^2), summing to sqrt(pi).  A rule of
order S integrates polynomials of degree <= 2S-1 exactly against exp(-x^2).
Normalized weights (divided by sqrt(pi)) sum to one and turn the rule into
a deterministic sample of the standard Gaussian via z*sqrt(2).
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = ["GHRule", "gh_rule", "hermite_eval", "InvalidOrderError"]

MAX_ORDER = 64


class InvalidOrderError(ValueError):
    """Quadrature order outside the supported range [1, 64]."""


def hermite_eval(order: int, x):
    """Evaluate the physicists' Hermite polynomial H_order at x.

    Uses the recurrence H_{n+1}(x) = 2x H_n(x) - 2n H_{n-1}(x) with
    H_0 = 1, H_1 = 2x.  Accepts scalars or arrays.
    """
    if order < 0:
        raise InvalidOrderError(f"Hermite order must be >= 0, got {order}")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if order == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = 2.0 * x
    for n in range(1, order):
        h, h_prev = 2.0 * x * h - 2.0 * n * h_prev, h
    return h if h.ndim else float(h)


@dataclass(frozen=True)
class GHRule:
    """Nodes and weights of a Gauss-Hermite rule.

    Attributes
    ----------
    order : int
        Number of nodes S.
    nodes : ndarray, shape (S,)
        Roots of H_S, strictly increasing and symmetric about zero.
    weights : ndarray, shape (S,)
        Quadrature weights; positive, summing to sqrt(pi).
    normalized_weights : ndarray, shape (S,)
        weights / sqrt(pi); positive, summing to one.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray
    normalized_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if self.normalized_weights is None:
            object.__setattr__(self, "normalized_weights", weights / math.sqrt(math.pi))
        if nodes.shape != (self.order,) or weights.shape != (self.order,):
            raise ValueError("nodes/weights length must equal order")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if np.max(np.abs(nodes + nodes[::-1])) > 1e-12:
            raise ValueError("nodes must be symmetric about zero")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - math.sqrt(math.pi)) > 1e-10:
            raise ValueError("weights must sum to sqrt(pi)")


def _hermite_roots(order: int) -> np.ndarray:
    """Roots of H_order: Jacobi-matrix eigenvalues polished by Newton.

    The symmetric tridiagonal Jacobi matrix of the orthonormal recurrence
    has zero diagonal and off-diagonals sqrt(n/2); its eigenvalues are the
    Gauss-Hermite nodes (Golub-Welsch).  Two Newton steps on the recurrence,
    using H'_S = 2 S H_{S-1}, tighten them to ~1e-15.
    """
    if order == 1:
        return np.zeros(1)
    off_diag = np.sqrt(np.arange(1, order) / 2.0)
    roots = eigh_tridiagonal(np.zeros(order), off_diag, eigvals_only=True)
    for _ in range(2):
        h = hermite_eval(order, roots)
        dh = 2.0 * order * hermite_eval(order - 1, roots)
        roots = roots - h / dh
    # enforce exact antisymmetry so paired realisations cancel bitwise
    roots = 0.5 * (roots - roots[::-1])
    if order % 2 == 1:
        roots[order // 2] = 0.0
    return roots


@lru_cache(maxsize=None)
def gh_rule(order: int) -> GHRule:
    """Build the Gauss-Hermite rule of the given order.

    Raises InvalidOrderError unless 1 <= order <= 64.  Results are cached;
    GHRule is immutable so the cache is safe to share across threads.
    """
    if not 1 <= order <= MAX_ORDER:
        raise InvalidOrderError(
            f"Gauss-Hermite order must be in [1, {MAX_ORDER}], got {order}"
        )
    nodes = _hermite_roots(order)
    h_below = hermite_eval(order - 1, nodes)
    weights = (
        math.sqrt(math.pi)
        * 2.0 ** (order - 1)
        * math.factorial(order)
        / (order**2 * np.asarray(h_below) ** 2)
    )
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    # symmetrize: equal nodes mirrored about zero carry equal weight
    weights = 0.5 * (weights + weights[::-1])
    return GHRule(order=order, nodes=nodes, weights=weights)
