"""Periodic uniform B-spline spaces in one dimension.

A periodic space of degree ``p`` over ``m`` uniform elements of width
``h = L / m`` has exactly ``m`` basis functions.  Basis function ``i`` is
supported on ``[i h, (i + p + 1) h)`` (indices taken modulo ``m``), so the
element ``e = floor(x / h)`` sees the functions ``e - p, ..., e``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

MAX_GAUSS_POINTS = 10


@dataclass(frozen=True)
class SplineSpace:
    """Periodic B-spline space on ``[0, length)``.

    Attributes
    ----------
    degree : int
        Polynomial degree ``p``; the basis is ``C^(p-1)``.
    num_elements : int
        Number of uniform knot spans ``m``.  Equals the number of basis
        functions.
    length : float
        Period of the domain.
    """

    degree: int
    num_elements: int
    length: float

    @property
    def h(self) -> float:
        return self.length / self.num_elements

    @property
    def n_dof(self) -> int:
        return self.num_elements

    def knots(self) -> np.ndarray:
        """Element boundaries ``0, h, ..., L``."""
        return np.linspace(0.0, self.length, self.num_elements + 1)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def build_periodic_space(p: int, m: int, L: float) -> SplineSpace:
    """Create a periodic space of degree ``p`` on ``m`` elements of ``[0, L)``."""
    if int(p) != p or p < 1:
        raise ValueError(f"degree must be an integer >= 1, got {p}")
    if int(m) != m or m <= p:
        raise ValueError(
            f"periodic space needs more elements than the degree (m={m}, p={p})"
        )
    if not (L > 0 and math.isfinite(L)):
        raise ValueError(f"length must be positive and finite, got {L}")
    return SplineSpace(int(p), int(m), float(L))


def _ders_basis_funs(p: int, u: float, knots: np.ndarray, n: int) -> np.ndarray:
    # Cox-de Boor recursion with derivatives; ``knots`` are the 2p+2 knots
    # local to the span [knots[p], knots[p+1]).
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - knots[p + 1 - j]
        right[j] = knots[p + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((n + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, n + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


def eval_basis(
    space: SplineSpace, x: float, max_deriv: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the ``p + 1`` basis functions that are nonzero at ``x``.

    Points outside ``[0, L)`` are wrapped periodically.

    Returns
    -------
    indices : ndarray of int, shape (p + 1,)
        Global basis indices, wrapped modulo ``m``.
    values : ndarray, shape (max_deriv + 1, p + 1)
        ``values[k, j]`` is the ``k``-th derivative of basis ``indices[j]``.
    """
    p, m, h = space.degree, space.num_elements, space.h
    if int(max_deriv) != max_deriv or not 0 <= max_deriv <= p:
        raise ValueError(f"max_deriv must lie in [0, {p}], got {max_deriv}")
    x = float(x) % space.length
    e = min(int(x // h), m - 1)
    # local coordinate relative to a reference knot grid keeps the recursion
    # independent of the element's position
    u = x - e * h
    knots = (np.arange(2 * p + 2) - p) * h
    values = _ders_basis_funs(p, u, knots, int(max_deriv))
    indices = (np.arange(e - p, e + 1)) % m
    return indices, values


def gauss_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``n`` points on ``[-1, 1]``."""
    if int(n) != n or not 1 <= n <= MAX_GAUSS_POINTS:
        raise ValueError(f"Gauss rule size must lie in [1, {MAX_GAUSS_POINTS}], got {n}")
    points, weights = np.polynomial.legendre.leggauss(int(n))
    return QuadratureRule(points, weights)


@lru_cache(maxsize=64)
def element_tables(space: SplineSpace, nq: int, max_deriv: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Basis values on one element at the ``nq`` Gauss points.

    All elements of a uniform periodic space are translates of each other,
    so a single table serves every element.

    Returns
    -------
    offsets : ndarray, shape (nq,)
        Quadrature point positions relative to the element start.
    weights : ndarray, shape (nq,)
        Physical quadrature weights (scaled by ``h / 2``).
    values : ndarray, shape (max_deriv + 1, nq, p + 1)
        Derivatives of the local basis functions ``e - p, ..., e``.
    """
    rule = gauss_rule(nq)
    h = space.h
    offsets = 0.5 * h * (rule.points + 1.0)
    values = np.empty((max_deriv + 1, nq, space.degree + 1))
    for q, off in enumerate(offsets):
        _, values[:, q, :] = eval_basis(space, off, max_deriv)
    for arr in (offsets, values):
        arr.setflags(write=False)
    weights = 0.5 * h * rule.weights
    weights.setflags(write=False)
    return offsets, weights, values


def quadrature_points(space: SplineSpace, nq: int) -> np.ndarray:
    """All quadrature point coordinates, element by element."""
    offsets, _, _ = element_tables(space, nq, 0)
    starts = np.arange(space.num_elements) * space.h
    return (starts[:, None] + offsets[None, :]).ravel()


def quadrature_weights(space: SplineSpace, nq: int) -> np.ndarray:
    _, weights, _ = element_tables(space, nq, 0)
    return np.tile(weights, space.num_elements)


def collocation_matrix(space: SplineSpace, nq: int, deriv: int = 0) -> sp.csr_matrix:
    """Sparse ``(m * nq, m)`` matrix of basis derivatives at quadrature points."""
    p, m = space.degree, space.num_elements
    _, _, values = element_tables(space, nq, max(deriv, 0))
    local = values[deriv]  # (nq, p + 1)
    rows = np.repeat(np.arange(m * nq), p + 1)
    elem = np.arange(m)[:, None, None]
    cols = (elem + np.arange(-p, 1)[None, None, :]) % m
    cols = np.broadcast_to(cols, (m, nq, p + 1)).ravel()
    data = np.broadcast_to(local, (m, nq, p + 1)).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(m * nq, m))


def sample_matrix(space: SplineSpace, x: np.ndarray, deriv: int = 0) -> sp.csr_matrix:
    """Sparse matrix mapping coefficients to (derivative) values at points ``x``."""
    p, m = space.degree, space.num_elements
    x = np.asarray(x, dtype=float).ravel()
    rows = np.repeat(np.arange(len(x)), p + 1)
    cols = np.empty((len(x), p + 1), dtype=np.int64)
    data = np.empty((len(x), p + 1))
    for i, xi in enumerate(x):
        idx, vals = eval_basis(space, xi, deriv)
        cols[i] = idx
        data[i] = vals[deriv]
    return sp.csr_matrix((data.ravel(), (rows, cols.ravel())), shape=(len(x), m))
