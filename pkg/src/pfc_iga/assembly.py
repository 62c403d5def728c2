"""Galerkin operators on periodic tensor-product B-spline spaces.

Global degrees of freedom are numbered in C order over the per-direction
indices, so the tensor operators are Kronecker products of the 1D ones::

    M = M1 (x) M2 (x) M3
    K = K1 (x) M2 (x) M3 + M1 (x) K2 (x) M3 + M1 (x) M2 (x) K3
    A = sum_d A_d (x) prod M  +  2 sum_{d<e} K_d (x) K_e (x) prod M

All 1D operators on a uniform periodic grid are circulant, which makes the
tensor operators diagonal in the discrete Fourier basis.  :class:`FourierSymbols`
exposes that diagonalisation for fast matrix-free application.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .bspline import (
    SplineSpace,
    build_periodic_space,
    collocation_matrix,
    element_tables,
    quadrature_points,
    quadrature_weights,
    sample_matrix,
)


@dataclass(frozen=True, eq=False)
class TensorSpace:
    """Tensor product of periodic spline spaces.

    ``nq`` is the number of Gauss points per element and direction; it
    defaults to ``p + 1`` of the highest-degree direction and is shared by
    every operator, load vector and energy evaluation built on this space.
    """

    spaces: tuple[SplineSpace, ...]
    nq: int = 0

    def __post_init__(self):
        if not 1 <= len(self.spaces) <= 3:
            raise ValueError(f"dimension must be 1, 2 or 3, got {len(self.spaces)}")
        if self.nq == 0:
            object.__setattr__(self, "nq", max(s.degree for s in self.spaces) + 1)

    @property
    def dim(self) -> int:
        return len(self.spaces)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(s.num_elements for s in self.spaces)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(s.length for s in self.spaces)

    @property
    def degree(self) -> int:
        return min(s.degree for s in self.spaces)

    @property
    def n_dof(self) -> int:
        return int(np.prod(self.shape))

    n_el = n_dof

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def global_index(self, multi_index: Sequence[int]) -> int:
        wrapped = [int(i) % m for i, m in zip(multi_index, self.shape)]
        return int(np.ravel_multi_index(wrapped, self.shape))

    def element_dofs(self, element: Sequence[int]) -> np.ndarray:
        """Global indices of the ``(p+1)^d`` functions supported on an element."""
        per_dir = [
            (int(e) + np.arange(-s.degree, 1)) % s.num_elements
            for e, s in zip(element, self.spaces)
        ]
        grids = np.meshgrid(*per_dir, indexing="ij")
        return np.ravel_multi_index(tuple(g.ravel() for g in grids), self.shape)

    # -- quadrature machinery -------------------------------------------------

    @cached_property
    def _collocation(self) -> dict[tuple[int, int], sp.csr_matrix]:
        return {}

    def collocation(self, axis: int, deriv: int) -> sp.csr_matrix:
        key = (axis, deriv)
        if key not in self._collocation:
            self._collocation[key] = collocation_matrix(self.spaces[axis], self.nq, deriv)
        return self._collocation[key]

    @cached_property
    def quad_shape(self) -> tuple[int, ...]:
        return tuple(m * self.nq for m in self.shape)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Tensor quadrature weights, shape ``quad_shape``."""
        w1 = [quadrature_weights(s, self.nq) for s in self.spaces]
        return reduce(np.multiply.outer, w1)

    def quad_coordinates(self) -> list[np.ndarray]:
        x1 = [quadrature_points(s, self.nq) for s in self.spaces]
        return np.meshgrid(*x1, indexing="ij")

    def to_quadrature(self, coeffs: np.ndarray, derivs: Sequence[int] | None = None) -> np.ndarray:
        """Evaluate a field (or a partial derivative) at every quadrature point."""
        derivs = derivs or (0,) * self.dim
        mats = [self.collocation(a, d) for a, d in enumerate(derivs)]
        return _apply_per_axis(mats, np.asarray(coeffs).reshape(self.shape))

    def from_quadrature(self, values: np.ndarray, derivs: Sequence[int] | None = None) -> np.ndarray:
        """Weighted sum ``b_i = sum_q w_q D N_i(x_q) values_q`` over all points."""
        derivs = derivs or (0,) * self.dim
        mats = [self.collocation(a, d).T.tocsr() for a, d in enumerate(derivs)]
        b = _apply_per_axis(mats, self.quad_weights * values.reshape(self.quad_shape))
        return b.ravel()

    def integrate(self, values_at_qp: np.ndarray) -> float:
        return float(np.sum(self.quad_weights * values_at_qp))

    @cached_property
    def _quad_basis(self) -> sp.csr_matrix:
        mats = [self.collocation(a, 0) for a in range(self.dim)]
        return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)

    # -- 1D factors -----------------------------------------------------------

    @cached_property
    def factors(self) -> list[dict[str, sp.csr_matrix]]:
        out = []
        for s in self.spaces:
            f = {"M": assemble_1d(s, self.nq, 0, 0), "K": assemble_1d(s, self.nq, 1, 1)}
            if s.degree >= 2:
                f["A"] = assemble_1d(s, self.nq, 2, 2)
            out.append(f)
        return out

    @cached_property
    def symbols(self) -> "FourierSymbols":
        return FourierSymbols(self)

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``M x = rhs`` one direction at a time (``M`` is a Kronecker product)."""
        x = np.asarray(rhs, dtype=float).reshape(self.shape)
        for axis, f in enumerate(self.factors):
            cho = sla.cho_factor(f["M"].toarray())
            x = np.moveaxis(x, axis, 0)
            tail = x.shape
            x = sla.cho_solve(cho, x.reshape(tail[0], -1)).reshape(tail)
            x = np.moveaxis(x, 0, axis)
        return x.ravel()


def build_tensor_space(p: int, m, L, dim: int | None = None, nq: int = 0) -> TensorSpace:
    """Build a box space; scalar ``m``/``L`` are repeated ``dim`` times."""
    ms = np.atleast_1d(m)
    Ls = np.atleast_1d(L)
    if dim is None:
        dim = max(len(ms), len(Ls))
    if len(ms) == 1:
        ms = np.repeat(ms, dim)
    if len(Ls) == 1:
        Ls = np.repeat(Ls, dim)
    if len(ms) != dim or len(Ls) != dim:
        raise ValueError("element counts and lengths must match the dimension")
    spaces = tuple(build_periodic_space(p, int(mi), float(Li)) for mi, Li in zip(ms, Ls))
    return TensorSpace(spaces, nq)


@dataclass
class FieldState:
    """B-spline coefficients of the order parameter at one time level."""

    coefficients: np.ndarray
    t: float = 0.0
    n: int = 0

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float).ravel()
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("field coefficients must be finite")
        if self.t < 0 or self.n < 0:
            raise ValueError("time and step index must be non-negative")

    def conforms(self, space: TensorSpace) -> bool:
        return self.coefficients.shape == (space.n_dof,)


def _apply_per_axis(mats: Sequence[sp.spmatrix], x: np.ndarray) -> np.ndarray:
    for axis, mat in enumerate(mats):
        x = np.moveaxis(x, axis, 0)
        tail = x.shape
        x = (mat @ x.reshape(tail[0], -1)).reshape((mat.shape[0],) + tail[1:])
        x = np.moveaxis(x, 0, axis)
    return x


def _coefficients(state) -> np.ndarray:
    if isinstance(state, FieldState):
        return state.coefficients
    return np.asarray(state, dtype=float).ravel()


# -- 1D assembly ----------------------------------------------------------------


def assemble_1d(space: SplineSpace, nq: int, da: int, db: int) -> sp.csr_matrix:
    """``(D^da N_i, D^db N_j)`` on a periodic 1D space by an element loop.

    The element table is computed once and reused; entries of each local
    matrix are accumulated in a fixed order so the result is deterministic.
    """
    p, m = space.degree, space.num_elements
    if max(da, db) > p:
        raise ValueError(f"derivative order {max(da, db)} exceeds degree {p}")
    _, w, vals = element_tables(space, nq, max(da, db))
    local = np.einsum("q,qa,qb->ab", w, vals[da], vals[db])
    if da == db:
        local = 0.5 * (local + local.T)
    rows, cols, data = [], [], []
    for e in range(m):
        dofs = (e + np.arange(-p, 1)) % m
        rows.append(np.repeat(dofs, p + 1))
        cols.append(np.tile(dofs, p + 1))
        data.append(local.ravel())
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
    )
    return mat.tocsr()


def _kron_all(mats: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats).tocsr()


def _check_pattern(mat: sp.csr_matrix) -> sp.csr_matrix:
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def assemble_mass(space: TensorSpace) -> sp.csr_matrix:
    """Mass matrix ``M_ij = (N_i, N_j)`` in compressed-row storage."""
    return _check_pattern(_kron_all([f["M"] for f in space.factors]))


def assemble_stiffness(space: TensorSpace) -> sp.csr_matrix:
    """Stiffness matrix ``K_ij = (grad N_i, grad N_j)``."""
    terms = []
    for d in range(space.dim):
        terms.append(_kron_all([f["K"] if e == d else f["M"] for e, f in enumerate(space.factors)]))
    return _check_pattern(sum(terms[1:], terms[0]).tocsr())


def assemble_bilaplacian(space: TensorSpace) -> sp.csr_matrix:
    """Bilaplacian form ``A_ij = (lap N_i, lap N_j)``; requires ``p >= 2``."""
    if any(s.degree < 2 for s in space.spaces):
        raise ValueError("bilaplacian form requires degree >= 2 (C1 continuity)")
    f = space.factors
    terms = []
    for d in range(space.dim):
        terms.append(_kron_all([f[e]["A"] if e == d else f[e]["M"] for e in range(space.dim)]))
    for d, e in itertools.combinations(range(space.dim), 2):
        mats = [f[c]["K"] if c in (d, e) else f[c]["M"] for c in range(space.dim)]
        terms.append(2.0 * _kron_all(mats))
    return _check_pattern(sum(terms[1:], terms[0]).tocsr())


def assemble_weighted_mass(space: TensorSpace, coef_at_qp: np.ndarray) -> sp.csr_matrix:
    """Galerkin matrix ``(c N_i, N_j)`` for a coefficient sampled at quadrature points."""
    B = space._quad_basis
    d = (space.quad_weights * coef_at_qp.reshape(space.quad_shape)).ravel()
    return _check_pattern((B.T @ sp.diags(d) @ B).tocsr())


def assemble_nonlinear_load(space: TensorSpace, f: Callable, states) -> np.ndarray:
    """Load vector ``b_i = int N_i f(phi(x)[, psi(x)]) dx`` at the space's quadrature.

    ``states`` is one field or a pair of fields; ``f`` receives their values
    at the quadrature points as arrays.
    """
    if isinstance(states, (FieldState, np.ndarray)):
        states = (states,)
    coeffs = [_coefficients(s) for s in states]
    if not 1 <= len(coeffs) <= 2:
        raise ValueError("nonlinear load takes one or two fields")
    for c in coeffs:
        if c.shape != (space.n_dof,):
            raise ValueError(f"field has {c.size} coefficients, space has {space.n_dof}")
    vals = [space.to_quadrature(c) for c in coeffs]
    fq = np.broadcast_to(np.asarray(f(*vals), dtype=float), space.quad_shape)
    return space.from_quadrature(fq)


def project(space: TensorSpace, g: Callable) -> FieldState:
    """L2 projection of ``g(x[, y[, z]])`` onto the space."""
    coords = space.quad_coordinates()
    gq = np.broadcast_to(np.asarray(g(*coords), dtype=float), space.quad_shape)
    rhs = space.from_quadrature(gq)
    return FieldState(space.solve_mass(rhs))


def sample_on_grid(space: TensorSpace, coeffs: np.ndarray, points: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate a field on the tensor grid spanned by 1D point sets."""
    mats = [sample_matrix(s, x) for s, x in zip(space.spaces, points)]
    return _apply_per_axis(mats, _coefficients(coeffs).reshape(space.shape))


# -- Fourier diagonalisation ------------------------------------------------------


class FourierSymbols:
    """Eigenvalues of ``M``, ``K`` and ``A`` on the ``rfftn`` frequency grid.

    The 1D operators are symmetric circulant matrices; their eigenvalues are
    the real DFT of the first column.
    """

    def __init__(self, space: TensorSpace):
        self.shape = space.shape
        dim = space.dim
        one_d = []
        for axis, f in enumerate(space.factors):
            last = axis == dim - 1
            tf = np.fft.rfft if last else np.fft.fft
            sym = {k: tf(mat[:, 0].toarray().ravel()).real for k, mat in f.items()}
            one_d.append(sym)

        def outer(per_axis):
            arrays = []
            for axis, arr in enumerate(per_axis):
                idx = [None] * dim
                idx[axis] = slice(None)
                arrays.append(arr[tuple(idx)])
            return reduce(np.multiply, arrays)

        self.M = outer([s["M"] for s in one_d])
        self.K = sum(
            outer([s["K"] if e == d else s["M"] for e, s in enumerate(one_d)]) for d in range(dim)
        )
        if all("A" in s for s in one_d):
            A = sum(
                outer([s["A"] if e == d else s["M"] for e, s in enumerate(one_d)])
                for d in range(dim)
            )
            for d, e in itertools.combinations(range(dim), 2):
                A = A + 2.0 * outer([s["K"] if c in (d, e) else s["M"] for c, s in enumerate(one_d)])
            self.A = A
        else:
            self.A = None
        self.M = np.broadcast_to(self.M, self.K.shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(x.reshape(self.shape), axes=tuple(range(len(self.shape))))

    def backward(self, xh: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(xh, s=self.shape, axes=tuple(range(len(self.shape)))).ravel()

    def apply(self, symbol: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.backward(symbol * self.forward(x))


class Operators:
    """Applies ``M``, ``K`` and ``A`` either from assembled CSR matrices or via FFT.

    Assembled matrices are kept when the space is small enough for a direct
    solver (``2 n_dof <= direct_limit``); larger spaces never assemble the
    3D Kronecker products and use the Fourier diagonalisation instead.
    """

    def __init__(self, space: TensorSpace, backend: str = "auto", direct_limit: int = 100_000):
        if backend == "auto":
            backend = "sparse" if 2 * space.n_dof <= direct_limit else "fft"
        if backend not in ("sparse", "fft"):
            raise ValueError(f"unknown operator backend {backend!r}")
        self.space = space
        self.backend = backend
        self._matrices: dict[str, sp.csr_matrix] = {}

    def matrix(self, name: str) -> sp.csr_matrix:
        if name not in self._matrices:
            builder = {"M": assemble_mass, "K": assemble_stiffness, "A": assemble_bilaplacian}[name]
            self._matrices[name] = builder(self.space)
        return self._matrices[name]

    def apply(self, name: str, x: np.ndarray) -> np.ndarray:
        if self.backend == "sparse":
            return self.matrix(name) @ x
        return self.space.symbols.apply(getattr(self.space.symbols, name), x)

    def M(self, x):
        return self.apply("M", x)

    def K(self, x):
        return self.apply("K", x)

    def A(self, x):
        return self.apply("A", x)
