"""Phase-field crystal free energy and its convex/concave split.

The free energy is

    E[phi] = int 1/4 phi^4 + 1/2 (1 - eps) phi^2 - |grad phi|^2 + 1/2 (lap phi)^2

split as ``E = E_c - E_e`` with the convex part

    E_c = int 1/4 phi^4 + 1/2 (1 - eps) phi^2 + 1/2 (lap phi)^2

and the concave contribution ``E_e = int |grad phi|^2``.  The dynamics are the
conserved gradient flow ``phi_t = lap mu`` with ``mu = dE/dphi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import FieldState, Operators, TensorSpace


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters of one simulation."""

    epsilon: float
    phi_bar: float
    lengths: tuple[float, ...]
    elements: tuple[int, ...]
    dt: float
    T: float
    degree: int = 2
    quad_points: int = 0
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    linear_tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(x) for x in np.atleast_1d(self.lengths)))
        object.__setattr__(self, "elements", tuple(int(x) for x in np.atleast_1d(self.elements)))
        if self.quad_points == 0:
            object.__setattr__(self, "quad_points", self.degree + 1)
        if not (0 < self.epsilon <= 1):
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not math.isfinite(self.phi_bar):
            raise ValueError("phi_bar must be finite")
        if len(self.lengths) != len(self.elements) or not 1 <= len(self.lengths) <= 3:
            raise ValueError("lengths and elements must list 1 to 3 matching directions")
        if any(L <= 0 for L in self.lengths):
            raise ValueError("domain lengths must be positive")
        if any(m <= self.degree for m in self.elements):
            raise ValueError("each direction needs more elements than the degree")
        if self.degree < 2:
            raise ValueError("degree must be >= 2 for the bilaplacian term")
        if not 1 <= self.quad_points <= 10:
            raise ValueError("quad_points must lie in [1, 10]")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.T >= 0:
            raise ValueError(f"T must be non-negative, got {self.T}")
        if not (self.newton_tol > 0 and self.linear_tol > 0):
            raise ValueError("solver tolerances must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")

    @property
    def dim(self) -> int:
        return len(self.lengths)

    def build_space(self) -> TensorSpace:
        from .assembly import build_tensor_space

        return build_tensor_space(self.degree, self.elements, self.lengths, nq=self.quad_points)


@dataclass(frozen=True)
class EnergyReport:
    total: float
    convex: float
    concave: float


def _ops(space: TensorSpace, operators: Operators | None) -> Operators:
    return operators if operators is not None else Operators(space)


def free_energy(
    space: TensorSpace, params: ModelParams, phi: FieldState, operators: Operators | None = None
) -> EnergyReport:
    """Discrete energy with the same quadrature and operators as the residual.

    Quadratic terms use the assembled operators; the quartic term is the
    quadrature sum of ``phi_h^4 / 4``.
    """
    ops = _ops(space, operators)
    c = phi.coefficients if isinstance(phi, FieldState) else np.asarray(phi, dtype=float)
    phi_q = space.to_quadrature(c)
    quartic = 0.25 * space.integrate(phi_q**4)
    quadratic = 0.5 * (1.0 - params.epsilon) * (c @ ops.M(c))
    bilap = 0.5 * (c @ ops.A(c))
    gradient = c @ ops.K(c)
    convex = quartic + quadratic + bilap
    return EnergyReport(total=convex - gradient, convex=convex, concave=gradient)


def energy_gradient(
    space: TensorSpace, params: ModelParams, phi: np.ndarray, operators: Operators | None = None
) -> np.ndarray:
    """Derivative of :func:`free_energy` with respect to the coefficients."""
    ops = _ops(space, operators)
    cubic = space.from_quadrature(space.to_quadrature(phi) ** 3)
    return cubic + (1.0 - params.epsilon) * ops.M(phi) - 2.0 * ops.K(phi) + ops.A(phi)


def mass(space: TensorSpace, phi: FieldState, operators: Operators | None = None) -> float:
    """Integral of the field, ``1^T M phi``."""
    c = phi.coefficients if isinstance(phi, FieldState) else np.asarray(phi, dtype=float)
    return float(np.sum(_ops(space, operators).M(c)))


def chi_secant(a, b):
    """Secant slope of ``phi^4 / 4``: ``chi(a, b) (a - b) = (a^4 - b^4) / 4``."""
    return 0.25 * (a * a * a + a * a * b + a * b * b + b * b * b)


def chi_secant_da(a, b):
    """Partial derivative of :func:`chi_secant` in its first argument."""
    return 0.25 * (3.0 * a * a + 2.0 * a * b + b * b)


def dispersion_rate(k, params: ModelParams | None = None, *, epsilon=None, phi_bar=None):
    """Linear growth rate ``-k^2 [(1 - k^2)^2 - eps + 3 phi_bar^2]`` about ``phi_bar``."""
    eps = params.epsilon if epsilon is None else epsilon
    pb = params.phi_bar if phi_bar is None else phi_bar
    k2 = np.square(k)
    return -k2 * ((1.0 - k2) ** 2 - eps + 3.0 * pb**2)
