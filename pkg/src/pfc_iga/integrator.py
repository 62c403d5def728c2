"""Convex-splitting time integration of the mixed (phi, mu) system.

Each step solves, for the new field ``phi+`` and chemical potential ``mu``,

    R_phi = M (phi+ - phi^n) / dt + K mu
    R_mu  = M mu - b(phi+, phi^n) - (1 - eps) M phi_c - A phi_c + 2 K phi_e

First order uses ``b = (phi+^3, N)``, ``phi_c = phi+`` and ``phi_e = phi^n``.
Second order uses the secant load ``b = (chi(phi+, phi^n), N)``, the
midpoint ``phi_c = (phi+ + phi^n) / 2`` and one of two concave arguments:

* ``stabilized`` (default): ``phi_e = theta phi+ + (1 - theta) phi^n`` with
  ``theta = 1/2 - gamma`` and ``gamma = min(1/2, damping dt^2)``.  The energy
  then drops by at least ``dt |mu|_K^2 + 2 gamma |phi+ - phi^n|_K^2`` per step
  for any ``dt``, while the extra term stays O(dt^2) locally.
* ``extrapolated``: ``phi_e = 3/2 phi^n - 1/2 phi^(n-1)`` (for a step ratio
  ``r``: ``(1 + r/2) phi^n - r/2 phi^(n-1)``).  Only a modified energy that
  includes ``|phi^n - phi^(n-1)|_K^2`` is guaranteed to decay.
"""
from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FieldState, Operators, TensorSpace, assemble_weighted_mass
from .model import (
    EnergyReport,
    ModelParams,
    chi_secant,
    chi_secant_da,
    free_energy,
    mass,
)

log = logging.getLogger(__name__)

ENERGY_SLACK = 1e-10
MASS_RTOL = 1e-11
MAX_HALVINGS = 8


class SchemeOrder(enum.Enum):
    FirstOrder = 1
    SecondOrder = 2


class StepFailure(RuntimeError):
    """Newton or linear-solver breakdown within one time step."""


class BootstrapRequired(ValueError):
    """A second-order step was requested without a previous time level."""


class SchemeViolation(RuntimeError):
    """A step increased the discrete energy or changed the mass beyond tolerance."""


class RunAborted(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class StepDiagnostics:
    step: int
    t: float
    dt: float
    energy: EnergyReport
    mass: float
    newton_iters: int
    residual_norm: float
    residual_history: list[float] = field(default_factory=list, repr=False)
    linear_iters: int = 0


@dataclass
class History:
    """Current and previous time levels plus the chemical-potential work vector."""

    current: FieldState
    previous: FieldState | None = None
    mu: np.ndarray | None = None
    dt_prev: float | None = None
    energy: EnergyReport | None = None

    def push(self, state: FieldState, dt: float, energy: EnergyReport | None = None) -> None:
        self.previous, self.current = self.current, state
        self.dt_prev = dt
        self.energy = energy


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norms: list[float]
    linear_iters: int = 0


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], "BlockJacobian"],
    x0: np.ndarray,
    tol: float,
    max_iter: int,
) -> NewtonResult:
    """Newton's method on ``residual(x) = 0``.

    Converged when ``||r|| <= tol (1 + ||r_0||)``.  ``jacobian(x)`` must return
    an object with a ``solve(rhs)`` method.  Raises :class:`StepFailure`.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    x = np.array(x0, dtype=float)
    r = residual(x)
    norms = [float(np.linalg.norm(r))]
    target = tol * (1.0 + norms[0])
    lin_iters = 0
    for k in range(max_iter + 1):
        if not math.isfinite(norms[-1]):
            raise StepFailure(f"non-finite residual at Newton iteration {k}")
        if norms[-1] <= target:
            return NewtonResult(x, k, norms, lin_iters)
        if k == max_iter:
            break
        try:
            J = jacobian(x)
            dx = J.solve(-r)
        except (RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
            raise StepFailure(f"linear solve failed at Newton iteration {k}: {exc}") from exc
        lin_iters += getattr(J, "iterations", 0)
        x = x + dx
        r = residual(x)
        norms.append(float(np.linalg.norm(r)))
    raise StepFailure(
        f"Newton did not converge in {max_iter} iterations (|r| = {norms[-1]:.3e}, target {target:.3e})"
    )


class BlockJacobian:
    """Newton matrix ``[[M/dt, K], [-(J_chi + c M + s A), M]]``.

    ``coef_qp`` holds ``d(load)/d(phi+)`` at the quadrature points,
    ``c = (1 - eps)`` (first order) or ``(1 - eps)/2`` and ``s = 1`` or ``1/2``.
    Solves are performed on the equivalent system with the first block row
    multiplied by ``dt``.
    """

    def __init__(self, integ: "Integrator", coef_qp, dt, c, s, k=0.0):
        self.integ = integ
        self.coef_qp = coef_qp
        self.dt, self.c, self.s, self.k = dt, c, s, k
        self.iterations = 0

    def blocks(self) -> list[list[sp.csr_matrix]]:
        ops, space = self.integ.ops, self.integ.space
        M, K, A = ops.matrix("M"), ops.matrix("K"), ops.matrix("A")
        J_chi = assemble_weighted_mass(space, self.coef_qp)
        lower = -(J_chi + self.c * M + self.s * A)
        if self.k:
            lower = lower + self.k * K
        return [[M / self.dt, K], [lower.tocsr(), M]]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Apply the (unscaled) Newton matrix."""
        n = self.integ.space.n_dof
        ops, space = self.integ.ops, self.integ.space
        x1, x2 = v[:n], v[n:]
        Mx1 = ops.M(x1)
        top = Mx1 / self.dt + ops.K(x2)
        jx = space.from_quadrature(self.coef_qp * space.to_quadrature(x1))
        bottom = -(jx + self.c * Mx1 + self.s * ops.A(x1)) + ops.M(x2)
        if self.k:
            bottom += self.k * ops.K(x1)
        return np.concatenate([top, bottom])

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.integ.solver == "direct":
            return self._solve_direct(rhs)
        return self._solve_iterative(rhs)

    def _solve_direct(self, rhs):
        n = self.integ.space.n_dof
        (M_dt, K), (L, M) = self.blocks()
        mat = sp.bmat([[M_dt * self.dt, self.dt * K], [L, M]], format="csc")
        scaled = np.concatenate([self.dt * rhs[:n], rhs[n:]])
        lu = spla.splu(mat, permc_spec="MMD_AT_PLUS_A")
        x = lu.solve(scaled)
        if not np.all(np.isfinite(x)):
            raise RuntimeError("direct solve produced non-finite values")
        return x

    def _solve_iterative(self, rhs):
        n = self.integ.space.n_dof
        space, ops = self.integ.space, self.integ.ops
        sym = space.symbols
        dt = self.dt
        cbar = float(space.integrate(self.coef_qp) / space.volume)
        Mh, Kh, Ah = sym.M, sym.K, sym.A
        lower_h = (cbar + self.c) * Mh + self.s * Ah - self.k * Kh
        det = Mh * Mh + dt * Kh * lower_h

        def scaled_matvec(v):
            y = self.matvec(v)
            y[:n] *= dt
            return y

        def precond(v):
            r1 = sym.forward(v[:n])
            r2 = sym.forward(v[n:])
            # [[Mh, dt Kh], [-lower_h, Mh]]^-1 mode by mode
            x1 = (Mh * r1 - dt * Kh * r2) / det
            x2 = (lower_h * r1 + Mh * r2) / det
            return np.concatenate([sym.backward(x1), sym.backward(x2)])

        N = 2 * n
        A_op = spla.LinearOperator((N, N), matvec=scaled_matvec, dtype=float)
        P_op = spla.LinearOperator((N, N), matvec=precond, dtype=float)
        scaled = np.concatenate([dt * rhs[:n], rhs[n:]])
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.gmres(
            A_op, scaled, M=P_op, rtol=self.integ.params.linear_tol, atol=0.0,
            restart=60, maxiter=20, callback=cb, callback_type="pr_norm",
        )
        self.iterations = count[0]
        if info != 0:
            raise RuntimeError(f"GMRES did not converge (info={info})")
        # The first block row fixes the mass change exactly (1^T K = 0);
        # remove the Krylov residual from that single functional.
        dphi = x[:n]
        target = float(np.sum(scaled[:n]))
        dphi += (target - float(np.sum(ops.M(dphi)))) / space.volume
        return x


class Integrator:
    """Time stepper bound to one discretisation and parameter set.

    Parameters
    ----------
    space, params
        Discretisation and model parameters.
    mode : {"production", "test"}
        Energy/mass violations raise :class:`SchemeViolation` in test mode
        and emit a warning in production mode.
    solver : {"auto", "direct", "iterative"}
        ``iterative`` (default) runs GMRES preconditioned by the Fourier
        diagonalisation of the linearised step. ``auto`` factorises directly
        up to ``direct_limit`` unknowns and otherwise runs GMRES.
    """

    def __init__(
        self,
        space: TensorSpace,
        params: ModelParams,
        mode: str = "production",
        solver: str = "iterative",
        variant: str = "stabilized",
        damping: float = 0.5,
        direct_limit: int = 100_000,
    ):
        if mode not in ("production", "test"):
            raise ValueError(f"mode must be 'production' or 'test', got {mode!r}")
        if solver == "auto":
            solver = "direct" if 2 * space.n_dof <= direct_limit else "iterative"
        if solver not in ("direct", "iterative"):
            raise ValueError(f"unknown solver {solver!r}")
        if variant not in ("stabilized", "extrapolated"):
            raise ValueError(f"unknown second-order variant {variant!r}")
        if space.degree < 2:
            raise ValueError("mixed PFC system requires degree >= 2")
        self.space = space
        self.params = params
        self.mode = mode
        self.solver = solver
        self.ops = Operators(space, "sparse" if solver == "direct" else "fft")
        self.eps = params.epsilon
        self.variant = variant
        self.damping = damping

    @property
    def needs_bootstrap(self) -> bool:
        return self.variant == "extrapolated"

    # -- residuals ----------------------------------------------------------

    def _split(self, x):
        n = self.space.n_dof
        return x[:n], x[n:]

    def residual_first_order(self, phi_n, phi_p, mu, dt):
        """First-order splitting residual ``(R_phi, R_mu)``."""
        _check_dt(dt)
        ops, space = self.ops, self.space
        pn, pp = _c(phi_n), _c(phi_p)
        r_phi = ops.M(pp - pn) / dt + ops.K(mu)
        load = space.from_quadrature(space.to_quadrature(pp) ** 3)
        r_mu = ops.M(mu) - load - (1.0 - self.eps) * ops.M(pp) - ops.A(pp) + 2.0 * ops.K(pn)
        return r_phi, r_mu

    def concave_weight(self, dt) -> float:
        """Implicit weight ``theta`` of ``phi+`` in the stabilised concave term."""
        return 0.5 - min(0.5, self.damping * dt * dt)

    def residual_second_order(self, history: History, phi_p, mu, dt):
        """Second-order splitting residual ``(R_phi, R_mu)``."""
        _check_dt(dt)
        ops, space = self.ops, self.space
        pn, pp = _c(history.current), _c(phi_p)
        if self.variant == "extrapolated":
            if history.previous is None:
                raise BootstrapRequired("second-order step needs two time levels; bootstrap first")
            p_old = _c(history.previous)
            r = dt / history.dt_prev if history.dt_prev else 1.0
            concave = (1.0 + 0.5 * r) * pn - 0.5 * r * p_old
        else:
            theta = self.concave_weight(dt)
            concave = theta * pp + (1.0 - theta) * pn
        mid = 0.5 * (pp + pn)
        r_phi = ops.M(pp - pn) / dt + ops.K(mu)
        load = space.from_quadrature(chi_secant(space.to_quadrature(pp), space.to_quadrature(pn)))
        r_mu = ops.M(mu) - load - (1.0 - self.eps) * ops.M(mid) - ops.A(mid) + 2.0 * ops.K(concave)
        return r_phi, r_mu

    # -- Jacobians ------------------------------------------------------------

    def jacobian_first_order(self, phi_p, dt) -> BlockJacobian:
        coef = 3.0 * self.space.to_quadrature(_c(phi_p)) ** 2
        return BlockJacobian(self, coef, dt, 1.0 - self.eps, 1.0)

    def jacobian_second_order(self, history: History, phi_p, dt) -> BlockJacobian:
        a = self.space.to_quadrature(_c(phi_p))
        b = self.space.to_quadrature(_c(history.current))
        k = 0.0 if self.variant == "extrapolated" else 2.0 * self.concave_weight(dt)
        return BlockJacobian(self, chi_secant_da(a, b), dt, 0.5 * (1.0 - self.eps), 0.5, k)

    # -- stepping -------------------------------------------------------------

    def energy(self, state) -> EnergyReport:
        return free_energy(self.space, self.params, state, self.ops)

    def mass(self, state) -> float:
        return mass(self.space, state, self.ops)

    def step(
        self, history: History, order: SchemeOrder = SchemeOrder.SecondOrder, dt: float | None = None
    ) -> tuple[FieldState, StepDiagnostics]:
        """Advance one step from ``history.current``.

        ``history.mu`` is updated with the new chemical potential; the history
        itself is not advanced (see :meth:`History.push`).
        """
        dt = self.params.dt if dt is None else dt
        _check_dt(dt)
        n = self.space.n_dof
        cur = history.current
        if not cur.conforms(self.space):
            raise ValueError("state does not conform to the space")
        pn = cur.coefficients
        mu0 = history.mu if history.mu is not None else np.zeros(n)

        if order is SchemeOrder.FirstOrder:
            guess = pn.copy()

            def residual(x):
                return np.concatenate(self.residual_first_order(pn, x[:n], x[n:], dt))

            def jacobian(x):
                return self.jacobian_first_order(x[:n], dt)

        else:
            if history.previous is None:
                if self.needs_bootstrap:
                    raise BootstrapRequired("second-order step needs two time levels; bootstrap first")
                guess = pn.copy()
            else:
                r = dt / history.dt_prev if history.dt_prev else 1.0
                guess = pn + r * (pn - history.previous.coefficients)

            def residual(x):
                return np.concatenate(self.residual_second_order(history, x[:n], x[n:], dt))

            def jacobian(x):
                return self.jacobian_second_order(history, x[:n], dt)

        res = newton_solve(
            residual, jacobian, np.concatenate([guess, mu0]),
            self.params.newton_tol, self.params.newton_max_iter,
        )
        phi_new, mu_new = res.x[:n].copy(), res.x[n:].copy()
        state = FieldState(phi_new, t=cur.t + dt, n=cur.n + 1)
        history.mu = mu_new

        e_old = history.energy or self.energy(cur)
        e_new = self.energy(state)
        m_old, m_new = self.mass(cur), self.mass(state)
        diag = StepDiagnostics(
            step=state.n, t=state.t, dt=dt, energy=e_new, mass=m_new,
            newton_iters=res.iterations, residual_norm=res.residual_norms[-1],
            residual_history=res.residual_norms, linear_iters=res.linear_iters,
        )
        problems = []
        if e_new.total > e_old.total + ENERGY_SLACK:
            problems.append(
                f"energy increased by {e_new.total - e_old.total:.3e} at step {state.n} (dt={dt:g})"
            )
        if abs(m_new - m_old) > MASS_RTOL * (1.0 + abs(m_old)):
            problems.append(f"mass changed by {m_new - m_old:.3e} at step {state.n}")
        for msg in problems:
            if self.mode == "test":
                raise SchemeViolation(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            log.warning(msg)
        return state, diag

    def run(
        self,
        initial: FieldState,
        T: float | None = None,
        snapshot_every: int | None = None,
        order: SchemeOrder = SchemeOrder.SecondOrder,
        on_step: Callable[[FieldState, StepDiagnostics], None] | None = None,
    ) -> "RunResult":
        """Integrate from ``initial`` to time ``T``.

        One first-order bootstrap step is taken when no previous level exists,
        followed by steps of the requested ``order``.  A failed step is retried
        with half the step size up to eight times.
        """
        T = self.params.T if T is None else T
        if T < 0:
            raise ValueError("T must be non-negative")
        dt_nominal = self.params.dt
        history = History(current=initial)
        history.energy = self.energy(initial)
        result = RunResult(history=history, snapshots=[(initial.n, initial.t, initial.coefficients.copy())])
        t_end = initial.t + T
        while t_end - history.current.t > 1e-12 * max(1.0, t_end):
            remaining = t_end - history.current.t
            dt = dt_nominal if remaining > dt_nominal * (1 + 1e-9) else remaining
            step_order = order if history.previous is not None else SchemeOrder.FirstOrder
            for attempt in range(MAX_HALVINGS + 1):
                try:
                    state, diag = self.step(history, step_order, dt)
                    break
                except StepFailure as exc:
                    log.info("step %d failed at dt=%g: %s", history.current.n + 1, dt, exc)
                    if attempt == MAX_HALVINGS:
                        raise RunAborted(
                            f"step {history.current.n + 1} failed after {MAX_HALVINGS} halvings: {exc}",
                            result.diagnostics,
                        ) from exc
                    dt *= 0.5
            # exact end time when the schedule lands on T
            if abs(state.t - t_end) <= 1e-12 * max(1.0, t_end):
                state.t = t_end
            history.push(state, dt, diag.energy)
            result.diagnostics.append(diag)
            if snapshot_every and state.n % snapshot_every == 0:
                result.snapshots.append((state.n, state.t, state.coefficients.copy()))
            if on_step is not None:
                on_step(state, diag)
        if snapshot_every and result.snapshots[-1][0] != history.current.n:
            result.snapshots.append((history.current.n, history.current.t, history.current.coefficients.copy()))
        return result


@dataclass
class RunResult:
    history: History
    diagnostics: list[StepDiagnostics] = field(default_factory=list)
    snapshots: list[tuple[int, float, np.ndarray]] = field(default_factory=list)

    @property
    def final(self) -> FieldState:
        return self.history.current


def _c(state) -> np.ndarray:
    return state.coefficients if isinstance(state, FieldState) else np.asarray(state, dtype=float)


def _check_dt(dt):
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
