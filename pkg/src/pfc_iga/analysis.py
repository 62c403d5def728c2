"""Verification harnesses: temporal order, stability sweeps, growth rates, structure factor."""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .assembly import TensorSpace, project
from .config import SimulationConfig
from .initial import generate_ic
from .integrator import Integrator, SchemeOrder
from .model import dispersion_rate
from .output import vertex_samples


def scheme_order(name: str) -> SchemeOrder:
    return {"first": SchemeOrder.FirstOrder, "second": SchemeOrder.SecondOrder}[name]


def make_integrator(config: SimulationConfig, params=None, mode=None) -> Integrator:
    params = params or config.params
    return Integrator(
        params.build_space(), params, mode=mode or config.mode,
        solver=config.solver, variant=config.variant,
    )


def fit_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def l2_norm(integ: Integrator, coeffs: np.ndarray) -> float:
    return math.sqrt(max(float(coeffs @ integ.ops.M(coeffs)), 0.0))


@dataclasses.dataclass
class ConvergenceResult:
    dts: list[float]
    errors: list[float]
    dt_ref: float
    slope: float


def convergence_study(config: SimulationConfig, dts, order: SchemeOrder | None = None, ref_factor: int = 16) -> ConvergenceResult:
    """Errors at time ``T`` against a reference run with ``min(dts) / ref_factor``."""
    order = order or scheme_order(config.scheme)
    dts = sorted((float(d) for d in dts), reverse=True)
    dt_ref = min(dts) / ref_factor

    def final(dt):
        params = dataclasses.replace(config.params, dt=dt)
        integ = make_integrator(config, params)
        initial = generate_ic(config, integ.space)
        return integ, integ.run(initial, order=order).final.coefficients

    integ, ref = final(dt_ref)
    errors = [l2_norm(integ, final(dt)[1] - ref) for dt in dts]
    return ConvergenceResult(dts, errors, dt_ref, fit_slope(dts, errors))


def stability_sweep(config: SimulationConfig, dts, steps: int, order: SchemeOrder | None = None) -> dict[float, float]:
    """Largest step-to-step energy increment for each ``dt`` over ``steps`` steps."""
    order = order or scheme_order(config.scheme)
    out = {}
    for dt in dts:
        params = dataclasses.replace(config.params, dt=float(dt), T=float(dt) * steps)
        integ = make_integrator(config, params, mode="production")
        initial = generate_ic(config, integ.space)
        e0 = integ.energy(initial).total
        result = integ.run(initial, order=order)
        out[float(dt)] = max_energy_increment(result.diagnostics, e0)
    return out


def mode_amplitude(space: TensorSpace, coeffs: np.ndarray, index) -> float:
    """Magnitude of one discrete Fourier mode of the coefficient vector.

    On a uniform periodic grid every operator is circulant, so a projected
    Fourier mode stays a single coefficient-space mode under linear dynamics.
    """
    spec = np.fft.fftn(coeffs.reshape(space.shape))
    idx = tuple(int(i) % m for i, m in zip(index, space.shape))
    return float(np.abs(spec[idx])) * 2.0 / space.n_dof


@dataclasses.dataclass
class GrowthResult:
    k: float
    measured: float
    analytic: float

    @property
    def ratio(self) -> float:
        return self.measured / self.analytic


def measure_growth_rate(config: SimulationConfig, k: float, T: float = 5.0, amplitude: float = 1e-6) -> GrowthResult:
    """Seed ``cos(k x)`` about ``phi_bar`` and fit the exponential rate of its amplitude."""
    params = dataclasses.replace(config.params, T=T)
    space = params.build_space()
    L = space.lengths[0]
    n = int(round(k * L / (2.0 * np.pi)))
    if n == 0:
        raise ValueError(f"wavenumber {k} is not resolved by a domain of length {L}")
    k_actual = 2.0 * np.pi * n / L
    integ = make_integrator(config, params, mode="production")
    initial = project(space, lambda x, *rest: params.phi_bar + amplitude * np.cos(k_actual * x))
    index = (n,) + (0,) * (space.dim - 1)
    times = [0.0]
    amps = [mode_amplitude(space, initial.coefficients, index)]

    def record(state, diag):
        times.append(state.t)
        amps.append(mode_amplitude(space, state.coefficients, index))

    integ.run(initial, on_step=record)
    rate = float(np.polyfit(times, np.log(amps), 1)[0])
    return GrowthResult(k_actual, rate, float(dispersion_rate(k_actual, params)))


def structure_factor(space: TensorSpace, coeffs):
    """Radially averaged power spectrum of the field sampled at element vertices.

    Returns bin-centre wavenumbers (multiples of ``2 pi / max(L)``) and the
    mean power per bin, with the field mean removed.
    """
    values = vertex_samples(space, coeffs)
    values = values[tuple(slice(0, m) for m in space.shape)]
    values = values - values.mean()
    power = np.abs(np.fft.fftn(values)) ** 2
    kgrid = np.meshgrid(
        *[2.0 * np.pi * np.fft.fftfreq(m, d=L / m) for m, L in zip(space.shape, space.lengths)],
        indexing="ij",
    )
    kmag = np.sqrt(sum(k**2 for k in kgrid)).ravel()
    dk = 2.0 * np.pi / max(space.lengths)
    # bin j collects |k| in [(j - 1/2) dk, (j + 1/2) dk)
    which = np.rint(kmag / dk).astype(int)
    sums = np.bincount(which, weights=power.ravel())
    counts = np.bincount(which)
    mean = sums / np.maximum(counts, 1)
    return dk * np.arange(len(sums)), mean


def peak_wavenumber(space: TensorSpace, coeffs) -> float:
    k, s = structure_factor(space, coeffs)
    s = s.copy()
    s[k < 0.2] = 0.0
    return float(k[np.argmax(s)])


def max_energy_increment(diagnostics, e0: float) -> float:
    energies = np.array([e0] + [d.energy.total for d in diagnostics])
    return float(np.max(np.diff(energies))) if len(energies) > 1 else 0.0



@dataclasses.dataclass
class PhaseSplit:
    fraction: float
    solid_density: float
    liquid_density: float


def crystalline_split(space: TensorSpace, coeffs, phi_bar: float, window: float = 4.0 * math.pi / math.sqrt(3.0)) -> PhaseSplit:
    """Classify vertices as crystalline where the local RMS deviation from
    ``phi_bar`` (box of one lattice spacing) exceeds half its maximum.

    Returns the crystalline share of the domain and the mean density of
    each phase (``nan`` for an empty phase).
    """
    from scipy.ndimage import uniform_filter

    values = vertex_samples(space, coeffs)[tuple(slice(0, m) for m in space.shape)]
    size = [max(1, int(round(window / s.h))) for s in space.spaces]
    local = np.sqrt(uniform_filter((values - phi_bar) ** 2, size=size, mode="wrap"))
    solid = local > 0.5 * local.max()
    with np.errstate(invalid="ignore"):
        return PhaseSplit(
            float(solid.mean()),
            float(values[solid].mean()) if solid.any() else math.nan,
            float(values[~solid].mean()) if (~solid).any() else math.nan,
        )
