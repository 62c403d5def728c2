"""Fourier pseudo-spectral PFC solver used as an independent test oracle.

Strong form: ``phi_t = lap[phi^3 + (1 - eps) phi + 2 lap phi + lap^2 phi]``.
Linear operators use exact Fourier symbols; the cubic is evaluated pointwise
on the collocation grid.  Time stepping is first-order semi-implicit (linear
part implicit, cubic explicit), deliberately unlike the convex splitting it
is compared against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpectralGrid:
    n: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        if len(self.n) != len(self.lengths) or not 1 <= len(self.n) <= 3:
            raise ValueError("point counts and lengths must list 1 to 3 matching directions")
        for ni in self.n:
            if ni < 2 or ni & (ni - 1):
                raise ValueError(f"grid sizes must be powers of two, got {ni}")
        if any(L <= 0 for L in self.lengths):
            raise ValueError("lengths must be positive")

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def cell_volume(self) -> float:
        return self.volume / int(np.prod(self.n))

    def coordinates(self) -> list[np.ndarray]:
        axes = [np.arange(n) * L / n for n, L in zip(self.n, self.lengths)]
        return np.meshgrid(*axes, indexing="ij")

    def wavenumbers(self) -> list[np.ndarray]:
        """Per-axis wavenumbers broadcast to the ``rfftn`` spectrum shape."""
        out = []
        for axis, (n, L) in enumerate(zip(self.n, self.lengths)):
            freq = np.fft.rfftfreq(n, 1.0 / n) if axis == self.dim - 1 else np.fft.fftfreq(n, 1.0 / n)
            k = 2.0 * np.pi * freq / L
            shape = [1] * self.dim
            shape[axis] = k.size
            out.append(k.reshape(shape))
        return out

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim))

    def k_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers())


def make_grid(n, lengths) -> SpectralGrid:
    n = tuple(int(x) for x in np.atleast_1d(n))
    lengths = tuple(float(x) for x in np.atleast_1d(lengths))
    if len(n) == 1 and len(lengths) > 1:
        n = n * len(lengths)
    if len(lengths) == 1 and len(n) > 1:
        lengths = lengths * len(n)
    return SpectralGrid(n, lengths)


def _linear_symbol(k2: np.ndarray, eps: float) -> np.ndarray:
    return k2 * k2 - 2.0 * k2 + 1.0 - eps


def spectral_rhs(grid: SpectralGrid, eps: float, phi: np.ndarray) -> np.ndarray:
    k2 = grid.k_squared()
    phi_h = np.fft.rfftn(phi)
    mu_h = np.fft.rfftn(phi**3) + _linear_symbol(k2, eps) * phi_h
    return np.fft.irfftn(-k2 * mu_h, s=grid.n, axes=grid.axes)


def spectral_step(grid: SpectralGrid, eps: float, phi: np.ndarray, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    k2 = grid.k_squared()
    phi_h = np.fft.rfftn(phi)
    num = phi_h - dt * k2 * np.fft.rfftn(phi**3)
    den = 1.0 + dt * k2 * _linear_symbol(k2, eps)
    return np.fft.irfftn(num / den, s=grid.n, axes=grid.axes)


def energy(grid: SpectralGrid, eps: float, phi: np.ndarray) -> float:
    """Grid-quadrature free energy with spectral derivatives."""
    phi_h = np.fft.rfftn(phi)
    grad_sq = np.zeros_like(phi)
    for k in grid.wavenumbers():
        grad_sq += np.fft.irfftn(1j * k * phi_h, s=grid.n, axes=grid.axes) ** 2
    lap = np.fft.irfftn(-grid.k_squared() * phi_h, s=grid.n, axes=grid.axes)
    density = 0.25 * phi**4 + 0.5 * (1.0 - eps) * phi**2 - grad_sq + 0.5 * lap**2
    return float(np.sum(density) * grid.cell_volume)


def mass(grid: SpectralGrid, phi: np.ndarray) -> float:
    return float(np.sum(phi) * grid.cell_volume)


def simulate(grid: SpectralGrid, eps: float, phi0: np.ndarray, dt: float, T: float) -> np.ndarray:
    """Integrate to time ``T`` with ``round(T / dt)`` equal steps."""
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a multiple of dt")
    phi = np.array(phi0, dtype=float)
    for _ in range(steps):
        phi = spectral_step(grid, eps, phi, dt)
    return phi
