"""Initial conditions: noisy liquid, single Fourier mode, hexagonal seeds.

Noise is drawn from numpy's PCG64 bit generator, whose output stream is fixed
for a given seed on every platform.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .assembly import FieldState, TensorSpace, project
from .config import InitialCondition, SimulationConfig
from .model import mass

HEX_Q = math.sqrt(3.0) / 2.0


def one_mode_hex(xp, yp, amplitude):
    """One-mode triangular pattern with unit reciprocal vectors, peak ``1.5 A`` at the origin."""
    s3 = math.sqrt(3.0)
    return amplitude * (
        np.cos(HEX_Q * xp) * np.cos(HEX_Q * yp / s3) + 0.5 * np.cos(2.0 * HEX_Q * yp / s3)
    )


def correct_mean(space: TensorSpace, coeffs: np.ndarray, phi_bar: float) -> np.ndarray:
    # constants are reproduced exactly, so a uniform shift moves the mean exactly
    return coeffs + (phi_bar - mass(space, coeffs) / space.volume)


def _periodic_delta(x, c, L):
    return (x - c + 0.5 * L) % L - 0.5 * L


def check_seeds(ic: InitialCondition, lengths) -> None:
    centers = [np.mod(np.asarray(c, dtype=float), lengths) for c in ic.centers]
    for (i, a), (j, b) in itertools.combinations(enumerate(centers), 2):
        d = np.array([_periodic_delta(ai, bi, L) for ai, bi, L in zip(a, b, lengths)])
        if np.linalg.norm(d) < 2.0 * ic.radius:
            raise ValueError(f"seeds {i} and {j} overlap (distance {np.linalg.norm(d):.3g} < {2 * ic.radius:.3g})")


def hex_seed_field(ic: InitialCondition, phi_bar: float, lengths):
    """Pointwise seeded field ``g(x, y[, z])``: lattice inside each seed, ``phi_bar`` outside."""
    check_seeds(ic, lengths)
    angles = ic.angles or (0.0,) * len(ic.centers)

    def g(*coords):
        out = np.full(np.shape(coords[0]), phi_bar, dtype=float)
        for center, theta in zip(ic.centers, angles):
            d = [_periodic_delta(x, c, L) for x, c, L in zip(coords, center, lengths)]
            inside = sum(di**2 for di in d) <= ic.radius**2
            ct, st = math.cos(theta), math.sin(theta)
            xp = ct * d[0] + st * d[1]
            yp = -st * d[0] + ct * d[1]
            out = np.where(inside, phi_bar + one_mode_hex(xp, yp, ic.amplitude), out)
        return out

    return g


def generate_ic(config: SimulationConfig, space: TensorSpace) -> FieldState:
    """Build the initial field; its mean equals ``phi_bar`` to roundoff."""
    ic, phi_bar = config.ic, config.params.phi_bar
    lengths = space.lengths
    if ic.kind == "constant_noise":
        rng = np.random.Generator(np.random.PCG64(ic.seed))
        coeffs = phi_bar + ic.amplitude * rng.uniform(-1.0, 1.0, space.n_dof)
    elif ic.kind == "single_mode":
        if len(ic.k) != space.dim:
            raise ValueError(f"mode index needs {space.dim} components")
        k = [2.0 * np.pi * n / L for n, L in zip(ic.k, lengths)]
        coeffs = project(space, lambda *x: phi_bar + ic.amplitude * np.cos(sum(ki * xi for ki, xi in zip(k, x)))).coefficients
    else:
        if space.dim < 2:
            raise ValueError("hex_seeds needs a 2D or 3D space")
        coeffs = project(space, hex_seed_field(ic, phi_bar, lengths)).coefficients
    return FieldState(correct_mean(space, coeffs, phi_bar))
