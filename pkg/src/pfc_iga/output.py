"""Time-series CSV and snapshot writers."""
from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .assembly import FieldState, TensorSpace, sample_on_grid

TIMESERIES_COLUMNS = (
    "step", "t", "dt_effective", "E", "E_c", "E_e", "mass", "newton_iters", "residual_norm",
)
_INT_COLUMNS = {"step", "newton_iters"}


def _fmt(x) -> str:
    return format(float(x), ".17g")


def diagnostics_row(diag) -> list[str]:
    return [
        str(diag.step), _fmt(diag.t), _fmt(diag.dt), _fmt(diag.energy.total),
        _fmt(diag.energy.convex), _fmt(diag.energy.concave), _fmt(diag.mass),
        str(diag.newton_iters), _fmt(diag.residual_norm),
    ]


def write_timeseries(diagnostics: Iterable, path) -> Path:
    """Write one CSV row per step diagnostic (17 significant digits)."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TIMESERIES_COLUMNS)
            for diag in diagnostics:
                writer.writerow(diagnostics_row(diag))
    except OSError as exc:
        raise OSError(f"cannot write time series to {path}: {exc}") from exc
    return path


def read_timeseries(path) -> list[dict[str, float]]:
    with Path(path).open(newline="", encoding="ascii") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: int(v) if k in _INT_COLUMNS else float(v) for k, v in row.items()} for row in rows]


def vertex_samples(space: TensorSpace, phi) -> np.ndarray:
    """Field values at the ``m + 1`` element vertices per direction (periodic end repeated)."""
    points = [np.linspace(0.0, s.length, s.num_elements + 1) for s in space.spaces]
    coeffs = phi.coefficients if isinstance(phi, FieldState) else phi
    return sample_on_grid(space, coeffs, points)


def write_snapshot(space: TensorSpace, phi, path, format: str = "vtk_structured") -> Path:
    """Write vertex samples of ``phi`` as legacy VTK structured points or raw binary.

    ``raw_binary`` layout: four little-endian int64 ``(dim, n1, n2, n3)``
    (unused directions are 1) followed by ``n1*n2*n3`` little-endian float64
    values in C order (last index fastest).
    """
    if format not in ("vtk_structured", "raw_binary"):
        raise ValueError(f"unknown snapshot format {format!r}")
    values = vertex_samples(space, phi)
    dims = list(values.shape) + [1] * (3 - space.dim)
    path = Path(path)
    try:
        if format == "raw_binary":
            with path.open("wb") as fh:
                fh.write(struct.pack("<4q", space.dim, *dims))
                fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
        else:
            spacing = [s.h for s in space.spaces] + [1.0] * (3 - space.dim)
            t = phi.t if isinstance(phi, FieldState) else 0.0
            n = phi.n if isinstance(phi, FieldState) else 0
            header = [
                "# vtk DataFile Version 3.0",
                f"phase-field crystal order parameter, step {n}, t {_fmt(t)}",
                "ASCII",
                "DATASET STRUCTURED_POINTS",
                "DIMENSIONS {} {} {}".format(*dims),
                "ORIGIN 0 0 0",
                "SPACING {} {} {}".format(*(_fmt(h) for h in spacing)),
                f"POINT_DATA {values.size}",
                "SCALARS phi double 1",
                "LOOKUP_TABLE default",
            ]
            # VTK orders points with x varying fastest
            flat = values.reshape(dims).ravel(order="F")
            with path.open("w", encoding="ascii") as fh:
                fh.write("\n".join(header) + "\n")
                np.savetxt(fh, flat, fmt="%.17g")
    except OSError as exc:
        raise OSError(f"cannot write snapshot to {path}: {exc}") from exc
    return path


def read_raw_snapshot(path) -> np.ndarray:
    data = Path(path).read_bytes()
    dim, n1, n2, n3 = struct.unpack("<4q", data[:32])
    values = np.frombuffer(data[32:], dtype="<f8")
    shape = (n1, n2, n3)[:dim]
    return values.reshape(shape)
