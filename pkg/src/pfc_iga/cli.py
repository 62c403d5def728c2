"""Command-line entry points.

    pfc-iga run <config>
    pfc-iga converge <config> --dts 0.1,0.05,0.025
    pfc-iga stability <config> --dts 0.01,1,100 [--steps 50]
    pfc-iga dispersion <config> --k 1 [--time 5]
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import analysis
from .config import ConfigError, load_config
from .initial import generate_ic
from .integrator import ENERGY_SLACK, RunAborted, SchemeViolation, StepFailure
from .output import write_snapshot, write_timeseries

log = logging.getLogger("pfc_iga")

_SUFFIX = {"vtk_structured": "vtk", "raw_binary": "bin"}


def _floats(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("time steps must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfc-iga", description="Phase-field crystal convex-splitting simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a simulation and write outputs")
    p.add_argument("config")

    p = sub.add_parser("converge", help="temporal order-of-accuracy study")
    p.add_argument("config")
    p.add_argument("--dts", type=_floats, required=True)
    p.add_argument("--ref-factor", type=int, default=16)

    p = sub.add_parser("stability", help="maximum energy increment per time step size")
    p.add_argument("config")
    p.add_argument("--dts", type=_floats, required=True)
    p.add_argument("--steps", type=int, default=50)

    p = sub.add_parser("dispersion", help="measured vs analytic linear growth rate")
    p.add_argument("config")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--time", type=float, default=5.0)
    p.add_argument("--amplitude", type=float, default=1e-6)
    return parser


def cmd_run(config) -> int:
    integ = analysis.make_integrator(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    initial = generate_ic(config, integ.space)

    def snapshot(state):
        for fmt in config.formats:
            write_snapshot(integ.space, state, out / f"phi_{state.n:06d}.{_SUFFIX[fmt]}", fmt)

    if config.snapshot_every:
        snapshot(initial)

    def on_step(state, diag):
        log.info("step %d t=%.6g E=%.10g mass=%.10g newton=%d", diag.step, diag.t, diag.energy.total, diag.mass, diag.newton_iters)
        if config.snapshot_every and state.n % config.snapshot_every == 0:
            snapshot(state)

    try:
        result = integ.run(initial, order=analysis.scheme_order(config.scheme), on_step=on_step)
    except RunAborted as exc:
        write_timeseries(exc.diagnostics, out / "timeseries.csv")
        raise
    write_timeseries(result.diagnostics, out / "timeseries.csv")
    final = result.final
    if config.snapshot_every and final.n % config.snapshot_every:
        snapshot(final)
    print(f"completed {final.n} steps to t={final.t:.6g}; outputs in {out}")
    return 0


def cmd_converge(config, args) -> int:
    res = analysis.convergence_study(config, args.dts, ref_factor=args.ref_factor)
    print(f"reference dt = {res.dt_ref:.6g}")
    for dt, err in zip(res.dts, res.errors):
        print(f"dt = {dt:<10.6g} L2 error = {err:.6e}")
    print(f"fitted slope = {res.slope:.4f}")
    return 0


def cmd_stability(config, args) -> int:
    sweep = analysis.stability_sweep(config, args.dts, args.steps)
    ok = True
    for dt, inc in sweep.items():
        flag = "ok" if inc <= ENERGY_SLACK else "VIOLATION"
        ok &= inc <= ENERGY_SLACK
        print(f"dt = {dt:<10.6g} max energy increment = {inc:.6e} {flag}")
    return 0 if ok else 1


def cmd_dispersion(config, args) -> int:
    res = analysis.measure_growth_rate(config, args.k, T=args.time, amplitude=args.amplitude)
    print(f"k = {res.k:.6g}")
    print(f"measured omega = {res.measured:.8g}")
    print(f"analytic omega = {res.analytic:.8g}")
    print(f"ratio = {res.ratio:.6f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = load_config(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "run":
            return cmd_run(config)
        if args.command == "converge":
            return cmd_converge(config, args)
        if args.command == "stability":
            return cmd_stability(config, args)
        return cmd_dispersion(config, args)
    except (StepFailure, RunAborted, SchemeViolation, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
