"""Command-line entry point: ``capa-crb <experiment> [options]``.

Each experiment writes one CSV (header row preceded by a ``#`` comment line
carrying the configuration hash) and, unless ``--no-plot`` is given, a PNG
figure with the same stem.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import experiments as ex
from .channel import SingularityError
from .fisher import UnidentifiableError
from .geometry import NearFieldWarning, load_config, scenario_from_dict, scenario_from_table1, square_apertures
from .optimizer import write_weights_csv

KINDS = ("gl-convergence", "optimize", "crb-map", "mle-spectrum", "nmse-step", "sweep-power",
         "sweep-frequency", "compare-spda", "robustness", "beam-pattern")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _strs(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or TOML scenario file (built-in reference scenario otherwise)")
    common.add_argument("--out", type=Path, help="output CSV path (default: <experiment>.csv)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--gl-points", type=int, help="GL points per axis (overrides config and fidelity)")
    common.add_argument("--fidelity", choices=("test", "paper"), default="test",
                        help="desk-scale (120 GL points) or converged full-resolution (300) defaults")
    common.add_argument("--workers", type=int, default=1, help="process pool size for sweeps")
    common.add_argument("--no-plot", action="store_true", help="skip the PNG figure")

    p = argparse.ArgumentParser(prog="capa-crb", description="CRB-optimal probing currents for continuous apertures")
    sub = p.add_subparsers(dest="kind", required=True)

    g = sub.add_parser("gl-convergence", parents=[common], help="CRB/power integrals vs GL order")
    g.add_argument("--points", type=_ints, default=list(ex.GL_CONVERGENCE_POINTS))

    o = sub.add_parser("optimize", parents=[common], help="run SMGD and dump trace and weights")
    o.add_argument("--rules", type=_strs, default=["FR"], help="comma list of FR, PR, plain")
    o.add_argument("--starts", type=int, default=1)
    o.add_argument("--max-iter", type=int, default=200)

    m = sub.add_parser("crb-map", parents=[common], help="single-target log10 CRB over the x-z plane")
    m.add_argument("--nx", type=int)
    m.add_argument("--nz", type=int)
    m.add_argument("--x-range", type=_floats, default=[-7.0, 7.0])
    m.add_argument("--z-range", type=_floats, default=[0.1, 9.0])
    m.add_argument("--mode", choices=("optimized", "fixed"), default="optimized")

    s = sub.add_parser("mle-spectrum", parents=[common], help="1D likelihood sweeps around the first target")
    s.add_argument("--axes", type=_strs, default=["x", "z"])
    s.add_argument("--half-width", type=float, default=0.2)
    s.add_argument("--step", type=float, default=0.005)
    s.add_argument("--policy", choices=("optimized", "random"), default="optimized")
    s.add_argument("--noiseless", action="store_true")
    s.add_argument("--area", type=float, help="replace apertures by adjacent squares of this area [m^2]")

    n = sub.add_parser("nmse-step", parents=[common], help="grid-search NMSE vs search step")
    n.add_argument("--steps", type=_floats, default=[0.001, 0.002, 0.005, 0.01, 0.02, 0.05])
    n.add_argument("--trials", type=int, default=50)
    n.add_argument("--half-width", type=float, default=0.25)
    n.add_argument("--grid-offset", type=float, default=0.5, help="grid shift in steps relative to the truth")

    sp = sub.add_parser("sweep-power", parents=[common], help="optimized CRB vs transmit power")
    sp.add_argument("--powers", type=_floats, default=[25.0, 50.0, 100.0, 200.0, 400.0], help="mA^2")
    sp.add_argument("--frequencies", type=_floats, help="GHz (default: scenario frequency)")
    sp.add_argument("--targets", type=_ints, help="target counts taken from the scenario's list")

    sf = sub.add_parser("sweep-frequency", parents=[common], help="optimized CRB vs carrier frequency")
    sf.add_argument("--frequencies", type=_floats, default=[24.0, 26.0, 28.0, 30.0, 32.0], help="GHz")
    sf.add_argument("--targets", type=_ints, help="target counts taken from the scenario's list")

    c = sub.add_parser("compare-spda", parents=[common], help="continuous vs half-wavelength discrete array")
    c.add_argument("--area", type=float, help="square aperture area [m^2] (test fidelity: 0.25, otherwise the scenario apertures)")

    r = sub.add_parser("robustness", parents=[common], help="CRB at truth when designed for offset positions")
    r.add_argument("--offsets", type=_floats, default=[-0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15])
    r.add_argument("--axes", type=_strs, default=["x", "y", "z"])
    r.add_argument("--target", type=int, default=0, help="index of the perturbed target")

    b = sub.add_parser("beam-pattern", parents=[common], help="pathloss-free beam pattern of the optimized current")
    b.add_argument("--nx", type=int, default=141)
    b.add_argument("--nz", type=int, default=90)
    b.add_argument("--x-range", type=_floats, default=[-7.0, 7.0])
    b.add_argument("--z-range", type=_floats, default=[0.1, 9.0])
    return p


def _scenario(args):
    """Scenario plus the GL order it pins (None when the config leaves it to the fidelity)."""
    base = scenario_from_table1()
    if args.config is None:
        return base, None
    cfg = load_config(args.config)
    cfg = cfg.get("scenario", cfg)
    s = scenario_from_dict(cfg, base)
    pinned = any(k in cfg for k in ("gl_points", "gl_points_x", "gl_points_y"))
    return s, (s.quad_points_x if pinned else None)


def _with_area(s, area):
    return s.with_apertures(*square_apertures(area))


def run(args) -> tuple[ex.Table, dict]:
    s, pinned = _scenario(args)
    n = args.gl_points or pinned or ex.FIDELITY_GL_POINTS[args.fidelity]
    kind = args.kind
    extra = {}
    if kind == "gl-convergence":
        params = dict(points=args.points)
        table = ex.run_gl_convergence(s, args.points, args.seed)
    elif kind == "optimize":
        params = dict(rules=args.rules, starts=args.starts, max_iter=args.max_iter)
        table, w, obj = ex.run_optimize(s, n, args.rules, args.starts, args.seed, args.max_iter)
        extra["weights"] = w
        extra["objective"] = obj
    elif kind == "crb-map":
        nx = args.nx or 20
        nz = args.nz or 20
        params = dict(nx=nx, nz=nz, x_range=args.x_range, z_range=args.z_range, mode=args.mode)
        table = ex.run_crb_map(s, n, nx, nz, tuple(args.x_range), tuple(args.z_range), args.mode, args.workers)
    elif kind == "mle-spectrum":
        if args.area:
            s = _with_area(s, args.area)
        params = dict(axes=args.axes, half_width=args.half_width, step=args.step, policy=args.policy,
                      noiseless=args.noiseless, area=args.area)
        table = ex.run_mle_spectrum(s, n, args.axes, args.half_width, args.step, args.policy, args.seed,
                                    args.noiseless)
    elif kind == "nmse-step":
        params = dict(steps=args.steps, trials=args.trials, half_width=args.half_width, grid_offset=args.grid_offset)
        table = ex.run_nmse_step(s, n, args.steps, args.trials, args.seed, args.half_width, args.grid_offset)
    elif kind == "sweep-power":
        params = dict(powers=args.powers, frequencies=args.frequencies, targets=args.targets)
        table = ex.run_sweeps(s, n, args.powers, args.frequencies, args.targets, (args.seed,), args.workers)
    elif kind == "sweep-frequency":
        params = dict(frequencies=args.frequencies, targets=args.targets)
        table = ex.run_sweeps(s, n, (s.power_budget_A2 * 1e6,), args.frequencies, args.targets, (args.seed,),
                              args.workers)
    elif kind == "compare-spda":
        area = args.area if args.area else (0.25 if args.fidelity == "test" else None)
        if area:
            s = _with_area(s, area)
        params = dict(area=area)
        table = ex.run_compare_spda(s, n, (args.seed, args.seed + 1))
    elif kind == "robustness":
        params = dict(offsets=args.offsets, axes=args.axes, target=args.target)
        table = ex.run_robustness(s, n, args.offsets, args.axes, args.target, (args.seed,), args.workers)
    elif kind == "beam-pattern":
        params = dict(nx=args.nx, nz=args.nz, x_range=args.x_range, z_range=args.z_range)
        table = ex.run_beam_pattern(s, n, args.nx, args.nz, tuple(args.x_range), tuple(args.z_range), args.seed)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(kind)
    payload = ex.experiment_payload(kind, s, gl_points=n, seed=args.seed, fidelity=args.fidelity, **params)
    extra["hash"] = ex.config_hash(payload)
    return table, extra


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or Path(f"{args.kind}.csv")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NearFieldWarning)
            table, extra = run(args)
    except (UnidentifiableError, SingularityError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"capa-crb {args.kind}: error: {exc}", file=sys.stderr)
        return 2
    out.parent.mkdir(parents=True, exist_ok=True)
    comment = f"config_sha256={extra['hash']} experiment={args.kind} seed={args.seed}"
    ex.write_table_csv(out, table, comment)
    written = [out]
    if "weights" in extra:
        wpath = out.with_name(out.stem + "_w.csv")
        write_weights_csv(wpath, extra["weights"])
        written.append(wpath)
    if not args.no_plot:
        from .plotting import render

        fig = out.with_suffix(".png")
        render(args.kind, table, fig)
        written.append(fig)
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
