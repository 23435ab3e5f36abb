"""``ph-shape`` command line.

Subcommands (all take ``--config <file>``)::

    synth      synthesize the controller package into --out
    check      verify the package in --out (residuals, skewness, dual path)
    simulate   simulate the package, write trajectory.csv and summary.json
    export     write plot-ready CSVs (added mass, V_m, V_d grid, time series)

``check``, ``simulate`` and ``export`` synthesize the package first when --out
does not contain one yet.  Exit codes: 0 ok, 1 config error, 2 package error
(unreadable package or failed verification), 3 domain exit.  Set
``PH_SHAPE_LOG`` to error, warn, info or debug.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys as _sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import load_config
from .exceptions import (
    ConfigError,
    DomainBoundaryError,
    DomainError,
    PackageError,
    PhShapeError,
    SingularMatrixError,
)
from .matching import eval_Vd
from .package import ENVELOPE, load_package, save_package
from .sim import Trajectory, write_csv

log = logging.getLogger("ph_shape")

EXIT_OK, EXIT_CONFIG, EXIT_PACKAGE, EXIT_DOMAIN = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

TRAJECTORY_CSV = "trajectory.csv"
SUMMARY_JSON = "summary.json"
SYNTH_JSON = "synth_report.json"
CHECK_JSON = "check_report.json"
EXPORT_FILES = {
    "mass": "fig_added_mass.csv",
    "vm": "fig_shaped_potential.csv",
    "vd": "fig_closed_loop_potential_grid.csv",
    "sim": "fig_simulation.csv",
}
VD_HALF_WIDTH = 0.3
VD_POINTS = 61
LOG_FLOOR = 1e-12


def configure_logging(env=None):
    env = os.environ if env is None else env
    name = env.get("PH_SHAPE_LOG", "warn").strip().lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    if level is None:
        log.warning("PH_SHAPE_LOG=%r not recognised; using 'warn'", name)


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=float)
        fh.write("\n")


def _out_dir(args, cfg_path):
    return Path(args.out) if args.out else Path("ph_shape_out") / Path(cfg_path).stem


def _synth(cfg, out):
    ctrl, info = pipeline.synthesize(cfg)
    report = pipeline.check_mass_table(ctrl.sys, ctrl.mass_table)
    info["ke_residual_nodes"] = report.checks[0].value
    info["ke_residual_interpolated"] = report.checks[1].value
    info["pe_residual_nodes"] = pipeline.pe_node_residual(ctrl)
    save_package(ctrl, out, extra={"config": cfg.model_dump(mode="json")})
    _dump_json(out / SYNTH_JSON, info)
    return ctrl, info


def _package(cfg, out):
    """Load the package in ``out``, synthesizing it first if there is none."""
    if not (out / ENVELOPE).exists():
        log.info("no package in %s; synthesizing", out)
        ctrl, _ = _synth(cfg, out)
        return ctrl
    return load_package(out)


def cmd_synth(cfg, out, args):
    ctrl, info = _synth(cfg, out)
    lo, hi = info["domain"]
    print(f"system: {ctrl.sys.name}")
    print(f"domain: [{lo:.8f}, {hi:.8f}]  table range: [{info['table_range'][0]:.6f}, {info['table_range'][1]:.6f}]"
          f"  nodes: {info['nodes']}")
    print(f"lambda_min range: [{info['lambda_min_range'][0]:.10g}, {info['lambda_min_range'][1]:.10g}]")
    s = info["s_at_init"]
    print(f"s1, s2, s3 at q_i={s['q_i']:g}: {s['s1']}, {s['s2']}, {s['s3']}")
    print(f"max KE residual: nodes {info['ke_residual_nodes']:.3e}, interpolated {info['ke_residual_interpolated']:.3e}")
    print(f"max PE residual: {info['pe_residual_nodes']:.3e}")
    if "md_inv_max_deviation" in info:
        print(f"constant M_d^-1 recovery: max deviation {info['md_inv_max_deviation']:.3e}")
    if "warning" in info:
        print(f"WARNING: {info['warning']}")
    print(f"package written to {out}")
    return EXIT_OK


def cmd_check(cfg, out, args):
    ctrl = _package(cfg, out)
    report = pipeline.check_controller(ctrl)
    for c in report.checks:
        print(c.line())
    lam = report.info["lambda_min_range"]
    print(f"lambda_min profile: [{lam[0]:.10g}, {lam[1]:.10g}]")
    _dump_json(out / CHECK_JSON, report.as_dict())
    print("all checks passed" if report.passed else "verification FAILED")
    return EXIT_OK if report.passed else EXIT_PACKAGE


def cmd_simulate(cfg, out, args):
    ctrl = _package(cfg, out)
    traj = pipeline.run_simulation(ctrl, cfg, mode=args.mode)
    traj.to_csv(out / TRAJECTORY_CSV)
    summary = pipeline.summarize(traj, ctrl)
    _dump_json(out / SUMMARY_JSON, summary)
    for key, val in summary.items():
        print(f"{key}: {val}")
    if traj.status == "domain_exit":
        print(f"domain exit: truncated trajectory written to {out / TRAJECTORY_CSV}")
        return EXIT_DOMAIN
    return EXIT_OK if traj.success else EXIT_DOMAIN


def vd_grid(ctrl, half_width=VD_HALF_WIDTH, points=VD_POINTS):
    """``(q1, q2, V_d, log10(V_d - min V_d + floor))`` rows on a square grid around the origin."""
    axis = np.linspace(-half_width, half_width, points)
    rows = []
    for a in axis:
        for b in axis:
            q = np.array([a, b])
            vd = eval_Vd(ctrl.potential, q)[0] if ctrl.contains(q) else np.nan
            rows.append((a, b, vd))
    rows = np.array(rows)
    vmin = np.nanmin(rows[:, 2])
    logv = np.log10(rows[:, 2] - vmin + LOG_FLOOR)
    return np.column_stack([rows, logv])


def export_tables(ctrl, out, traj):
    """Write the four plot-data CSVs and return their paths."""
    table, pot = ctrl.mass_table, ctrl.potential
    n, m = table.n, table.m
    paths = {k: out / v for k, v in EXPORT_FILES.items()}
    cols = ["q_i"]
    mats = []
    for name, (rs, cs) in {"m_a11": (slice(0, m), slice(0, m)), "m_a21": (slice(m, n), slice(0, m)),
                           "m_a22": (slice(m, n), slice(m, n))}.items():
        blk = table.ma[:, rs, cs].reshape(table.grid.size, -1)
        cols += [name] if blk.shape[1] == 1 else [f"{name}_{j + 1}" for j in range(blk.shape[1])]
        mats.append(blk)
    write_csv(paths["mass"], cols + ["lambda_min"],
              np.column_stack([table.grid] + mats + [table.lambda_min]))
    vm_cols = ["V_m"] if pot.kind == "single" else ["f1", "f2"]
    write_csv(paths["vm"], ["q_i"] + vm_cols, np.column_stack([pot.table.x, pot.table.y.reshape(pot.table.x.size, -1)]))
    if n == 2:
        write_csv(paths["vd"], ["q1", "q2", "V_d", "log10_V_d"], vd_grid(ctrl))
    else:
        paths.pop("vd")
    k = traj.n
    header = ["t"] + [f"q{i + 1}" for i in range(k)] + [f"p{i + 1}" for i in range(k)] + ["H_d"]
    body = np.column_stack([traj.t, traj.q, traj.p, traj.H_d]) if len(traj) else np.empty((0, len(header)))
    write_csv(paths["sim"], header, body)
    return paths


def cmd_export(cfg, out, args):
    ctrl = _package(cfg, out)
    tpath = Path(args.trajectory) if args.trajectory else out / TRAJECTORY_CSV
    if tpath.exists():
        try:
            traj = Trajectory.from_csv(tpath)
        except (OSError, ValueError, IndexError) as exc:
            raise PackageError(f"cannot read trajectory {tpath}: {exc}") from exc
    else:
        log.info("no trajectory at %s; simulating", tpath)
        traj = pipeline.run_simulation(ctrl, cfg, mode=args.mode)
        traj.to_csv(out / TRAJECTORY_CSV)
    for key, path in export_tables(ctrl, out, traj).items():
        print(f"{key}: {path}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "check": cmd_check, "simulate": cmd_simulate, "export": cmd_export}


def build_parser():
    p = argparse.ArgumentParser(prog="ph-shape", description="Total energy shaping for underactuated mechanical systems.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__name__.replace("cmd_", ""))
        sp.add_argument("--config", required=True, help="run configuration (JSON)")
        sp.add_argument("--mode", choices=("reduced", "interconnected"), default=None,
                        help="simulation mode (default: from config)")
        sp.add_argument("--out", default=None, help="package/output directory")
        if name == "export":
            sp.add_argument("--trajectory", default=None, help="trajectory CSV to export (default: <out>/trajectory.csv)")
    return p


def main(argv=None):
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = _out_dir(args, args.config)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except PackageError as exc:
        print(f"package error: {exc}", file=_sys.stderr)
        return EXIT_PACKAGE
    except (DomainError, DomainBoundaryError, SingularMatrixError) as exc:
        print(f"domain error: {exc}", file=_sys.stderr)
        return EXIT_DOMAIN
    except PhShapeError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=_sys.stderr)
        return EXIT_PACKAGE


if __name__ == "__main__":
    raise SystemExit(main())
