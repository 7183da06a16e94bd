"""Command-line front end: run the benchmark and write its data series as CSV.

Exit codes: 0 stop predicate reached (or oracle checks passed), 1 solver
failure or failed oracle check, 2 initialization failure, 3 step budget
exhausted before the stop predicate, 64 invalid configuration.
"""

import csv
import json
import logging
import os
import sys
import tempfile

import numpy as np

from .config import ConfigError, parse_config
from .errors import ConvergenceError, SolverError
from .mpc import initialize_U0, simulate_closed_loop
from .sphere import SphereModel, plant_step, seed_guess, stop_predicate

EXIT_OK, EXIT_SOLVER, EXIT_INIT, EXIT_BUDGET, EXIT_USAGE = 0, 1, 2, 3, 64

log = logging.getLogger("lsmpc")


def _fmt(v):
    return format(float(v), ".17g")


def write_csv(path, header, rows):
    """Write atomically: a temporary file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def series(simlog, params):
    """CSV tables keyed by file name: (header, rows)."""
    recs = simlog.records
    lo, hi = params.c - params.r, params.c + params.r
    return {
        "trajectory.csv": (
            ["step", "t", "x", "y", "z"],
            [[r.step, _fmt(r.t), *map(_fmt, r.x)] for r in recs],
        ),
        "control.csv": (
            ["step", "t", "u", "u_lo", "u_hi"],
            [[r.step, _fmt(r.t), _fmt(r.u), _fmt(lo), _fmt(hi)] for r in recs],
        ),
        "gmres.csv": (
            ["step", "iters", "final_relres"],
            [[r.step, r.gmres_iterations, _fmt(r.gmres_relres)] for r in recs],
        ),
        "residual.csv": (
            ["step", "f_norm2"],
            [[r.step, _fmt(r.f_norm)] for r in recs],
        ),
    }


def write_outputs(cfg, simlog, params):
    os.makedirs(cfg.out, exist_ok=True)
    wanted = {
        "trajectory.csv": cfg.emit_trajectory,
        "control.csv": cfg.emit_control,
        "gmres.csv": cfg.emit_gmres,
        "residual.csv": cfg.emit_residual,
    }
    written = []
    for name, (header, rows) in series(simlog, params).items():
        if wanted[name]:
            path = os.path.join(cfg.out, name)
            write_csv(path, header, rows)
            written.append(path)
    return written


def initialize(cfg, model):
    x0 = np.asarray(cfg.x0, dtype=float)
    return initialize_U0(model, seed_guess(model.params), x0, 0.0, tol=cfg.init_tol, h=cfg.h)


def run_simulation(cfg):
    """Initialize, run the closed loop and write the CSV files; returns an exit code."""
    params = cfg.sphere_params()
    model = SphereModel(params)
    try:
        U0 = initialize(cfg, model)
    except ConvergenceError as exc:
        print(f"initialization failed: {exc}", file=sys.stderr)
        print("residual history (|F|_2 per Newton step):", file=sys.stderr)
        for k, v in enumerate(exc.history):
            print(f"  {k}: {v:.6e}", file=sys.stderr)
        return EXIT_INIT
    except SolverError as exc:
        print(f"initialization failed: {exc}", file=sys.stderr)
        return EXIT_INIT
    log.info("initialized: p = %.6f", U0[-1])
    try:
        simlog = simulate_closed_loop(
            model,
            U0,
            np.asarray(cfg.x0, dtype=float),
            0.0,
            cfg.mpc_config(),
            plant_step,
            model.first_control,
            stop_predicate(params, cfg.stop_tol),
        )
    except (SolverError, np.linalg.LinAlgError) as exc:
        print(f"closed loop failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for path in write_outputs(cfg, simlog, params):
        log.info("wrote %s", path)
    err = np.linalg.norm(simlog.final_state - np.asarray(params.x_f))
    log.info("%d steps, |x - xf| = %.3e, stagnated GMRES steps: %d", len(simlog), err, len(simlog.stagnated_steps))
    if not simlog.stopped:
        print(f"step budget of {cfg.steps} exhausted before the stop predicate", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def run_checks(cfg):
    from .checks import run_oracle_checks

    params = cfg.sphere_params()
    try:
        U0 = initialize(cfg, SphereModel(params))
    except SolverError as exc:
        print(f"initialization failed: {exc}", file=sys.stderr)
        return EXIT_INIT
    report = run_oracle_checks(params, cfg.mpc_config(), seed=cfg.seed, U0=U0)
    text = json.dumps(report, indent=2)
    print(text)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        path = os.path.join(cfg.out, "oracle_report.json")
        with open(path + ".tmp", "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        os.replace(path + ".tmp", path)
    return EXIT_OK if report["passed"] else EXIT_SOLVER


def main(argv=None):
    try:
        cfg, ns = parse_config(argv)
    except (ConfigError, OSError) as exc:
        print(f"lsmpc: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(message)s")
    if ns.print_config:
        print("\n".join(cfg.lines()))
        return EXIT_OK
    if cfg.oracle_check:
        return run_checks(cfg)
    return run_simulation(cfg)


if __name__ == "__main__":
    sys.exit(main())
