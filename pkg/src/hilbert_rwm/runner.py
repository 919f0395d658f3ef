"""Run an experiment and write its artefacts to an output directory.

Everything is written to a sibling temporary directory first and renamed
into place at the end, so a crashed run never leaves a half-written output.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import shutil
import tempfile
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, calibration_hash, load_calibration
from .experiments import EXPERIMENT_FUNCS, Outcome, Table, resolve_ells
from .kernel import ChainResult
from .spde import beta_of_ell, h_of_ell, optimal_ell

log = logging.getLogger(__name__)

EXIT_OK, EXIT_RUNTIME, EXIT_BREACH = 0, 1, 2
THREADS_ENV = "HILBERT_RWM_THREADS"


def _fmt(v) -> str:
    if isinstance(v, bool) or isinstance(v, np.bool_):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, table: Table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def text_table(table: Table) -> str:
    """Aligned plain-text rendering of a table."""
    cells = [table.columns] + [[_short(v) for v in r] for r in table.rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(table.columns))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _short(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return _fmt(v)


def export_step_records(path, result: ChainResult) -> None:
    """``step,q,accepted,proposal_norm_s`` rows, one per chain step."""
    t = Table(["step", "q", "accepted", "proposal_norm_s"],
              [[k + 1, q, bool(a), n] for k, (q, a, n) in
               enumerate(zip(result.q, result.accepted, result.proposal_norm_s))])
    write_csv(path, t)


def export_snapshots(path, result: ChainResult) -> None:
    """Stored snapshots as a matrix: one row per stored step, one column per mode."""
    snaps = np.asarray(result.snapshots)
    stride = result.snapshot_stride or 1
    cols = ["step"] + [f"x{j}" for j in range(1, snaps.shape[1] + 1)]
    write_csv(path, Table(cols, [[k * stride, *row] for k, row in enumerate(snaps)]))


def h_curve_table(ell_max: float = 5.0, step: float = 0.05) -> Table:
    star = optimal_ell()
    grid = [round(step * k, 10) for k in range(1, int(round(ell_max / step)) + 1)]
    grid = sorted(set(grid) | {star.ell})
    return Table(["ell", "beta", "h", "is_argmax"],
                 [[e, beta_of_ell(e), h_of_ell(e), e == star.ell] for e in grid])


def emit_plot_data(outcome: Outcome, directory) -> list[str]:
    """Write plot-ready CSVs for the outcome; returns the file names written."""
    d = Path(directory)
    written = []

    def put(name, table):
        if table.rows:
            write_csv(d / name, table)
            written.append(name)

    put("plot_h_curve.csv", h_curve_table())
    if "acceptance" in outcome.tables:
        t = outcome.tables["acceptance"]
        rows = sorted(t.rows, key=lambda r: (r[0], r[1]))
        put("plot_acceptance_curves.csv",
            Table(["N", "ell", "accept_rate", "beta_theory", "se"],
                  [[r[0], r[1], r[3], r[2], r[4]] for r in rows]))
    if "distances" in outcome.tables:
        t = outcome.tables["distances"]
        rows = sorted(t.rows, key=lambda r: (r[0], r[1]))
        put("plot_ks_vs_N.csv", Table(["N", "functional", "ks", "wasserstein1"],
                                      [[r[0], r[1], r[2], r[3]] for r in rows]))
    if "drift_diffusion" in outcome.reports:
        per = sorted(outcome.reports["drift_diffusion"]["per_N"], key=lambda s: s["N"])
        put("plot_drift_residual_vs_N.csv",
            Table(["N", "mean_relative_residual", "mean_r_N_norm_s", "max_mean_abs_E"],
                  [[s["N"], s["mean_relative_residual"], s["mean_r_N_norm_s"],
                    s["max_mean_abs_E"]] for s in per]))
    return written


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValueError(f"{THREADS_ENV}={env!r} is not an integer") from None
    threads = threads or 1
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return threads


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None,
                   threads: Optional[int] = None, out: Optional[str] = None) -> int:
    """Run ``cfg`` and write artefacts; returns 0, 2 on a threshold breach, 1 on error.

    ``seed`` and ``out`` override the config file.  Results do not depend on
    ``threads``.
    """
    try:
        threads = resolve_threads(threads)
        if seed is not None:
            cfg = replace(cfg, master_seed=int(seed))
        out_dir = Path(out or cfg.output_dir)
        out_dir.parent.mkdir(parents=True, exist_ok=True)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME

    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        t0 = time.perf_counter()
        started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        cal = load_calibration()
        ells = resolve_ells(cfg)
        outcome = EXPERIMENT_FUNCS[cfg.experiment](cfg, cal, threads)
        wall = time.perf_counter() - t0

        for name, table in outcome.tables.items():
            write_csv(tmp / f"{name}.csv", table)
        plots = emit_plot_data(outcome, tmp)
        for name, rep in outcome.reports.items():
            write_json(tmp / f"{name}.json", rep)
        checks = [{"name": c.name, "passed": c.passed, "detail": c.detail}
                  for c in outcome.checks]
        write_json(tmp / "checks.json", checks)
        report = [f"experiment: {cfg.experiment}", ""]
        for name, table in outcome.tables.items():
            report += [f"== {name} ==", text_table(table)]
        report += ["== checks =="] + [c.line() for c in outcome.checks]
        (tmp / "report.txt").write_text("\n".join(report) + "\n", encoding="utf-8")

        status = EXIT_OK if outcome.passed else EXIT_BREACH
        manifest = {
            "experiment": cfg.experiment,
            "config": cfg.to_dict(),
            "config_hash": cfg.config_hash(),
            "calibration_hash": calibration_hash(),
            "resolved_ell_grid": ells,
            "optimal_ell": optimal_ell().ell if "optimal" in cfg.ell_grid else None,
            "master_seed": cfg.master_seed,
            "rng": {
                "bit_generator": "Philox",
                "derivation": "SeedSequence(master_seed, spawn_key=(cell, replica, role))",
                "roles": {"init": 0, "noise": 1, "accept": 2, "inner": 3, "reference": 4},
                "cells": outcome.cells,
            },
            "threads": threads,
            "software": {"hilbert_rwm": __version__, "numpy": np.__version__},
            "started_at": started,
            "wall_clock_seconds": wall,
            "files": sorted([f"{n}.csv" for n in outcome.tables] + plots
                            + [f"{n}.json" for n in outcome.reports]
                            + ["checks.json", "report.txt"]),
            "exit_status": status,
        }
        write_json(tmp / "manifest.json", manifest)

        if out_dir.exists():
            # only replace a previous run's output, never an arbitrary directory
            if not (out_dir / "manifest.json").exists() and any(out_dir.iterdir()):
                raise FileExistsError(f"{out_dir} exists and is not a previous run output")
            shutil.rmtree(out_dir)
        os.replace(tmp, out_dir)
        for c in outcome.checks:
            log.info("%s", c.line())
        return status
    except Exception as exc:  # noqa: BLE001 - reported as exit status 1
        log.error("%s failed: %s: %s", cfg.experiment, type(exc).__name__, exc)
        shutil.rmtree(tmp, ignore_errors=True)
        return EXIT_RUNTIME
