"""Solve orchestration and report writing."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .picard import MrSolution, solve_full
from .reflection import flatness_increments
from .scenario import Scenario, check_assumptions

logger = logging.getLogger(__name__)

__all__ = ["RunResult", "solve_scenario", "run_scenario", "write_reports", "convergence_study",
           "contract_checks", "EXIT_OK", "EXIT_VALIDATION", "EXIT_SOLVER", "EXIT_CONTRACT"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_CONTRACT = 4

CONSTRAINT_TOL = 1e-8
FLATNESS_TOL = 1e-6
K_EDGE_TOL = 1e-8
K_MARTINGALE_FACTOR = 5.0

FMT = "%.17g"


@dataclass
class RunResult:
    scenario: Scenario
    solution: MrSolution
    summary: dict
    exit_code: int
    files: dict = field(default_factory=dict)


def contract_checks(sol: MrSolution, grid, band) -> dict:
    """Residual contracts of a converged solve; ``passed`` is their conjunction."""
    r_t = sol.r_terminal
    flat_tol = FLATNESS_TOL * (1.0 + float(np.linalg.norm(r_t)))
    reports = sol.k_reports(grid, band)
    edge = max(r.max_edge_increment for r in reports)
    mart = max(r.martingale_residual for r in reports)
    checks = {
        "constraint": sol.max_constraint() <= CONSTRAINT_TOL,
        "flatness": abs(sol.flatness_residual) <= flat_tol,
        "k_edge": edge <= K_EDGE_TOL,
        "k_martingale": mart <= K_MARTINGALE_FACTOR * grid.dt,
    }
    return {
        "checks": checks,
        "passed": all(checks.values()),
        "k_reports": [
            {"max_edge_increment": r.max_edge_increment,
             "martingale_residual": r.martingale_residual,
             "max_defect": r.max_defect}
            for r in reports
        ],
    }


def solve_scenario(scn: Scenario):
    """Run the full solve; returns ``(solution, grid, band, seconds)``."""
    if scn.diagnostics is None:
        scn.diagnostics = check_assumptions(scn)
    band = scn.band()
    grid = scn.grid()
    backend = scn.backend(grid, band)
    t0 = time.perf_counter()
    sol = solve_full(scn.terminal_fields(grid), scn.generator(), scn.weights(), grid, band,
                     scn.picard, backend=backend)
    return sol, grid, band, time.perf_counter() - t0


def _summary(scn, sol, grid, band, seconds) -> dict:
    contracts = contract_checks(sol, grid, band)
    leaves = [leaf for t in sol.traces for leaf in t.leaves()]
    return {
        "y0": sol.y0.tolist(),
        "r_terminal": sol.r_terminal.tolist(),
        "r_norm_terminal": float(sol.r.r_norm[-1]),
        "max_constraint": sol.max_constraint(),
        "flatness_residual": sol.flatness_residual,
        "contracts": contracts,
        "windows": [list(w) for w in sol.windows],
        "iterations": [leaf.iterations for leaf in leaves],
        "max_ratio": max((t.max_ratio() for t in sol.traces), default=0.0),
        "traces": [t.to_dict() for t in sol.traces],
        "diagnostics": scn.diagnostics,
        "timings": {
            "solve_seconds": seconds,
            "picard_seconds": sum(sum(leaf.seconds) for leaf in leaves),
        },
        "scenario": scn.to_dict(),
    }


def write_reports(sol: MrSolution, grid, summary: dict, out_dir) -> dict:
    """Write ``solution.csv``, ``deterministic.csv`` and ``summary.json``."""
    os.makedirs(out_dir, exist_ok=True)
    n = sol.n_components
    blocks = []
    for j in range(len(sol.y[0])):
        k = sol.start + j
        x = grid.positions(k)
        t = np.full(x.size, grid.time(k))
        for l in range(n):
            blocks.append(np.column_stack([
                t, x, np.full(x.size, l + 1.0), sol.y[l][j], sol.z[l][j], sol.k[l][j],
            ]))
    sol_path = os.path.join(out_dir, "solution.csv")
    np.savetxt(sol_path, np.vstack(blocks), fmt=FMT, delimiter=",",
               header="t,x,component,Y,Z,K", comments="")

    n_sl = len(sol.y[0])
    times = grid.times[sol.start:sol.start + n_sl]
    incr = np.append(flatness_increments(sol.constraint_path, sol.r.r_norm), 0.0)
    det = np.column_stack([times, sol.r.r, sol.r.r_norm, sol.constraint_path, incr])
    header = ",".join(["t"] + [f"R_{l + 1}" for l in range(n)]
                      + ["R_norm", "constraint", "flatness_increment"])
    det_path = os.path.join(out_dir, "deterministic.csv")
    np.savetxt(det_path, det, fmt=FMT, delimiter=",", header=header, comments="")

    sum_path = os.path.join(out_dir, "summary.json")
    with open(sum_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, allow_nan=True)
        fh.write("\n")
    return {"solution": sol_path, "deterministic": det_path, "summary": sum_path}


def run_scenario(scn: Scenario, out_dir=None) -> RunResult:
    """Solve ``scn`` and write the three report files to ``out_dir``.

    The exit code is :data:`EXIT_OK` when every residual contract holds and
    :data:`EXIT_CONTRACT` otherwise; solver errors propagate.
    """
    out_dir = scn.output_dir if out_dir is None else out_dir
    sol, grid, band, seconds = solve_scenario(scn)
    summary = _summary(scn, sol, grid, band, seconds)
    files = write_reports(sol, grid, summary, out_dir)
    code = EXIT_OK if summary["contracts"]["passed"] else EXIT_CONTRACT
    if code:
        failed = [k for k, v in summary["contracts"]["checks"].items() if not v]
        logger.error("residual contracts failed: %s", ", ".join(failed))
    return RunResult(scenario=scn, solution=sol, summary=summary, exit_code=code, files=files)


def _order(prev, cur):
    if prev is None or cur is None or prev <= 0 or cur <= 0:
        return None
    return math.log2(prev / cur)


def convergence_study(scn: Scenario, levels, out_path=None) -> list:
    """Solve ``scn`` at each ``n_steps`` in ``levels``.

    Rows hold ``Y_0`` per component, the successive differences
    ``d = |Y_0(n) - Y_0(previous n)|``, the order estimate
    ``log2(d_previous / d)`` and the largest Picard ratio at that level.
    Written as CSV when ``out_path`` is given.
    """
    levels = [int(v) for v in levels]
    if len(levels) < 2:
        raise InputError("a convergence study needs at least two levels")
    if any(v < 1 for v in levels):
        raise InputError(f"levels must be positive, got {levels}")
    n = scn.dimension
    rows = []
    prev_y = prev_d = None
    for level in levels:
        sub = scn.with_steps(level)
        sol, _, _, seconds = solve_scenario(sub)
        y0 = sol.y0
        d = None if prev_y is None else np.abs(y0 - prev_y)
        orders = [None] * n
        if d is not None and prev_d is not None:
            orders = [_order(prev_d[l], d[l]) for l in range(n)]
        rows.append({
            "n_steps": level,
            "y0": y0.tolist(),
            "diff": None if d is None else d.tolist(),
            "order": orders,
            "max_ratio": max((t.max_ratio() for t in sol.traces), default=0.0),
            "iterations": sum(leaf.iterations for t in sol.traces for leaf in t.leaves()),
            "seconds": seconds,
        })
        prev_y, prev_d = y0, d
    if out_path is not None:
        _write_study(rows, n, out_path)
    return rows


def _fmt(v) -> str:
    return "" if v is None else FMT % v


def _write_study(rows, n, out_path):
    d = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(d, exist_ok=True)
    header = (["n_steps"] + [f"Y0_{l + 1}" for l in range(n)] + [f"diff_{l + 1}" for l in range(n)]
              + [f"order_{l + 1}" for l in range(n)] + ["max_picard_ratio", "picard_iterations"])
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            diff = r["diff"] or [None] * n
            w.writerow([r["n_steps"]] + [_fmt(v) for v in r["y0"]] + [_fmt(v) for v in diff]
                       + [_fmt(v) for v in r["order"]] + [_fmt(r["max_ratio"]), r["iterations"]])
