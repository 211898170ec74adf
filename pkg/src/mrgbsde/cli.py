"""Command line entry point.

    mrgbsde solve    scenario.json [--out DIR]
    mrgbsde study    scenario.json --levels 50,100,200 [--out FILE]
    mrgbsde validate scenario.json

Exit codes: 0 ok, 2 validation failure, 3 solver failure, 4 residual
contract failure.  On failure a JSON error report goes to stdout (and to
``error.json`` in the output directory for ``solve``).  The log level is
read from ``MRGBSDE_LOG_LEVEL`` (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import (
    AssumptionViolated,
    InputError,
    MaxIterExceeded,
    MrgbsdeError,
    ParseError,
    SchemaError,
)
from .runner import EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION, convergence_study, run_scenario
from .scenario import load_scenario

LOG_ENV = "MRGBSDE_LOG_LEVEL"

_VALIDATION = (SchemaError, ParseError, AssumptionViolated, InputError)


def error_report(exc: BaseException) -> dict:
    rep = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, _VALIDATION) or isinstance(exc, OSError):
        rep["exit_code"] = EXIT_VALIDATION
    else:
        rep["exit_code"] = EXIT_SOLVER
    if isinstance(exc, SchemaError):
        rep["path"] = exc.path
    if isinstance(exc, ParseError):
        rep["expression"] = exc.expression
        rep["location"] = exc.location
    if isinstance(exc, AssumptionViolated):
        rep["assumption"] = exc.assumption
        if exc.value is not None:
            rep["value"] = exc.value
    if isinstance(exc, MaxIterExceeded) and exc.trace is not None:
        rep["trace"] = exc.trace.to_dict()
    return rep


def _fail(exc, out_dir=None) -> int:
    rep = error_report(exc)
    text = json.dumps(rep, indent=2)
    print(text)
    if out_dir is not None:
        try:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "error.json"), "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        except OSError:
            pass
    return rep["exit_code"]


def _levels(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"bad --levels value {text!r}; expected e.g. 50,100,200") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrgbsde",
                                description="Mean-reflected G-BSDE lattice solver")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a scenario and write reports")
    s.add_argument("scenario")
    s.add_argument("--out", default=None, help="output directory (default: from scenario)")

    st = sub.add_parser("study", help="convergence study over several n_steps")
    st.add_argument("scenario")
    st.add_argument("--levels", required=True, help="comma separated n_steps, e.g. 50,100,200")
    st.add_argument("--out", default=None, help="CSV path (default: <output dir>/study.csv)")

    v = sub.add_parser("validate", help="check a scenario without solving")
    v.add_argument("scenario")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    out_dir = getattr(args, "out", None) if args.command == "solve" else None
    try:
        scn = load_scenario(args.scenario)
    except (MrgbsdeError, OSError) as exc:
        return _fail(exc, out_dir)

    if args.command == "validate":
        print(json.dumps({"valid": True, "diagnostics": scn.diagnostics}, indent=2))
        return EXIT_OK

    if args.command == "solve":
        out_dir = out_dir or scn.output_dir
        try:
            res = run_scenario(scn, out_dir)
        except MrgbsdeError as exc:
            return _fail(exc, out_dir)
        s = res.summary
        print(json.dumps({"y0": s["y0"], "r_terminal": s["r_terminal"],
                          "contracts": s["contracts"]["checks"], "exit_code": res.exit_code,
                          "out": out_dir}, indent=2))
        return res.exit_code

    try:
        levels = _levels(args.levels)
        out = args.out or os.path.join(scn.output_dir, "study.csv")
        rows = convergence_study(scn, levels, out)
    except MrgbsdeError as exc:
        return _fail(exc)
    print(json.dumps({"out": out, "levels": [r["n_steps"] for r in rows],
                      "y0": [r["y0"] for r in rows]}, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
