"""Scenario documents: JSON in, validated solver inputs out.

A scenario is a version-1 JSON object::

    {
      "version": 1,
      "horizon": 1.0, "n_steps": 100,
      "band": {"sigma_low": 0.5, "sigma_high": 1.0},
      "theta": [0.5, 0.5],
      "terminal": ["1", "x^2"],          # or one tuple string "(1, x^2)"
      "f": ["-2", "-1 + 0.3*y2"],
      "g": ["0", "0"],                   # optional
      "lipschitz": 0.3,                  # optional, probed when absent
      "expectation": {"variant": "g_expectation"},
      "picard": {"tol": 1e-10, "max_iter": 50, "window_h": "adaptive"},
      "output": {"dir": "out", "format": "csv"},
      "seed": 0
    }

:func:`parse_scenario` checks the layout, parses every expression and then
runs the assumption checks (weights, CFL, terminal constraint, Lipschitz
probe).  Failures carry the JSON path of the offending field.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import jsonschema
import numpy as np

from .dominated import DominatedExpectationSpec, make_backend
from .errors import (
    AssumptionViolated,
    CflViolation,
    InvalidConfig,
    InvalidSpec,
    ParseError,
    SchemaError,
    WindowMisaligned,
)
from .expression import Expression, parse_components, variables_for
from .gbsde import GeneratorSpec
from .lattice import TreeGrid, VolatilityBand
from .picard import PicardConfig, _window_length
from .reflection import Weights

logger = logging.getLogger(__name__)

__all__ = ["Scenario", "parse_scenario", "load_scenario", "from_dict", "check_assumptions", "SCHEMA"]

_EXPR_LIST = {
    "oneOf": [
        {"type": "string"},
        {"type": "array", "items": {"type": "string"}, "minItems": 1},
    ]
}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["version", "horizon", "n_steps", "band", "theta", "terminal", "f"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": 1},
        "horizon": _POS,
        "n_steps": {"type": "integer", "minimum": 1},
        "band": {
            "type": "object",
            "required": ["sigma_low", "sigma_high"],
            "additionalProperties": False,
            "properties": {"sigma_low": _POS, "sigma_high": _POS},
        },
        "dx": _POS,
        "dimension": {"type": "integer", "minimum": 1},
        "theta": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "terminal": _EXPR_LIST,
        "f": _EXPR_LIST,
        "g": _EXPR_LIST,
        "lipschitz": {"type": "number", "minimum": 0},
        "expectation": {
            "type": "object",
            "required": ["variant"],
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": ["g_expectation", "epsilon_mixture"]},
                "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
                "reference_sigma": _POS,
            },
        },
        "picard": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
                "window_h": {"oneOf": [_POS, {"const": "adaptive"}]},
                "beta": {"type": "number", "exclusiveMinimum": 2},
                "c_beta": _POS,
                "adaptive": {"type": "boolean"},
                "ratio_bound": _POS,
                "start_value": {"type": "number"},
                "max_halvings": {"type": "integer", "minimum": 0},
                "terminal_tol": {"type": "number", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "format": {"enum": ["csv"]},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


@dataclass
class Scenario:
    """A validated scenario; compiled expressions are kept alongside the text."""

    horizon: float
    n_steps: int
    sigma_low: float
    sigma_high: float
    theta: tuple
    terminal: tuple
    f: tuple
    g: tuple
    lipschitz: Optional[float] = None
    dx: Optional[float] = None
    expectation: DominatedExpectationSpec = field(default_factory=DominatedExpectationSpec)
    picard: PicardConfig = field(default_factory=PicardConfig)
    output_dir: str = "out"
    output_format: str = "csv"
    seed: int = 0
    compiled: dict = field(default_factory=dict, repr=False, compare=False)
    probed_lipschitz: Optional[float] = field(default=None, repr=False, compare=False)
    diagnostics: Optional[dict] = field(default=None, repr=False, compare=False)

    @property
    def dimension(self) -> int:
        return len(self.theta)

    def band(self) -> VolatilityBand:
        return VolatilityBand(self.sigma_low, self.sigma_high)

    def grid(self) -> TreeGrid:
        return TreeGrid.for_band(self.horizon, self.n_steps, self.band(), self.dx)

    def weights(self) -> Weights:
        return Weights(self.theta)

    def backend(self, grid=None, band=None):
        band = band or self.band()
        return make_backend(self.expectation, grid or self.grid(), band)

    @property
    def effective_lipschitz(self) -> float:
        if self.lipschitz is not None:
            return self.lipschitz
        return self.probed_lipschitz or 0.0

    def generator(self) -> GeneratorSpec:
        self._compile()
        n = self.dimension
        fs = [_driver(e, n) for e in self.compiled["f"]]
        gs = [_driver(e, n) for e in self.compiled["g"]]
        return GeneratorSpec(fs, gs, lipschitz=self.effective_lipschitz)

    def terminal_fields(self, grid=None) -> list:
        self._compile()
        grid = grid or self.grid()
        x = grid.positions(grid.n_steps)
        return [
            np.broadcast_to(np.asarray(e(x=x), dtype=float), x.shape).copy()
            for e in self.compiled["terminal"]
        ]

    def with_steps(self, n_steps: int) -> "Scenario":
        return replace(self, n_steps=int(n_steps), compiled={}, diagnostics=None)

    def _compile(self):
        if self.compiled:
            return
        n = self.dimension
        drv_vars = variables_for(n)
        self.compiled = {
            "terminal": [_one(s, ("x",), f"$.terminal[{i}]") for i, s in enumerate(self.terminal)],
            "f": [_one(s, drv_vars, f"$.f[{i}]") for i, s in enumerate(self.f)],
            "g": [_one(s, drv_vars, f"$.g[{i}]") for i, s in enumerate(self.g)],
        }

    def to_dict(self) -> dict:
        pc = self.picard
        picard = {
            "tol": pc.tol,
            "max_iter": pc.max_iter,
            "window_h": "adaptive" if pc.window_h is None else pc.window_h,
            "beta": pc.beta,
            "c_beta": pc.c_beta,
            "adaptive": pc.adaptive,
            "ratio_bound": pc.ratio_bound,
            "start_value": pc.start_value,
            "max_halvings": pc.max_halvings,
            "terminal_tol": pc.terminal_tol,
        }
        doc = {
            "version": 1,
            "horizon": self.horizon,
            "n_steps": self.n_steps,
            "band": {"sigma_low": self.sigma_low, "sigma_high": self.sigma_high},
            "dimension": self.dimension,
            "theta": list(self.theta),
            "terminal": list(self.terminal),
            "f": list(self.f),
            "g": list(self.g),
            "expectation": self.expectation.to_dict(),
            "picard": picard,
            "output": {"dir": self.output_dir, "format": self.output_format},
            "seed": self.seed,
        }
        if self.lipschitz is not None:
            doc["lipschitz"] = self.lipschitz
        if self.dx is not None:
            doc["dx"] = self.dx
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _driver(expr: Expression, n: int):
    names = [f"y{i}" for i in range(1, n + 1)]

    def drv(t, x, y, z):
        env = {"t": t, "x": x, "z": z}
        for i, name in enumerate(names):
            env[name] = y[i]
        return expr(**env)

    drv.__name__ = f"expr[{expr.source}]"
    return drv


def _one(text, variables, path) -> Expression:
    out = _components(text, variables, path)
    if len(out) != 1:
        raise SchemaError(path, "expected a single expression")
    return out[0]


def _components(text, variables, path) -> list:
    try:
        return parse_components(text, variables)
    except ParseError as exc:
        raise ParseError(exc.expression, exc.location, f"{path}: {exc.message}") from None


def _expr_list(doc, key, n, variables, default=None) -> tuple:
    raw = doc.get(key, default)
    if isinstance(raw, str):
        parts = _components(raw, variables, f"$.{key}")
        if len(parts) == 1 and n > 1:
            raise SchemaError(f"$.{key}", f"one expression given for {n} components")
        items = tuple(p.source for p in parts)
    else:
        items = tuple(raw)
        for i, s in enumerate(items):
            _one(s, variables, f"$.{key}[{i}]")
    if len(items) != n:
        raise SchemaError(f"$.{key}", f"{len(items)} expressions for dimension {n}")
    return items


def _picard_config(block: dict) -> PicardConfig:
    kw = dict(block)
    wh = kw.pop("window_h", "adaptive")
    kw["window_h"] = None if wh == "adaptive" else float(wh)
    for key in ("max_iter", "max_halvings"):
        if key in kw:
            kw[key] = int(kw[key])
    try:
        return PicardConfig(**kw)
    except InvalidConfig as exc:
        raise SchemaError("$.picard", str(exc)) from None


def from_dict(doc) -> Scenario:
    """Build a :class:`Scenario` from a decoded document (layout checks only)."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SchemaError(_path(err.absolute_path), err.message)

    theta = tuple(float(v) for v in doc["theta"])
    n = len(theta)
    if "dimension" in doc and doc["dimension"] != n:
        raise SchemaError("$.dimension", f"dimension {doc['dimension']} but {n} weights")
    drv_vars = variables_for(n)
    terminal = _expr_list(doc, "terminal", n, ("x",))
    f = _expr_list(doc, "f", n, drv_vars)
    g = _expr_list(doc, "g", n, drv_vars, default=["0"] * n)

    exp_block = doc.get("expectation", {"variant": "g_expectation"})
    try:
        expectation = DominatedExpectationSpec(
            variant=exp_block["variant"],
            epsilon=exp_block.get("epsilon"),
            reference_sigma=exp_block.get("reference_sigma"),
        )
    except InvalidSpec as exc:
        raise SchemaError("$.expectation", str(exc)) from None

    band = doc["band"]
    out = doc.get("output", {})
    lip = doc.get("lipschitz")
    return Scenario(
        horizon=float(doc["horizon"]),
        n_steps=int(doc["n_steps"]),
        sigma_low=float(band["sigma_low"]),
        sigma_high=float(band["sigma_high"]),
        theta=theta,
        terminal=terminal,
        f=f,
        g=g,
        lipschitz=None if lip is None else float(lip),
        dx=None if doc.get("dx") is None else float(doc["dx"]),
        expectation=expectation,
        picard=_picard_config(doc.get("picard", {})),
        output_dir=out.get("dir", "out"),
        output_format=out.get("format", "csv"),
        seed=int(doc.get("seed", 0)),
    )


def check_assumptions(scn: Scenario, probes=1000) -> dict:
    """Run the weight, CFL, terminal and Lipschitz checks.

    Returns a small dict of diagnostics (terminal residual, probed Lipschitz
    constant, window length in steps).
    """
    try:
        weights = scn.weights()
    except ValueError as exc:
        raise AssumptionViolated("H_theta", str(exc)) from None
    try:
        band = scn.band()
    except ValueError as exc:
        raise SchemaError("$.band", str(exc)) from None
    try:
        grid = scn.grid()
    except CflViolation as exc:
        raise AssumptionViolated("CFL", str(exc)) from None
    try:
        backend = scn.backend(grid, band)
    except (InvalidSpec, CflViolation) as exc:
        raise SchemaError("$.expectation", str(exc)) from None

    scn._compile()
    try:
        terminal = scn.terminal_fields(grid)
    except ParseError as exc:
        raise ParseError(exc.expression, exc.location, f"$.terminal: {exc.message}") from None
    residual = float(backend.means([-v for v in terminal]) @ weights.array)
    if residual > scn.picard.terminal_tol:
        raise AssumptionViolated(
            "H_xi",
            f"terminal constraint residual {residual:.6g} exceeds {scn.picard.terminal_tol:g}",
            value=residual,
        )

    gen = scn.generator()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            observed = gen.probe_lipschitz(scn.horizon, n_probes=probes, seed=scn.seed,
                                           warn=scn.lipschitz is not None)
        except ParseError as exc:
            raise ParseError(exc.expression, exc.location, f"$.f/$.g: {exc.message}") from None
    for w in caught:
        logger.warning("%s", w.message)
    scn.probed_lipschitz = observed
    lip = scn.effective_lipschitz
    if lip * grid.dt >= 1.0:
        raise AssumptionViolated("H_f", f"L*dt = {lip * grid.dt:.4g} >= 1; increase n_steps")

    gen = scn.generator()
    try:
        m = _window_length(grid, scn.picard, weights, gen)
    except WindowMisaligned as exc:
        raise SchemaError("$.picard.window_h", str(exc)) from None
    return {
        "terminal_residual": residual,
        "lipschitz_declared": scn.lipschitz,
        "lipschitz_probed": observed,
        "lipschitz_warning": bool(caught),
        "window_steps": m,
        "dt": grid.dt,
        "dx": grid.dx,
    }


def parse_scenario(text: str, check=True) -> Scenario:
    """Parse and validate a scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON ({exc.msg} at line {exc.lineno} col {exc.colno})") from None
    scn = from_dict(doc)
    if check:
        scn.diagnostics = check_assumptions(scn)
    return scn


def load_scenario(path, check=True) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), check=check)

