"""Picard iteration for the multi-dimensional mean-reflected G-BSDE.

One application of :func:`gamma_map` freezes the ``y`` argument of every
driver at ``Q``, solves the ``N`` decoupled G-BSDEs, and reflects the result
with the minimal deterministic shift.  :func:`solve_window` iterates it on a
window of slices; :func:`solve_full` covers ``[0, T]`` by solving windows
from the horizon backwards and stitching them.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidConfig,
    MaxIterExceeded,
    TerminalConstraintViolated,
    WindowMisaligned,
)
from .gbsde import BsdeSolution, GeneratorSpec, attach_k, k_consistency_report, solve_unreflected
from .lattice import GExpectation, TreeGrid, VolatilityBand, check_field
from .reflection import (
    ReflectionPath,
    Weights,
    build_reflection,
    check_constraint,
    check_flatness,
    mean_path,
    shift_solution,
)

logger = logging.getLogger(__name__)

__all__ = [
    "PicardConfig",
    "IterationTrace",
    "MrSolution",
    "gamma_map",
    "compute_delta_bound",
    "solve_window",
    "solve_full",
    "window_slices",
]


@dataclass(frozen=True)
class PicardConfig:
    """Settings of the fixed-point loop.

    ``window_h=None`` starts from :func:`compute_delta_bound`.  With
    ``adaptive=True`` a window that fails to converge, or whose asymptotic
    contraction ratio exceeds ``ratio_bound``, is split in two (at most
    ``max_halvings`` times).
    """

    window_h: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 50
    beta: float = 3.0
    c_beta: float = 1.0
    adaptive: bool = True
    ratio_bound: float = 0.6
    start_value: float = 0.0
    max_halvings: int = 6
    terminal_tol: float = 1e-8

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidConfig("tol must be positive")
        if not self.beta > 2:
            raise InvalidConfig(f"beta must exceed 2, got {self.beta}")
        if not self.c_beta > 0:
            raise InvalidConfig("c_beta must be positive")
        if self.max_iter < 1:
            raise InvalidConfig("max_iter must be at least 1")
        if self.window_h is not None and not self.window_h > 0:
            raise InvalidConfig("window_h must be positive")


@dataclass
class IterationTrace:
    """Sup-norm differences ``d_i = max |Y^{[i+1]} - Y^{[i]}|`` of one window."""

    window: tuple
    diffs: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    converged: bool = False
    sub_traces: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.diffs)

    @property
    def ratios(self) -> list:
        d = self.diffs
        return [d[i + 1] / d[i] if d[i] > 0 else 0.0 for i in range(len(d) - 1)]

    def asymptotic_ratios(self, floor=1e-13) -> list:
        """Ratios ``d_{i+1} / d_i`` once ``d_i <= 0.1 d_0``.

        Differences below ``floor`` are rounding noise and are skipped.
        """
        d = self.diffs
        if len(d) < 2 or d[0] == 0:
            return []
        return [d[i + 1] / d[i] for i in range(len(d) - 1)
                if d[i] <= 0.1 * d[0] and d[i] > floor]

    def max_ratio(self) -> float:
        """Largest asymptotic ratio over this trace and its sub-windows."""
        vals = list(self.asymptotic_ratios())
        for sub in self.sub_traces:
            vals.append(sub.max_ratio())
        return max(vals, default=0.0)

    def leaves(self):
        if not self.sub_traces:
            return [self]
        return [leaf for sub in self.sub_traces for leaf in sub.leaves()]

    def to_dict(self) -> dict:
        out = {
            "window": list(self.window),
            "iterations": self.iterations,
            "diffs": [float(v) for v in self.diffs],
            "ratios": [float(v) for v in self.ratios],
            "converged": self.converged,
        }
        if self.sub_traces:
            out["sub_traces"] = [s.to_dict() for s in self.sub_traces]
        return out


@dataclass
class MrSolution:
    """Solution ``(Y, Z, K, R)`` on slices ``start .. end``.

    ``y[l][j]`` is the field of component ``l`` on slice ``start + j``;
    ``z`` and ``k`` are laid out the same way.  ``r`` is shared by all nodes.
    """

    start: int
    y: list
    z: list
    k: list
    r: ReflectionPath
    constraint_path: np.ndarray
    flatness_residual: float
    bases: list = field(default_factory=list, repr=False)
    traces: list = field(default_factory=list)
    windows: list = field(default_factory=list)

    @property
    def end(self) -> int:
        return self.start + len(self.y[0]) - 1

    @property
    def n_components(self) -> int:
        return len(self.y)

    @property
    def y0(self) -> np.ndarray:
        """Values at the first slice's centre node (the root for ``start=0``)."""
        return np.array([comp[0][comp[0].size // 2] for comp in self.y])

    @property
    def r_terminal(self) -> np.ndarray:
        return self.r.r[-1].copy()

    def y_stack(self) -> list:
        """Per-slice arrays of shape ``(N, nodes)``, the layout of a frozen ``Q``."""
        return [np.vstack([comp[j] for comp in self.y]) for j in range(len(self.y[0]))]

    def max_constraint(self) -> float:
        return float(np.nanmax(self.constraint_path))

    def k_reports(self, grid, band):
        return [k_consistency_report(b, grid, band) for b in self.bases]


def window_slices(window) -> int:
    k0, k1 = window
    return k1 - k0 + 1


def _check_terminal(terminal, weights, backend, tol):
    s = float(backend.means([-np.asarray(v) for v in terminal]) @ weights.array)
    if s > tol:
        raise TerminalConstraintViolated(s, tol)
    return s


def _backend(grid, band, backend):
    return GExpectation(grid, band) if backend is None else backend


def gamma_map(frozen_q, window, terminal, gen: GeneratorSpec, weights: Weights,
              grid: TreeGrid, band: VolatilityBand, backend=None, finalize=True,
              terminal_tol=1e-8) -> MrSolution:
    """One application ``Q -> Y^Q`` on the slices ``window = (k0, k1)``.

    ``frozen_q[j]`` has shape ``(N, 2 (k0 + j) + 1)``.  ``terminal`` lists the
    ``N`` fields on slice ``k1``.  With ``finalize=False`` the K process, the
    constraint path and the flatness residual are skipped (the Picard loop
    only needs ``Y``).
    """
    k0, k1 = window
    backend = _backend(grid, band, backend)
    if len(terminal) != weights.n or gen.n_components != weights.n:
        raise DimensionMismatch(
            f"{len(terminal)} terminals, {gen.n_components} drivers, {weights.n} weights"
        )
    terminal = [check_field(v, k1) for v in terminal]
    _check_terminal(terminal, weights, backend, terminal_tol)

    bases = [
        solve_unreflected(terminal[l], gen.f[l], gen.g[l], grid, band, frozen_y=frozen_q,
                          component=l, start=k0)
        for l in range(weights.n)
    ]
    mp = mean_path([b.y for b in bases], backend=backend, start=k0)
    refl = build_reflection(mp, weights)
    shifted = shift_solution(bases, refl.shift)
    if not finalize:
        return MrSolution(start=k0, y=[s.y for s in shifted], z=[s.z for s in shifted],
                          k=[], r=refl, constraint_path=np.array([]),
                          flatness_residual=float("nan"), bases=shifted)
    return _finalize(shifted, refl, weights, grid, band, backend)


def _finalize(shifted, refl, weights, grid, band, backend) -> MrSolution:
    incr = refl.increments
    for l, s in enumerate(shifted):
        attach_k(s, grid, band, r_increments=incr[:, l])
    ys = [s.y for s in shifted]
    cpath = check_constraint(ys, weights, backend=backend)
    flat = check_flatness(cpath, refl)
    return MrSolution(
        start=shifted[0].start,
        y=ys,
        z=[s.z for s in shifted],
        k=[s.k for s in shifted],
        r=refl,
        constraint_path=cpath,
        flatness_residual=flat,
        bases=shifted,
    )


def compute_delta_bound(config: PicardConfig, weights: Weights, gen=None, horizon=math.inf,
                        lipschitz=None) -> float:
    """Window length on which the frozen map is a 1/2-contraction.

    ``c_beta`` stands in for the non-constructive a priori constant.  A zero
    Lipschitz constant gives the whole horizon.
    """
    if not config.beta > 2:
        raise InvalidConfig(f"beta must exceed 2, got {config.beta}")
    lip = gen.lipschitz if lipschitz is None else lipschitz
    if lip <= 0:
        return float(horizon)
    b = config.beta
    n = weights.n
    th = weights.array
    inner = 1.0 + n ** (b - 2) * np.sum(th**b) ** 2 / np.sum(th**2) ** b
    delta = (2.0 ** (1.0 / b - 2.0) * n**-0.5 * config.c_beta ** (-1.0 / b)
             / lip * inner ** (-1.0 / b))
    return float(min(delta, horizon))


def _constant_q(window, n, value):
    k0, k1 = window
    return [np.full((n, 2 * k + 1), float(value)) for k in range(k0, k1 + 1)]


def _picard(window, terminal, gen, weights, grid, band, config, backend, start_q):
    trace = IterationTrace(window=tuple(window))
    q = start_q
    prev = None
    for _ in range(config.max_iter):
        t0 = time.perf_counter()
        sol = gamma_map(q, window, terminal, gen, weights, grid, band, backend=backend,
                        finalize=False, terminal_tol=config.terminal_tol)
        new_q = sol.y_stack()
        d = max(float(np.max(np.abs(a - b))) for a, b in zip(new_q, q))
        trace.diffs.append(d)
        trace.seconds.append(time.perf_counter() - t0)
        q, prev = new_q, sol
        if d <= config.tol:
            trace.converged = True
            return prev, trace
    raise MaxIterExceeded(
        f"window {tuple(window)}: no convergence to {config.tol:g} in "
        f"{config.max_iter} iterations (last difference {trace.diffs[-1]:.3g})",
        trace=trace,
    )


def solve_window(window, terminal, gen: GeneratorSpec, weights: Weights, grid: TreeGrid,
                 band: VolatilityBand, config: PicardConfig, backend=None, start_q=None,
                 _depth=0):
    """Picard iteration ``Y^{[i+1]} = Gamma(Y^{[i]})`` on one window.

    Returns ``(MrSolution, IterationTrace)``.  The loop stops once the
    sup-norm difference of consecutive iterates is ``<= config.tol``.
    """
    backend = _backend(grid, band, backend)
    k0, k1 = window
    if start_q is None:
        start_q = _constant_q(window, weights.n, config.start_value)
    try:
        sol, trace = _picard(window, terminal, gen, weights, grid, band, config, backend, start_q)
        failed = None
        if config.adaptive and trace.max_ratio() > config.ratio_bound:
            failed = f"contraction ratio {trace.max_ratio():.3g} > {config.ratio_bound}"
    except MaxIterExceeded as exc:
        sol, trace, failed = None, exc.trace, str(exc)
        if not config.adaptive or _depth >= config.max_halvings or k1 - k0 < 2:
            raise
    if failed and config.adaptive and _depth < config.max_halvings and k1 - k0 >= 2:
        logger.info("window %s: %s; halving", window, failed)
        mid = (k0 + k1) // 2
        late, late_trace = solve_window((mid, k1), terminal, gen, weights, grid, band, config,
                                        backend, _depth=_depth + 1)
        early_term = [comp[0] for comp in late.y]
        early, early_trace = solve_window((k0, mid), early_term, gen, weights, grid, band,
                                          config, backend, _depth=_depth + 1)
        merged = _stitch([early, late], weights, grid, band, backend)
        parent = IterationTrace(window=tuple(window), converged=True,
                                sub_traces=[late_trace, early_trace])
        merged.traces = [parent]
        return merged, parent
    if failed:
        logger.warning("window %s: %s (no halvings left)", window, failed)
    final = _finalize(sol.bases, sol.r, weights, grid, band, backend)
    final.traces = [trace]
    final.windows = [tuple(window)]
    return final, trace


def _stitch(parts: Sequence[MrSolution], weights, grid, band, backend) -> MrSolution:
    """Concatenate chronologically ordered window solutions.

    Each window owns its slices ``[k0, k1)``; the last slice comes from the
    latest window.  ``R`` is accumulated so that it starts at zero and stays
    continuous across window boundaries.
    """
    n = weights.n
    ys = [[] for _ in range(n)]
    zs = [[] for _ in range(n)]
    fvals = [[] for _ in range(n)]
    gvals = [[] for _ in range(n)]
    r_rows, rn_rows = [], []
    offset = np.zeros(n)
    offset_n = 0.0
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        stop = None if last else -1
        for l in range(n):
            ys[l].extend(part.y[l][:stop])
            zs[l].extend(part.z[l][:stop])
            fvals[l].extend(part.bases[l].f_values)
            gvals[l].extend(part.bases[l].g_values)
        r_rows.append((offset + part.r.r)[:stop])
        rn_rows.append((offset_n + part.r.r_norm)[:stop])
        offset = offset + part.r.r[-1]
        offset_n = offset_n + part.r.r_norm[-1]
    r = np.vstack(r_rows)
    r_norm = np.concatenate(rn_rows)
    refl = ReflectionPath(start=parts[0].start, r=r, r_norm=r_norm, shift=r[-1] - r,
                          shift_norm=r_norm[-1] - r_norm)
    bases = [
        BsdeSolution(start=parts[0].start, y=ys[l], z=zs[l], f_values=fvals[l], g_values=gvals[l])
        for l in range(n)
    ]
    out = _finalize(bases, refl, weights, grid, band, backend)
    out.traces = [t for p in parts for t in p.traces]
    out.windows = [w for p in parts for w in p.windows]
    return out


def _window_length(grid: TreeGrid, config: PicardConfig, weights, gen) -> int:
    n = grid.n_steps
    if config.window_h is None:
        delta = compute_delta_bound(config, weights, gen, grid.horizon)
        n_w = max(1, math.ceil(grid.horizon / delta - 1e-12))
        while n % n_w:
            n_w += 1
        return n // n_w
    m = math.floor(config.window_h / grid.dt + 1e-9)
    if m < 1 or m > n or n % m:
        raise WindowMisaligned(
            f"window_h={config.window_h} gives {config.window_h / grid.dt:.6g} slices; "
            f"need a divisor of n_steps={n}"
        )
    return m


def solve_full(terminal, gen: GeneratorSpec, weights: Weights, grid: TreeGrid,
               band: VolatilityBand, config: PicardConfig, backend=None) -> MrSolution:
    """Solve on ``[0, T]`` by backward window stitching.

    ``terminal`` lists the ``N`` fields on slice ``n_steps``.  Windows have
    equal length (a divisor of ``n_steps``); each window's terminal is the
    solution of the next window at their common slice.
    """
    backend = _backend(grid, band, backend)
    terminal = [check_field(v, grid.n_steps) for v in terminal]
    _check_terminal(terminal, weights, backend, config.terminal_tol)
    m = _window_length(grid, config, weights, gen)
    parts = []
    term = terminal
    k1 = grid.n_steps
    while k1 > 0:
        window = (k1 - m, k1)
        part, _ = solve_window(window, term, gen, weights, grid, band, config, backend)
        parts.append(part)
        term = [comp[0] for comp in part.y]
        k1 -= m
    parts.reverse()
    if len(parts) == 1:
        return parts[0]
    return _stitch(parts, weights, grid, band, backend)
