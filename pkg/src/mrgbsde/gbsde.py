"""Backward lattice solver for one-dimensional G-BSDEs.

Solves, per component ``l``,

    Y_t = xi + int_t^T f(s, Y_s, Z_s) ds + int_t^T g(s, Y_s, Z_s) d<B>_s
              - int_t^T Z_s dB_s - (K_T - K_t)

on the trinomial tree.  Each node update is implicit in ``y`` and explicit in
``z``; ``z`` is the central difference of the next slice.

Drivers are vectorised callables ``f(t, x, y, z)`` where ``x`` and ``z`` are
arrays over the nodes of one slice and ``y`` has shape ``(N, nodes)``.  They
must return an array over the nodes (or a scalar, which is broadcast).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NoContraction
from .lattice import ClassicalExpectation, TreeGrid, VolatilityBand, check_field, slice_of

logger = logging.getLogger(__name__)

Driver = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

INNER_TOL = 1e-13
INNER_MAX_ITER = 50


def zero_driver(t, x, y, z):
    return 0.0


@dataclass
class GeneratorSpec:
    """Drivers ``f^l`` and ``g^l`` for all ``N`` components.

    ``lipschitz`` is the declared constant ``L``; it is not proved, only
    probed by :meth:`probe_lipschitz`.
    """

    f: Sequence[Driver]
    g: Optional[Sequence[Driver]] = None
    lipschitz: float = 0.0

    def __post_init__(self):
        self.f = list(self.f)
        if self.g is None:
            self.g = [zero_driver] * len(self.f)
        self.g = list(self.g)
        if len(self.g) != len(self.f):
            raise DimensionMismatch(
                f"{len(self.f)} f-drivers but {len(self.g)} g-drivers"
            )
        if self.lipschitz < 0:
            raise ValueError("lipschitz constant must be non-negative")

    @property
    def n_components(self) -> int:
        return len(self.f)

    def probe_lipschitz(self, horizon=1.0, n_probes=1000, seed=0, scale=3.0,
                        warn=True) -> float:
        """Largest observed ratio ``|f(p1) - f(p2)| / (|y1 - y2| + |z1 - z2|)``.

        Probes share ``(t, x)`` and draw ``y``, ``z`` uniformly from
        ``[-scale, scale]``; the sum over ``f`` and ``g`` is used, as in the
        Lipschitz assumption.  A :class:`UserWarning` is emitted when the
        observation exceeds the declared constant.
        """
        rng = np.random.default_rng(seed)
        n = self.n_components
        batches = 10
        per = max(1, n_probes // batches)
        worst = 0.0
        for _ in range(batches):
            t = float(rng.uniform(0.0, horizon))
            x = rng.uniform(-scale, scale, per)
            y1 = rng.uniform(-scale, scale, (n, per))
            y2 = rng.uniform(-scale, scale, (n, per))
            z1 = rng.uniform(-scale, scale, per)
            z2 = rng.uniform(-scale, scale, per)
            dist = np.linalg.norm(y1 - y2, axis=0) + np.abs(z1 - z2)
            for f, g in zip(self.f, self.g):
                num = np.zeros(per)
                for drv in (f, g):
                    num += np.abs(_eval(drv, t, x, y1, z1) - _eval(drv, t, x, y2, z2))
                worst = max(worst, float(np.max(num / dist)))
        if warn and worst > self.lipschitz * (1 + 1e-9) + 1e-12:
            warnings.warn(
                f"declared Lipschitz constant {self.lipschitz} is exceeded on "
                f"random probes (observed {worst:.4g})",
                UserWarning,
                stacklevel=2,
            )
        return worst


@dataclass
class BsdeSolution:
    """Lattice solution on slices ``start, ..., end``.

    All sequences are indexed by ``slice - start``.  ``f_values`` and
    ``g_values`` hold the driver values used in the update of slices
    ``start .. end - 1``; they feed the K identity.  ``k`` is reported through
    its mean under the upper-volatility reference measure (a deterministic,
    non-increasing path broadcast over each slice); ``k_defect_high`` and
    ``k_defect_low`` are the per-node conditional means of the K increment
    under the two endpoint measures, both non-positive.
    """

    start: int
    y: list
    z: list
    k: list = field(default_factory=list)
    f_values: list = field(default_factory=list)
    g_values: list = field(default_factory=list)
    k_defect_high: list = field(default_factory=list)
    k_defect_low: list = field(default_factory=list)

    @property
    def end(self) -> int:
        return self.start + len(self.y) - 1

    def at(self, k: int) -> np.ndarray:
        return self.y[k - self.start]


@dataclass(frozen=True)
class KReport:
    max_edge_increment: float
    martingale_residual: float
    max_defect: float


def _step(v, grid, band, fv, gv):
    down, mid, up = v[:-2], v[1:-1], v[2:]
    second = up + down - 2.0 * mid
    dt = grid.dt
    lo = mid + grid.prob(band.var_low) * second + (fv + band.var_low * gv) * dt
    hi = mid + grid.prob(band.var_high) * second + (fv + band.var_high * gv) * dt
    return np.maximum(lo, hi)


def _eval(drv, t, x, y, z):
    return np.broadcast_to(np.asarray(drv(t, x, y, z), dtype=float), x.shape).copy()


def terminal_z(terminal, dx) -> np.ndarray:
    if terminal.size < 2:
        return np.zeros_like(terminal)
    return np.gradient(terminal, dx)


def solve_unreflected(terminal, f: Driver, g: Optional[Driver], grid: TreeGrid,
                      band: VolatilityBand, frozen_y=None, component=0,
                      n_components=1, start=0, lipschitz=None) -> BsdeSolution:
    """Solve one component backward from ``terminal`` to slice ``start``.

    Parameters
    ----------
    terminal : array
        Field on the terminal slice (its length fixes the slice index).
    f, g : callable
        Drivers of this component; ``g=None`` means no ``d<B>`` term.
    frozen_y : sequence of arrays, optional
        ``frozen_y[k - start]`` has shape ``(N, 2k + 1)`` and is passed as the
        ``y`` argument at slice ``k``.  Without it the update is implicit in
        the own component and the other rows of ``y`` are zero.
    lipschitz : float, optional
        Declared constant; ``lipschitz * dt >= 1`` raises
        :class:`NoContraction`.
    """
    grid.check_cfl(band)
    if lipschitz is not None and lipschitz * grid.dt >= 1.0:
        raise NoContraction(f"L*dt = {lipschitz * grid.dt:.4g} >= 1")
    g = zero_driver if g is None else g
    xi = check_field(terminal)
    end = slice_of(xi)
    if not 0 <= start <= end:
        raise ValueError(f"start slice {start} outside [0, {end}]")
    n_slices = end - start + 1
    if frozen_y is not None:
        if len(frozen_y) != n_slices:
            raise DimensionMismatch(
                f"frozen_y covers {len(frozen_y)} slices, window has {n_slices}"
            )
        n_components = np.asarray(frozen_y[0]).shape[0]
        for j, q in enumerate(frozen_y[:-1]):
            q = np.asarray(q)
            if q.ndim != 2 or q.shape[1] != 2 * (start + j) + 1:
                raise DimensionMismatch(f"frozen_y at slice {start + j} has shape {q.shape}")
            if q.shape[0] != n_components:
                raise DimensionMismatch("frozen_y arity changes between slices")
    if not 0 <= component < n_components:
        raise DimensionMismatch(f"component {component} out of range for N={n_components}")

    y = [None] * n_slices
    z = [None] * n_slices
    fvals = [None] * (n_slices - 1)
    gvals = [None] * (n_slices - 1)
    y[-1] = xi
    z[-1] = terminal_z(xi, grid.dx)
    v = xi
    for k in range(end - 1, start - 1, -1):
        j = k - start
        t = grid.time(k)
        x = grid.positions(k)
        zk = (v[2:] - v[:-2]) / (2.0 * grid.dx)
        if frozen_y is not None:
            yvec = np.asarray(frozen_y[j], dtype=float)
            fv = _eval(f, t, x, yvec, zk)
            gv = _eval(g, t, x, yvec, zk)
            yk = _step(v, grid, band, fv, gv)
        else:
            yk = _step(v, grid, band, 0.0, 0.0)
            yvec = np.zeros((n_components, yk.size))
            for _ in range(INNER_MAX_ITER):
                yvec[component] = yk
                fv = _eval(f, t, x, yvec, zk)
                gv = _eval(g, t, x, yvec, zk)
                ynew = _step(v, grid, band, fv, gv)
                done = np.max(np.abs(ynew - yk) - INNER_TOL * (1.0 + np.abs(yk))) <= 0.0
                yk = ynew
                if done:
                    break
            else:
                logger.warning("inner fixed point at slice %d did not reach %.0e", k, INNER_TOL)
        y[j], z[j], fvals[j], gvals[j] = yk, zk, fv, gv
        v = yk

    sol = BsdeSolution(start=start, y=y, z=z, f_values=fvals, g_values=gvals)
    attach_k(sol, grid, band)
    return sol


def attach_k(sol: BsdeSolution, grid, band, r_increments=None):
    """Fill ``k`` and the defect fields of ``sol`` from the K identity.

    Per node and endpoint variance ``s2`` the conditional mean increment is

        E^s2_k[Y_{k+1} - Y_k + f dt + g d<B> - z dB + dR]
            = mid + p(s2) * second - Y_k + (f + s2 g) dt + dR_k

    with ``d<B> = (dB)**2`` on each edge.  ``r_increments[j]`` is the
    deterministic increment ``R_{k+1} - R_k`` of this component (zero for an
    unreflected solve).
    """
    n = len(sol.y)
    hi_def, lo_def = [], []
    for j in range(n - 1):
        v = sol.y[j + 1]
        down, mid, up = v[:-2], v[1:-1], v[2:]
        second = up + down - 2.0 * mid
        dr = 0.0 if r_increments is None else float(r_increments[j])
        base = mid - sol.y[j] + sol.f_values[j] * grid.dt + dr
        hi_def.append(base + grid.prob(band.var_high) * second + band.var_high * sol.g_values[j] * grid.dt)
        lo_def.append(base + grid.prob(band.var_low) * second + band.var_low * sol.g_values[j] * grid.dt)
    ref = ClassicalExpectation(grid, band.sigma_high)
    steps = ref.means(hi_def) if hi_def else np.empty(0)
    levels = np.concatenate([[0.0], np.cumsum(steps)])
    sol.k = [np.full(2 * (sol.start + j) + 1, levels[j]) for j in range(n)]
    sol.k_defect_high = hi_def
    sol.k_defect_low = lo_def
    return sol


def k_consistency_report(sol: BsdeSolution, grid: TreeGrid, band: VolatilityBand) -> KReport:
    """Check that K is a non-increasing G-martingale on the lattice.

    ``max_edge_increment`` is the largest ``K_{k+1}(child) - K_k(node)`` over
    all tree edges (clipped at 0); ``martingale_residual`` is the largest
    ``|E_k[K_{k+1}] - K_k|`` over all nodes; ``max_defect`` is the largest
    per-node conditional K increment over both endpoint measures (must be
    ``<= 0`` up to rounding).
    """
    edge = 0.0
    mart = 0.0
    for j in range(len(sol.k) - 1):
        cur, nxt = sol.k[j], sol.k[j + 1]
        for off in range(3):
            edge = max(edge, float(np.max(nxt[off:off + cur.size] - cur)))
        e = _step(nxt, grid, band, 0.0, 0.0)
        mart = max(mart, float(np.max(np.abs(e - cur))))
    defect = 0.0
    for d in sol.k_defect_high + sol.k_defect_low:
        defect = max(defect, float(np.max(d)))
    return KReport(max_edge_increment=max(edge, 0.0), martingale_residual=mart,
                   max_defect=defect)


def apriori_bound(terminal_sup, driver_sup, lipschitz, horizon) -> float:
    """Conservative bound ``e^{2LT} (sup|xi| + T sup|f(.,0,0)|)`` on ``|Y|``."""
    return math.exp(2.0 * lipschitz * horizon) * (terminal_sup + horizon * driver_sup)
