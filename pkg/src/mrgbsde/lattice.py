"""Discrete-time G-expectation on a recombining trinomial tree.

Slice ``k`` of the tree carries ``2k + 1`` nodes at positions ``j * dx`` for
``j = -k, ..., k``.  A field on slice ``k`` is a plain 1-D float array of that
length, ordered from the lowest to the highest position.  Moving from slice
``k + 1`` to slice ``k``, node ``i`` of slice ``k`` sees the children
``i`` (down), ``i + 1`` (mid) and ``i + 2`` (up) of slice ``k + 1``.

Under a constant volatility ``sigma`` the up and down moves each carry the
probability ``p = sigma**2 * dt / (2 * dx**2)``.  The one-step value is affine
in ``sigma**2``, so the supremum over the band is attained at one of the two
endpoints and is evaluated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CflViolation

__all__ = [
    "VolatilityBand",
    "TreeGrid",
    "GExpectation",
    "ClassicalExpectation",
    "g_function",
    "one_step",
    "backward_step",
    "expectation",
    "conditional_path",
    "root_values",
    "check_field",
    "slice_of",
]


@dataclass(frozen=True)
class VolatilityBand:
    """Volatility uncertainty interval ``[sigma_low, sigma_high]``.

    ``sigma_low`` must be strictly positive (non-degenerate G).
    """

    sigma_low: float
    sigma_high: float

    def __post_init__(self):
        lo, hi = float(self.sigma_low), float(self.sigma_high)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("volatility band must be finite")
        if not 0.0 < lo <= hi:
            raise ValueError(
                f"need 0 < sigma_low <= sigma_high, got ({lo}, {hi})"
            )
        object.__setattr__(self, "sigma_low", lo)
        object.__setattr__(self, "sigma_high", hi)

    @property
    def var_low(self) -> float:
        return self.sigma_low**2

    @property
    def var_high(self) -> float:
        return self.sigma_high**2

    @property
    def degenerate(self) -> bool:
        return self.sigma_low == self.sigma_high


@dataclass(frozen=True)
class TreeGrid:
    """Time/space discretisation of ``[0, horizon]``.

    Use :meth:`for_band` to get the default space step
    ``dx = sigma_high * sqrt(1.5 * dt)``.
    """

    horizon: float
    n_steps: int
    dx: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "dx", float(self.dx))

    @classmethod
    def for_band(cls, horizon, n_steps, band, dx=None):
        if dx is None:
            dx = band.sigma_high * math.sqrt(1.5 * horizon / n_steps)
        grid = cls(horizon, n_steps, dx)
        grid.check_cfl(band)
        return grid

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def time(self, k: int) -> float:
        return k * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def positions(self, k: int) -> np.ndarray:
        return np.arange(-k, k + 1) * self.dx

    def prob(self, var: float) -> float:
        """Up (= down) probability under the variance ``var``."""
        return var * self.dt / (2.0 * self.dx**2)

    def check_cfl(self, band: VolatilityBand, sigma: float | None = None):
        s = band.sigma_high if sigma is None else max(band.sigma_high, sigma)
        # tiny relative slack so that dx == sigma*sqrt(dt) is accepted
        if self.dx < s * math.sqrt(self.dt) * (1.0 - 1e-12):
            raise CflViolation(
                f"dx={self.dx:.6g} < sigma*sqrt(dt)={s * math.sqrt(self.dt):.6g}"
            )


def slice_of(values) -> int:
    n = len(values)
    if n % 2 == 0:
        raise ValueError(f"field length {n} is not odd")
    return (n - 1) // 2


def check_field(values, k: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError("a lattice field must be one-dimensional")
    kk = slice_of(arr)
    if k is not None and kk != k:
        raise ValueError(f"field has {arr.size} nodes, slice {k} needs {2 * k + 1}")
    return arr


def g_function(a, band: VolatilityBand):
    """``G(a) = (sigma_high**2 * a^+ - sigma_low**2 * a^-) / 2``."""
    a = np.asarray(a, dtype=float)
    out = 0.5 * (band.var_high * np.maximum(a, 0.0) - band.var_low * np.maximum(-a, 0.0))
    return out.item() if out.ndim == 0 else out


def one_step(next_up, next_mid, next_down, grid: TreeGrid, band: VolatilityBand,
             f=0.0, g=0.0):
    """Supremum over the band of the one-step value at a node.

    Evaluates ``mid + p(s2) * (up + down - 2 mid) + (f + s2 * g) * dt`` at
    both variance endpoints ``s2`` and returns the larger one.  ``f`` and ``g``
    are the driver values already evaluated at the node; all arguments
    broadcast.
    """
    grid.check_cfl(band)
    up = np.asarray(next_up, dtype=float)
    mid = np.asarray(next_mid, dtype=float)
    down = np.asarray(next_down, dtype=float)
    second = up + down - 2.0 * mid
    dt = grid.dt
    lo = mid + grid.prob(band.var_low) * second + (f + band.var_low * g) * dt
    hi = mid + grid.prob(band.var_high) * second + (f + band.var_high * g) * dt
    out = np.maximum(lo, hi)
    return out.item() if out.ndim == 0 else out


def backward_step(next_values, grid, band, f=0.0, g=0.0):
    """Map a field on slice ``k + 1`` to slice ``k`` (no CFL check)."""
    v = next_values
    down, mid, up = v[:-2], v[1:-1], v[2:]
    second = up + down - 2.0 * mid
    dt = grid.dt
    lo = mid + grid.prob(band.var_low) * second + (f + band.var_low * g) * dt
    hi = mid + grid.prob(band.var_high) * second + (f + band.var_high * g) * dt
    return np.maximum(lo, hi)


def conditional_path(terminal, grid: TreeGrid, band: VolatilityBand) -> list[np.ndarray]:
    """Conditional expectations ``E_t[phi(B_{t_k})]`` for every slice ``t <= k``.

    Returns a list indexed by slice; entry ``k`` is the terminal itself.
    """
    grid.check_cfl(band)
    v = check_field(terminal)
    k = slice_of(v)
    path = [None] * (k + 1)
    path[k] = v
    for j in range(k - 1, -1, -1):
        v = backward_step(v, grid, band)
        path[j] = v
    return path


def expectation(terminal, grid: TreeGrid, band: VolatilityBand) -> float:
    """Root value ``E[phi(B_{t_k})]`` of a field on slice ``k``."""
    grid.check_cfl(band)
    v = check_field(terminal)
    for _ in range(slice_of(v)):
        v = backward_step(v, grid, band)
    return float(v[0])


def root_values(fields: Sequence, grid: TreeGrid, var_low: float, var_high: float) -> np.ndarray:
    """Unconditional expectations of many fields in one stacked pass.

    ``fields[i]`` may live on any slice.  The zero-driver recursion is
    time-homogeneous, so all fields on slice ``s`` can be rolled back
    together; fields join the stack when the sweep reaches their slice.
    Returns one value per input field, in input order.
    """
    arrs = [np.asarray(f, dtype=float) for f in fields]
    ks = np.array([slice_of(a) for a in arrs], dtype=int)
    out = np.empty(len(arrs))
    if not arrs:
        return out
    p_lo, p_hi = grid.prob(var_low), grid.prob(var_high)
    order = np.argsort(-ks, kind="stable")
    top = int(ks[order[0]])
    stack = np.empty((0, 2 * top + 1))
    members: list[int] = []
    pos = 0
    for s in range(top, -1, -1):
        joining = []
        while pos < len(order) and ks[order[pos]] == s:
            joining.append(order[pos])
            pos += 1
        if joining:
            stack = np.vstack([stack] + [arrs[i][None, :] for i in joining])
            members.extend(joining)
        if s == 0:
            break
        if members:
            down, mid, up = stack[:, :-2], stack[:, 1:-1], stack[:, 2:]
            second = up + down - 2.0 * mid
            stack = mid + np.where(second > 0.0, p_hi, p_lo) * second
        else:
            stack = stack[:, 1:-1]
    out[np.asarray(members, dtype=int)] = stack[:, 0]
    return out


class GExpectation:
    """Sublinear expectation back-end over the full volatility band."""

    def __init__(self, grid: TreeGrid, band: VolatilityBand):
        grid.check_cfl(band)
        self.grid = grid
        self.band = band

    def expect(self, field) -> float:
        return float(root_values([field], self.grid, self.band.var_low, self.band.var_high)[0])

    def means(self, fields) -> np.ndarray:
        return root_values(fields, self.grid, self.band.var_low, self.band.var_high)


class ClassicalExpectation:
    """Linear expectation under one fixed volatility ``sigma``."""

    def __init__(self, grid: TreeGrid, sigma: float):
        if sigma <= 0 or grid.dx < sigma * math.sqrt(grid.dt) * (1.0 - 1e-12):
            raise CflViolation(f"reference volatility {sigma} does not fit the grid")
        self.grid = grid
        self.sigma = float(sigma)

    def expect(self, field) -> float:
        return float(self.means([field])[0])

    def means(self, fields) -> np.ndarray:
        v = self.sigma**2
        return root_values(fields, self.grid, v, v)
