"""Mean reflection: projection onto the constraint half-space and the
deterministic reflection path.

The constraint is ``sum_l theta^l E[-Y_t^l] <= 0`` at every slice.  The
minimal-norm shift restoring it is proportional to ``theta``::

    L^l(m) = theta^l * (sum_j theta^j m^j)^+ / sum_j (theta^j)^2

where ``m^j = E[-X^j]``.  Every function taking an expectation accepts an
optional ``backend`` with a ``means(fields)`` method; the default is the
G-expectation of the band.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch
from .lattice import GExpectation

__all__ = [
    "Weights",
    "MeanPath",
    "ReflectionPath",
    "project_l",
    "project_norm",
    "h_value",
    "mean_path",
    "build_reflection",
    "shift_solution",
    "check_constraint",
    "check_flatness",
    "flatness_increments",
]


@dataclass(frozen=True)
class Weights:
    """Convex-combination weights ``theta`` (non-negative, summing to one)."""

    theta: tuple

    def __post_init__(self):
        th = tuple(float(v) for v in np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if not th:
            raise ValueError("theta must not be empty")
        if any(not np.isfinite(v) for v in th):
            raise ValueError("theta must be finite")
        if min(th) < 0.0:
            raise ValueError(f"theta has a negative entry: {th}")
        total = sum(th)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"theta must sum to 1, sums to {total:.12g}")
        object.__setattr__(self, "theta", th)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.theta)

    @property
    def n(self) -> int:
        return len(self.theta)

    @property
    def sq_sum(self) -> float:
        return float(np.sum(self.array**2))


def _means(means, weights: Weights) -> np.ndarray:
    m = np.asarray(means, dtype=float)
    if m.shape[-1] != weights.n:
        raise DimensionMismatch(f"got {m.shape[-1]} means for {weights.n} weights")
    return m


def project_l(means, weights: Weights) -> np.ndarray:
    """Minimal-norm shift ``x`` with ``h_value(x, means) <= 0``.

    ``means`` may carry leading batch axes; the last axis is the component.
    """
    m = _means(means, weights)
    th = weights.array
    excess = np.maximum(m @ th, 0.0)
    return np.multiply.outer(excess, th) / weights.sq_sum


def project_norm(means, weights: Weights):
    """Euclidean norm of :func:`project_l`, in closed form."""
    m = _means(means, weights)
    return np.maximum(m @ weights.array, 0.0) / np.sqrt(weights.sq_sum)


def h_value(x, means, weights: Weights):
    """``-sum theta^l x^l + sum theta^l means^l``."""
    x = np.asarray(x, dtype=float)
    m = _means(means, weights)
    if x.shape[-1] != weights.n:
        raise DimensionMismatch(f"x has {x.shape[-1]} entries for {weights.n} weights")
    th = weights.array
    return -(x @ th) + m @ th


@dataclass
class MeanPath:
    """``m[j, l] = E[-Y^l]`` at slice ``start + j``."""

    start: int
    m: np.ndarray

    def aggregate(self, weights: Weights) -> np.ndarray:
        return self.m @ weights.array

    def modulus(self, weights: Weights) -> float:
        """Largest jump of the aggregated path between adjacent slices."""
        s = self.aggregate(weights)
        return float(np.max(np.abs(np.diff(s)))) if s.size > 1 else 0.0


@dataclass
class ReflectionPath:
    """Deterministic reflection on slices ``start .. start + len(r) - 1``.

    ``shift[j]`` is the running supremum ``sup_{s >= j} L(.)_s`` over the
    window; ``r[j] = shift[0] - shift[j]``.
    """

    start: int
    r: np.ndarray
    r_norm: np.ndarray
    shift: np.ndarray
    shift_norm: np.ndarray

    @property
    def increments(self) -> np.ndarray:
        """``R_{k+1} - R_k`` per component, shape ``(slices - 1, N)``."""
        return np.diff(self.r, axis=0)


def mean_path(fields_by_component: Sequence[Sequence[np.ndarray]], grid=None, band=None,
              backend=None, start=0) -> MeanPath:
    """Compute ``E[-Y_t^l]`` for every slice of every component.

    ``fields_by_component[l][j]`` is the field of component ``l`` on slice
    ``start + j``.  Each expectation is a separate backward pass to the root.
    """
    if backend is None:
        backend = GExpectation(grid, band)
    cols = [backend.means([-np.asarray(v) for v in comp]) for comp in fields_by_component]
    return MeanPath(start=start, m=np.column_stack(cols))


def build_reflection(path: MeanPath, weights: Weights) -> ReflectionPath:
    """Running-supremum construction of ``R`` on the slices of ``path``."""
    lvals = project_l(path.m, weights)
    lnorm = project_norm(path.m, weights)
    shift = np.maximum.accumulate(lvals[::-1], axis=0)[::-1]
    shift_norm = np.maximum.accumulate(lnorm[::-1])[::-1]
    return ReflectionPath(
        start=path.start,
        r=shift[0] - shift,
        r_norm=shift_norm[0] - shift_norm,
        shift=shift,
        shift_norm=shift_norm,
    )


def shift_solution(base, shifts):
    """Add the deterministic shift ``shifts[j, l]`` to ``base[l].y[j]``.

    ``z`` and ``k`` are carried over unchanged.
    """
    shifts = np.asarray(shifts, dtype=float)
    if shifts.ndim != 2 or shifts.shape[1] != len(base):
        raise DimensionMismatch(f"shifts of shape {shifts.shape} for {len(base)} components")
    out = []
    for l, sol in enumerate(base):
        if shifts.shape[0] != len(sol.y):
            raise DimensionMismatch(
                f"{shifts.shape[0]} shift slices for a solution with {len(sol.y)} slices"
            )
        out.append(replace(sol, y=[v + shifts[j, l] for j, v in enumerate(sol.y)]))
    return out


def check_constraint(y_by_component, weights: Weights, grid=None, band=None, backend=None,
                     stride=1) -> np.ndarray:
    """``s(t) = sum_l theta^l E[-Y_t^l]`` per slice.

    With ``stride > 1`` only every ``stride``-th slice (and the last one) is
    evaluated; the others are NaN.
    """
    if len(y_by_component) != weights.n:
        raise DimensionMismatch(f"{len(y_by_component)} components for {weights.n} weights")
    n = len(y_by_component[0])
    idx = sorted(set(range(0, n, stride)) | {n - 1})
    sub = [[comp[j] for j in idx] for comp in y_by_component]
    vals = mean_path(sub, grid, band, backend).aggregate(weights)
    out = np.full(n, np.nan)
    out[idx] = vals
    return out


def flatness_increments(constraint_path, r_norm) -> np.ndarray:
    """Per-slice terms ``s(t_k) * (|R|_{k+1} - |R|_k)`` of the Skorokhod sum."""
    s = np.asarray(constraint_path, dtype=float)
    r = np.asarray(r_norm, dtype=float)
    if s.shape != r.shape:
        raise DimensionMismatch(f"constraint path {s.shape} vs reflection {r.shape}")
    return s[:-1] * np.diff(r)


def check_flatness(constraint_path, reflection) -> float:
    """Discrete Stieltjes sum ``sum_k s(t_k) (|R|_{k+1} - |R|_k)``."""
    r_norm = getattr(reflection, "r_norm", reflection)
    return float(np.sum(flatness_increments(constraint_path, r_norm)))
