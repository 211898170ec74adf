"""Mean reflection under a nonlinear expectation dominated by the G-expectation.

Two instances ship: the G-expectation itself and the mixture

    E~[X] = (1 - eps) E_ref[X] + eps E^[X]

where ``E_ref`` is the linear trinomial expectation at a fixed volatility
inside the band.  Both expose ``means(fields)``, so they plug into
:mod:`mrgbsde.reflection` and :mod:`mrgbsde.picard` as the ``backend``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidSpec
from .lattice import ClassicalExpectation, GExpectation, TreeGrid, VolatilityBand
from .reflection import Weights, project_l

__all__ = [
    "DominatedExpectationSpec",
    "MixtureExpectation",
    "make_backend",
    "tilde_expectation",
    "check_dominance",
    "DominanceReport",
    "project_l_tilde",
]

VARIANTS = ("g_expectation", "epsilon_mixture")


@dataclass(frozen=True)
class DominatedExpectationSpec:
    variant: str = "g_expectation"
    epsilon: Optional[float] = None
    reference_sigma: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidSpec(f"unknown expectation variant {self.variant!r}")
        if self.variant == "epsilon_mixture":
            if self.epsilon is None or self.reference_sigma is None:
                raise InvalidSpec("epsilon_mixture needs epsilon and reference_sigma")
            if not 0.0 <= self.epsilon <= 1.0:
                raise InvalidSpec(f"epsilon must lie in [0, 1], got {self.epsilon}")
            if not self.reference_sigma > 0:
                raise InvalidSpec("reference_sigma must be positive")

    def validate(self, band: VolatilityBand):
        """Raise unless the reference volatility lies inside ``band``."""
        if self.variant == "epsilon_mixture":
            s = self.reference_sigma
            if not band.sigma_low <= s <= band.sigma_high:
                raise InvalidSpec(
                    f"reference_sigma {s} outside the band "
                    f"[{band.sigma_low}, {band.sigma_high}]"
                )

    def to_dict(self) -> dict:
        if self.variant == "g_expectation":
            return {"variant": self.variant}
        return {"variant": self.variant, "epsilon": self.epsilon,
                "reference_sigma": self.reference_sigma}


class MixtureExpectation:
    """``(1 - eps) E_ref + eps E^`` on the lattice."""

    def __init__(self, grid: TreeGrid, band: VolatilityBand, epsilon: float, reference_sigma: float):
        self.grid = grid
        self.band = band
        self.epsilon = float(epsilon)
        self.g = GExpectation(grid, band)
        self.ref = ClassicalExpectation(grid, reference_sigma)

    def means(self, fields) -> np.ndarray:
        fields = list(fields)
        out = self.epsilon * self.g.means(fields)
        if self.epsilon < 1.0:
            out = out + (1.0 - self.epsilon) * self.ref.means(fields)
        return out

    def expect(self, field) -> float:
        return float(self.means([field])[0])


def make_backend(spec: DominatedExpectationSpec, grid: TreeGrid, band: VolatilityBand,
                 strict=True):
    """Expectation back-end for ``spec``.

    ``strict=False`` skips the band check so that deliberately invalid
    mixtures can be probed by :func:`check_dominance`.
    """
    if spec.variant == "g_expectation":
        return GExpectation(grid, band)
    if strict:
        spec.validate(band)
    return MixtureExpectation(grid, band, spec.epsilon, spec.reference_sigma)


def tilde_expectation(terminal, spec: DominatedExpectationSpec, grid: TreeGrid,
                      band: VolatilityBand) -> float:
    return make_backend(spec, grid, band).expect(terminal)


@dataclass(frozen=True)
class DominanceReport:
    dominance: float
    sandwich: float

    @property
    def worst(self) -> float:
        return max(self.dominance, self.sandwich)


def check_dominance(spec: DominatedExpectationSpec, grid: TreeGrid, band: VolatilityBand,
                    probes=1000, seed=0, k=None, extra_pairs=()) -> DominanceReport:
    """Probe ``E~[X] - E~[Y] <= E^[X - Y]`` and the sandwich chain.

    Random pairs ``(X, Y)`` are drawn on slice ``k`` (default: the last
    slice, capped at 50 for speed).  ``extra_pairs`` adds hand-built pairs.
    Returns the largest violation of each inequality (``<= 0`` means none).
    """
    if probes < 1:
        raise ValueError("need at least one probe")
    tilde = make_backend(spec, grid, band, strict=False)
    hat = GExpectation(grid, band)
    if k is None:
        k = min(grid.n_steps, 50)
    rng = np.random.default_rng(seed)
    m = 2 * k + 1
    xs, ys = [], []
    for i in range(probes):
        kind = i % 3
        if kind == 0:
            xs.append(rng.normal(size=m))
            ys.append(rng.normal(size=m))
        elif kind == 1:
            # smooth payoffs with curvature of either sign
            pos = np.linspace(-1.0, 1.0, m)
            a, b = rng.normal(size=2)
            xs.append(a * pos**2 + rng.normal() * pos)
            ys.append(b * pos**2 + rng.normal() * pos)
        else:
            xs.append(rng.uniform(-1, 1, m) * rng.uniform(0, 5))
            ys.append(np.full(m, rng.normal()))
    for x, y in extra_pairs:
        xs.append(np.asarray(x, dtype=float))
        ys.append(np.asarray(y, dtype=float))
    xs_a, ys_a = xs, ys
    diff = [a - b for a, b in zip(xs_a, ys_a)]
    tx, ty = tilde.means(xs_a), tilde.means(ys_a)
    dom = float(np.max(tx - ty - hat.means(diff)))
    hx = hat.means(xs_a)
    neg_hx = hat.means([-a for a in xs_a])
    neg_tx = tilde.means([-a for a in xs_a])
    chain = np.maximum.reduce([
        -neg_hx - (-neg_tx),  # -E^[-X] <= -E~[-X]
        -neg_tx - tx,  # -E~[-X] <= E~[X]
        tx - hx,  # E~[X] <= E^[X]
    ])
    return DominanceReport(dominance=dom, sandwich=float(np.max(chain)))


def project_l_tilde(tilde_means, weights: Weights) -> np.ndarray:
    """Projection with means taken under the dominated expectation."""
    return project_l(tilde_means, weights)
