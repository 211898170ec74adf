import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrgbsde import (
    DimensionMismatch,
    TreeGrid,
    VolatilityBand,
    Weights,
    build_reflection,
    check_constraint,
    check_flatness,
    h_value,
    mean_path,
    project_l,
)
from mrgbsde.gbsde import BsdeSolution
from mrgbsde.reflection import MeanPath, ReflectionPath, project_norm, shift_solution

import oracles

BAND = VolatilityBand(0.5, 1.0)


def test_weights_validation():
    with pytest.raises(ValueError, match="sums to 1.1"):
        Weights([0.5, 0.6])
    with pytest.raises(ValueError):
        Weights([1.2, -0.2])
    assert Weights([0.25, 0.75]).n == 2


def test_projection_examples():
    w = Weights([0.5, 0.5])
    np.testing.assert_allclose(project_l([1.0, -0.2], w), [0.4, 0.4], atol=1e-15)
    assert project_norm([1.0, -0.2], w) == pytest.approx(0.565685, abs=1e-6)
    np.testing.assert_allclose(project_l([1.0, -0.2], w), oracles.grid_qp_2d(w.array, [1.0, -0.2]),
                               atol=1e-9)

    w2 = Weights([0.2, 0.8])
    out = project_l([2.0, 0.0], w2)
    np.testing.assert_allclose(out, [0.4 * 0.2 / 0.68, 0.4 * 0.8 / 0.68], atol=1e-15)
    assert out[0] == pytest.approx(0.117647, abs=1e-6)
    assert out[1] == pytest.approx(0.470588, abs=1e-6)
    assert float(w2.array @ out) == pytest.approx(0.4, abs=1e-15)
    np.testing.assert_allclose(out, oracles.grid_qp_2d(w2.array, [2.0, 0.0]), atol=1e-9)


def test_projection_zero_when_feasible():
    w = Weights([0.3, 0.3, 0.4])
    assert np.all(project_l([-1.0, 0.5, 0.1], w) == 0.0)
    assert project_norm([-1.0, 0.5, 0.1], w) == 0.0


def test_h_value_examples():
    w = Weights([0.5, 0.5])
    assert h_value([0.4, 0.4], [1.0, -0.2], w) == pytest.approx(0.0, abs=1e-15)
    assert h_value([0.0, 0.0], [1.0, -0.2], w) == pytest.approx(0.4)
    assert h_value([2.0], [1.0], Weights([1.0])) == -1.0
    with pytest.raises(DimensionMismatch):
        h_value([1.0], [1.0, 2.0], w)


def test_projection_matches_least_squares_oracle():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        n = int(rng.integers(1, 6))
        th = rng.dirichlet(np.ones(n))
        m = rng.normal(size=n) * 3
        w = Weights(th / th.sum())
        np.testing.assert_allclose(project_l(m, w), oracles.min_norm_projection(w.array, m),
                                   atol=1e-9)


def test_minimality_against_sampled_feasible_points():
    rng = np.random.default_rng(8)
    w = Weights([0.2, 0.5, 0.3])
    m = np.array([1.0, 0.4, -0.3])
    best = np.linalg.norm(project_l(m, w))
    xs = rng.normal(scale=1.5, size=(100_000, 3))
    feasible = h_value(xs, m, w) <= 0
    assert feasible.sum() > 1000
    assert np.min(np.linalg.norm(xs[feasible], axis=1)) >= best - 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(0.01, 1), min_size=3, max_size=3))
def test_projection_continuity(m1, m2, raw):
    th = np.array(raw) / sum(raw)
    th[-1] = 1.0 - th[:-1].sum()
    w = Weights(th)
    diff = np.abs(project_l(m1, w) - project_l(m2, w))
    bound = w.array / w.sq_sum * float(w.array @ np.abs(np.subtract(m1, m2)))
    assert np.all(diff <= bound + 1e-12)


def _case_one_path(n=100):
    t = np.linspace(0.0, 1.0, n + 1)
    v = 1.0 - 2.0 * (1.0 - t)
    return t, MeanPath(start=0, m=(-v)[:, None])


def test_build_reflection_case_one():
    t, mp = _case_one_path()
    refl = build_reflection(mp, Weights([1.0]))
    # dense scan of sup_{s >= t} L(s)
    ref_shift = np.array([np.max(np.maximum(mp.m[j:, 0], 0.0)) for j in range(t.size)])
    np.testing.assert_allclose(refl.shift[:, 0], ref_shift, atol=1e-15)
    np.testing.assert_allclose(refl.shift[:, 0], np.maximum(1 - 2 * t, 0), atol=1e-12)
    np.testing.assert_allclose(refl.r[:, 0], np.minimum(2 * t, 1), atol=1e-12)
    assert refl.r[0, 0] == 0.0


def test_build_reflection_feasible_path_is_zero():
    mp = MeanPath(start=0, m=np.tile([-0.5, 0.2], (30, 1)))
    refl = build_reflection(mp, Weights([0.5, 0.5]))
    assert np.all(refl.r == 0.0)


def test_reflection_support_single_interior_maximum():
    t = np.linspace(0, 1, 201)
    agg = 1.0 - 4.0 * (t - 0.6) ** 2  # single interior maximum at t = 0.6
    mp = MeanPath(start=0, m=agg[:, None])
    refl = build_reflection(mp, Weights([1.0]))
    inc = np.diff(refl.r[:, 0])
    assert np.all(inc >= 0)
    # the running supremum over [t, T] is flat up to the peak
    assert np.all(inc[t[1:] <= 0.6 + 1e-12] == 0.0)
    assert np.all(inc[t[:-1] >= 0.6 - 1e-12][:-1] > 0)


def test_reflection_moves_only_where_supremum_is_attained():
    rng = np.random.default_rng(11)
    for _ in range(50):
        m = np.cumsum(rng.normal(size=120)) * 0.1
        refl = build_reflection(MeanPath(0, m[:, None]), Weights([1.0]))
        lval = np.maximum(m, 0.0)
        running = np.array([np.max(lval[j:]) for j in range(m.size)])
        moved = np.diff(refl.r[:, 0]) > 0
        # an increment on [k, k+1] requires L at k to be the running sup
        assert np.all(lval[:-1][moved] == running[:-1][moved])


def test_reflection_proportional_to_weights():
    rng = np.random.default_rng(9)
    w = Weights([0.2, 0.3, 0.5])
    mp = MeanPath(start=0, m=rng.normal(size=(50, 3)))
    refl = build_reflection(mp, w)
    ratios = refl.r / w.array
    np.testing.assert_allclose(ratios, ratios[:, :1] * np.ones((1, 3)), atol=1e-12)
    assert np.all(np.diff(refl.r, axis=0) >= 0)


def test_zero_weight_component_not_reflected():
    w = Weights([0.0, 1.0])
    mp = MeanPath(start=0, m=np.array([[5.0, 1.0], [5.0, 0.5], [5.0, -1.0]]))
    refl = build_reflection(mp, w)
    assert np.all(refl.r[:, 0] == 0.0)


def _flat_solution(grid, values):
    return BsdeSolution(start=0, y=[np.full(2 * k + 1, v) for k, v in enumerate(values)],
                        z=[np.zeros(2 * k + 1) for k in range(len(values))])


def test_shift_solution_examples():
    grid = TreeGrid.for_band(1.0, 100, BAND)
    t = grid.times
    base = _flat_solution(grid, 1.0 - 2.0 * (1.0 - t))
    same = shift_solution([base], np.zeros((101, 1)))
    assert all(np.array_equal(a, b) for a, b in zip(same[0].y, base.y))
    shifted = shift_solution([base], np.maximum(1 - 2 * t, 0)[:, None])
    for k in range(101):
        np.testing.assert_allclose(shifted[0].y[k], max(2 * t[k] - 1, 0), atol=1e-12)
    assert shifted[0].z is base.z
    with pytest.raises(DimensionMismatch):
        shift_solution([base], np.zeros((100, 1)))


def test_constant_shift_lowers_mean_by_shift():
    grid = TreeGrid.for_band(1.0, 30, BAND)
    rng = np.random.default_rng(10)
    base = BsdeSolution(start=0, y=[rng.normal(size=2 * k + 1) for k in range(31)], z=[])
    c = 0.37
    up = shift_solution([base], np.full((31, 1), c))
    before = mean_path([base.y], grid, BAND).m[:, 0]
    after = mean_path([up[0].y], grid, BAND).m[:, 0]
    np.testing.assert_allclose(before - after, c, atol=1e-12)


def test_constraint_case_one():
    grid = TreeGrid.for_band(1.0, 100, BAND)
    t = grid.times
    ys = [[np.full(2 * k + 1, max(2 * t[k] - 1, 0)) for k in range(101)]]
    s = check_constraint(ys, Weights([1.0]), grid, BAND)
    np.testing.assert_allclose(s, -np.maximum(2 * t - 1, 0), atol=1e-12)
    assert np.all(s[t <= 0.5] == 0.0)
    sparse = check_constraint(ys, Weights([1.0]), grid, BAND, stride=10)
    assert np.isnan(sparse[5]) and sparse[10] == s[10] and sparse[-1] == s[-1]


def test_constraint_flags_terminal_violation():
    grid = TreeGrid.for_band(1.0, 10, BAND)
    ys = [[np.full(21, -1.0)], [np.full(21, 0.5)]]
    s = check_constraint(ys, Weights([0.5, 0.5]), grid, BAND)
    assert s[-1] == pytest.approx(0.25)


def test_flatness():
    t = np.linspace(0, 1, 101)
    s = -np.maximum(2 * t - 1, 0)
    refl = build_reflection(MeanPath(0, (1 - 2 * t)[:, None]), Weights([1.0]))
    assert check_flatness(s, refl) == 0.0
    zero = ReflectionPath(0, np.zeros((101, 1)), np.zeros(101), np.zeros((101, 1)), np.zeros(101))
    assert check_flatness(s, zero) == 0.0

    mass = 0.05
    bumped = refl.r_norm.copy()
    bumped[81:] += mass  # jump at a slice where s = -0.6
    residual = check_flatness(s, bumped)
    assert abs(residual) >= 0.1 * mass
    with pytest.raises(DimensionMismatch):
        check_flatness(s[:-1], refl)


def test_modulus_diagnostic():
    t, mp = _case_one_path(100)
    assert mp.modulus(Weights([1.0])) == pytest.approx(0.02, abs=1e-12)
    assert math.isfinite(mp.modulus(Weights([1.0])))
