import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import cos, make_problem, sin, sine
from levy_homog.bellman import hamiltonian, solve_parabolic
from levy_homog.cell import local_data
from levy_homog.config import reference_problem
from levy_homog.effective import (
    EffectiveCache,
    EffectiveScheme,
    SeparableReduction,
    check_convexity_in_u,
    check_global_comparison,
    check_holder_in_x,
    check_lipschitz_in_p,
    effective_growth_bound,
    eval_effective,
    fit_growth_constant,
    growth_terms,
    solve_effective_parabolic,
)

TOL = 1e-7


def bump(grid, x, height):
    return grid.from_callable(lambda y: height * (1 - np.cos(2 * np.pi * (y[..., 0] - x))) ** 2 / 4)


def xi_free_problem(slow_n=32, fast_n=16):
    return make_problem(
        [{"terms": [sin(1.0, [1, 0])]}, {"const": 0.2, "terms": [cos(0.5, [1, 0])]}],
        drifts=[{"terms": [cos(0.5, [1, 0])]}, -0.25],
        spatial=[2.0, 1.0],
        slow_n=slow_n,
        fast_n=fast_n,
    )


# --------------------------------------------------------------------------
# evaluation


def test_xi_independent_collapses_to_hamiltonian():
    data = xi_free_problem()
    u = sine(data.slow_grid, 0.5)
    for x, p in [(0.1, 0.5), (0.6, -1.0)]:
        grad = local_data(u, [x], 0.5).gradient
        direct = hamiltonian(data, [x], [0.0], [p], u, grad)
        assert eval_effective(data, [x], [p], u) == pytest.approx(direct, abs=1e-6)


def test_cache_hit_and_purity():
    data = reference_problem(slow_n=32, fast_n=32)
    u = sine(data.slow_grid, 0.5)
    cache = EffectiveCache()
    a = eval_effective(data, [0.25], [0.5], u, cache)
    b = eval_effective(data, [0.25], [0.5], u, cache)
    c = eval_effective(data, [0.25], [0.5], u)
    assert a == b == c
    assert cache.stats() == {"hits": 1, "misses": 1, "entries": 1}


def test_cache_snaps_gradients():
    cache = EffectiveCache(p_quantum=1e-3)
    assert cache.key_p(np.array([0.5004])) == cache.key_p(np.array([0.4996]))
    exact = EffectiveCache(p_quantum=0.0)
    assert exact.key_p(np.array([0.5004])) != exact.key_p(np.array([0.4996]))


def test_separable_reduction_reconstructs():
    data = reference_problem(slow_n=32, fast_n=32)
    u = sine(data.slow_grid, 0.5)
    grad = local_data(u, [0.3], 0.5).gradient
    red = SeparableReduction.compute(data, u, [0.3], grad)
    xis = data.fast_grid.flat_nodes()[::4]
    assert red.reconstruction_error(data, u, [0.3], grad, xis) < 1e-8


@pytest.mark.parametrize("x", [0.125, 0.25, 0.7])
def test_mean_formula_in_x(x):
    data = make_problem([{"terms": [sin(1.0, [1, 0]), sin(1.0, [0, 1])]}], spatial=[1.0], fast_n=64)
    lam = eval_effective(data, [x], [0.0], data.slow_grid.constant(0.0))
    assert lam == pytest.approx(-np.sin(2 * np.pi * x), abs=1e-3)


@given(st.floats(-3, 3))
@settings(max_examples=5)
def test_translation_invariance_in_u(c):
    data = reference_problem(slow_n=32, fast_n=32)
    u = sine(data.slow_grid, 0.5)
    assert eval_effective(data, [0.4], [0.3], u + c) == pytest.approx(eval_effective(data, [0.4], [0.3], u), abs=2 * TOL)


# --------------------------------------------------------------------------
# structural properties


def test_global_comparison_examples():
    data = reference_problem(slow_n=32, fast_n=32)
    g = data.slow_grid
    x = 0.25
    u1 = sine(g, 0.5)
    same = check_global_comparison(data, [x], [0.5], [(u1, u1)])
    assert same["passed"] and same["pairs"][0]["gap"] == 0.0
    rep = check_global_comparison(data, [x], [0.5], [(u1, u1 + bump(g, x, 0.1)), (u1, u1 + bump(g, x, 0.2))])
    assert rep["passed"]
    assert rep["pairs"][1]["gap"] >= rep["pairs"][0]["gap"] - 2 * TOL
    with pytest.raises(ValueError):
        check_global_comparison(data, [x], [0.5], [(u1 + bump(g, x, 0.1), u1)])


def test_convexity_examples():
    data = reference_problem(slow_n=32, fast_n=32)
    g = data.slow_grid
    u1, u2 = sine(g, 0.5), g.from_callable(lambda y: 0.4 * np.cos(2 * np.pi * y[..., 0]))
    same = check_convexity_in_u(data, [0.25], [0.5], u1, u1, [0.5])
    assert same["passed"] and abs(same["rows"][0]["defect"]) <= 2 * TOL
    rep = check_convexity_in_u(data, [0.25], [0.5], u1, u2, [0.25, 0.5, 0.75])
    assert rep["passed"] and all(r["defect"] >= -2 * TOL for r in rep["rows"])
    single = make_problem([{"terms": [sin(1.0, [1, 0]), cos(0.25, [1, -1])]}], drifts=[{"terms": [cos(0.5, [1, 1])]}],
                          spatial=[{"const": 2.0, "terms": [sin(1.0, [1])]}], fast_n=32)
    lin = check_convexity_in_u(single, [0.25], [0.5], u1, u2, [0.25, 0.5, 0.75])
    assert all(abs(r["defect"]) <= 2 * TOL for r in lin["rows"])
    with pytest.raises(ValueError):
        check_convexity_in_u(data, [0.25], [0.5], u1, u2, [1.0])


def test_lipschitz_in_p_examples():
    u = make_problem([0.0]).slow_grid.constant(0.0)
    flat = make_problem([{"terms": [sin(1.0, [1, 1])]}], spatial=[1.0], fast_n=32)
    rep = check_lipschitz_in_p(flat, [0.3], u, [-1.0, 0.0, 2.0])
    assert rep["B"] == 0.0 and max(rep["values"]) - min(rep["values"]) <= 2 * TOL
    unit = make_problem([{"const": 0.3}], drifts=[1.0], spatial=[1.0], fast_n=32)
    rep = check_lipschitz_in_p(unit, [0.3], u, [0.0, 1.0, 3.0])
    assert all(r["quotient"] == pytest.approx(1.0, abs=1e-9) for r in rep["rows"])
    with pytest.raises(ValueError):
        check_lipschitz_in_p(unit, [0.3], u, [0.0])


def test_lipschitz_in_p_reference_bound():
    data = reference_problem(b_amp=2.0, slow_n=32, fast_n=64)
    rep = check_lipschitz_in_p(data, [0.25], sine(data.slow_grid, 0.5), [-2, -1, 0, 1, 2])
    assert rep["B"] == 2.0
    assert rep["max_quotient"] <= 2.01 and rep["passed"]


def test_holder_in_x_examples():
    flat = make_problem([{"terms": [sin(1.0, [0, 1])]}], spatial=[1.0], fast_n=32)
    pairs = [([0.0], [0.25]), ([0.0], [0.125]), ([0.0], [0.0625])]
    rep = check_holder_in_x(flat, [0.0], lambda y: 0 * y[..., 0], pairs, 0.5)
    assert all(r["diff"] <= 2 * TOL for r in rep["rows"])
    data = make_problem([{"terms": [sin(1.0, [1, 0]), sin(1.0, [0, 1])]}], spatial=[1.0], fast_n=64)
    rep = check_holder_in_x(data, [0.0], lambda y: 0 * y[..., 0], [([0.1], [0.35]), ([0.1], [0.225]), ([0.1], [0.1625])], 0.5)
    for r in rep["rows"]:
        expected = abs(np.sin(2 * np.pi * r["x1"][0]) - np.sin(2 * np.pi * r["x2"][0]))
        assert r["diff"] == pytest.approx(expected, abs=2e-3)
    assert rep["passed"]


def test_growth_bound_examples():
    data = reference_problem(slow_n=32, fast_n=32)
    u = sine(data.slow_grid, 0.5)
    t = growth_terms(data, [0.3], [0.3], [0.5], [0.5], u, u, 0.5, 0.5)
    assert t["lhs"] == 0.0 and t["growth"] == 0.0 and t["drift_term"] == 0.0 and t["nonlocal_term"] == 0.0
    shifted = growth_terms(data, [0.3], [0.3], [0.5], [0.5], u, u + 1.5, 0.5, 0.5)
    assert abs(shifted["lhs"]) <= 2 * TOL and abs(shifted["nonlocal_term"]) < 1e-9
    only_p = growth_terms(data, [0.3], [0.3], [0.5], [1.5], u, u, 0.5, 0.5)
    assert only_p["lhs"] <= only_p["drift_term"] + 2 * TOL


def test_growth_bound_calibrated_constant_holds():
    data = reference_problem(slow_n=32, fast_n=32)
    g = data.slow_grid
    rng = np.random.default_rng(3)

    def sample():
        x1, x2 = rng.uniform(0, 1, size=2)
        p1, p2 = rng.uniform(-1, 1, size=2)
        u1 = sine(g, rng.uniform(0.2, 0.6))
        u2 = g.from_callable(lambda y: rng.uniform(0.2, 0.6) * np.cos(2 * np.pi * y[..., 0]))
        return [x1], [x2], [p1], [p2], u1, u2

    calib = [growth_terms(data, *sample(), 0.5, 0.5) for _ in range(6)]
    C = fit_growth_constant(calib)
    assert np.isfinite(C)
    for _ in range(4):
        lhs, rhs = effective_growth_bound(data, *sample(), 0.5, 0.5, C=3 * C + 1.0)
        assert lhs <= rhs


# --------------------------------------------------------------------------
# effective parabolic problem


def test_effective_parabolic_xi_independent_matches_bellman():
    data = xi_free_problem(slow_n=64, fast_n=16)
    u0 = sine(data.slow_grid, 0.5)
    eff = solve_effective_parabolic(data, u0, 0.25, snapshot_times=[0.25])
    osc = solve_parabolic(data, u0, 0.25, snapshot_times=[0.25])
    assert np.abs(eff.snapshots[-1].values - osc.snapshots[-1].values).max() <= 5e-3


def test_effective_parabolic_constant_cost():
    data = make_problem([{"const": 0.6}], spatial=[1.0], fast_n=16)
    u0 = data.slow_grid.constant(0.3)
    sol = solve_effective_parabolic(data, u0, 0.25, snapshot_times=[0.125, 0.25])
    for t, u in zip(sol.times, sol.snapshots):
        assert np.allclose(u.values, u0.values + 0.6 * t, atol=1e-9)


def test_effective_parabolic_ordered_data():
    data = reference_problem(slow_n=16, fast_n=32)
    u0 = sine(data.slow_grid, 0.5)
    v0 = u0 + bump(data.slow_grid, 0.3, 0.4)
    a = solve_effective_parabolic(data, u0, 0.05, snapshot_times=[0.05])
    b = solve_effective_parabolic(data, v0, 0.05, snapshot_times=[0.05])
    assert np.all(a.snapshots[-1].values <= b.snapshots[-1].values + 1e-8)


def test_effective_scheme_monotone_by_perturbation():
    data = reference_problem(slow_n=16, fast_n=32)
    scheme = EffectiveScheme(data)
    tau = 1.0 / scheme.max_diagonal()
    v = sine(data.slow_grid, 0.5).values

    def step(w):
        return w - tau * scheme.hamiltonian(w)

    base = step(v)
    for j in (0, 5, 11):
        w = v.copy()
        w[j] += 0.05
        assert np.all(step(w) >= base - 1e-8)


def test_effective_parabolic_cache_purity():
    data = reference_problem(slow_n=16, fast_n=32)
    u0 = sine(data.slow_grid, 0.5)
    a = solve_effective_parabolic(data, u0, 0.02, snapshot_times=[0.02])
    cache = EffectiveCache(p_quantum=0.0)
    b = solve_effective_parabolic(data, u0, 0.02, cache=cache, snapshot_times=[0.02])
    assert np.array_equal(a.snapshots[-1].values, b.snapshots[-1].values)
    assert b.meta["cache"]["misses"] > 0
