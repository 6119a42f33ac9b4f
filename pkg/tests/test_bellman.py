import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import cos, make_problem, sin, sine
from levy_homog.bellman import (
    CFLError,
    DiscreteBellman,
    bellman_operator,
    check_commensurate,
    eps_grid,
    explicit_euler,
    hamiltonian,
    lipschitz_scaling_probe,
    solve_parabolic,
    solve_stationary_discounted,
    time_grid,
)
from levy_homog.grid import TorusGrid
from levy_homog.nonlocal_ops import HALF_LAPLACIAN_CONSTANT

C1 = HALF_LAPLACIAN_CONSTANT[1]


def with_sources(problem, sources):
    ops = [type(op)(op.grid, op.drift, s, factors=op.factors, stencil=op.stencil, dense=op.dense) for op, s in zip(problem.ops, sources)]
    return DiscreteBellman(problem.grid, ops)


# --------------------------------------------------------------------------
# pointwise Hamiltonian


def test_hamiltonian_constant_u_zero_p():
    data = make_problem([{"const": 0.3, "terms": [cos(1.0, [1, 1])]}])
    u = data.slow_grid.constant(1.0)
    f = float(data.cost_at(0, [0.2], [0.7]))
    assert hamiltonian(data, [0.2], [0.7], [0.0], u, [0.0]) == pytest.approx(-f)


def test_hamiltonian_two_costs():
    data = make_problem([{"const": 0.5}, {"const": -0.25}])
    u = data.slow_grid.constant(0.0)
    assert hamiltonian(data, [0.1], [0.4], [0.0], u, [0.0]) == pytest.approx(-(-0.25))


def test_hamiltonian_pure_drift():
    data = make_problem([0.0], drifts=[1.0])
    u = data.slow_grid.constant(0.0)
    assert hamiltonian(data, [0.1], [0.4], [2.0], u, [0.0]) == pytest.approx(-2.0)


# --------------------------------------------------------------------------
# stationary discounted problem


@pytest.mark.parametrize("method", ["howard", "explicit"])
def test_stationary_constant_source(method):
    data = make_problem([{"const": 0.7}, {"const": 0.7}], drifts=[{"terms": [cos(1.0, [1, 1])]}, -0.5],
                        spatial=[{"const": 2.0, "terms": [cos(1.0, [1])]}, 1.0])
    res = solve_stationary_discounted(bellman_operator(data, data.fast_grid), 0.5, method=method)
    assert np.allclose(res.psi.values, 0.7 / 0.5, atol=1e-6)


@pytest.mark.parametrize("method", ["howard", "explicit"])
def test_stationary_fourier_oracle(method):
    # -L = (-Delta)^{1/2}: (delta + 2 pi) psi_hat = f_hat on the sine mode
    data = make_problem([{"terms": [sin(1.0, [1, 0])]}], spatial=[C1], slow_n=256, fast_n=256)
    g = TorusGrid(1, 256)
    res = solve_stationary_discounted(bellman_operator(data, g), 1.0, tol=1e-9, method=method)
    oracle = sine(g).values / (1.0 + 2 * np.pi)
    assert np.abs(res.psi.values - oracle).max() <= 0.02 * np.abs(oracle).max()


def test_stationary_duplicate_controls():
    cost = {"terms": [sin(1.0, [1, 0]), cos(0.3, [0, 1])]}
    drift = {"terms": [cos(0.5, [1, 1])]}
    single = make_problem([cost], drifts=[drift])
    double = make_problem([cost, cost], drifts=[drift, drift], spatial=[1.0, 1.0])
    g = single.fast_grid
    a = solve_stationary_discounted(bellman_operator(single, g), 0.5, tol=1e-10).psi.values
    b = solve_stationary_discounted(bellman_operator(double, g), 0.5, tol=1e-10).psi.values
    assert np.allclose(a, b, atol=1e-10)


def test_howard_and_explicit_agree():
    data = make_problem([{"terms": [sin(1.0, [1, 0])]}, {"terms": [cos(1.0, [1, 0])]}],
                        drifts=[{"terms": [cos(0.5, [1, 1])]}, {"terms": [cos(-0.5, [1, 1])]}], spatial=[2.0, 1.0])
    problem = bellman_operator(data, data.fast_grid)
    a = solve_stationary_discounted(problem, 0.5, tol=1e-9, method="howard").psi.values
    b = solve_stationary_discounted(problem, 0.5, tol=1e-9, method="explicit").psi.values
    assert np.abs(a - b).max() < 1e-7


def test_stationary_rejects_bad_discount():
    data = make_problem([0.0])
    with pytest.raises(ValueError):
        solve_stationary_discounted(bellman_operator(data, data.fast_grid), 0.0)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 2.0))
def test_stationary_comparison_and_contraction(seed, delta):
    data = make_problem([0.0, 0.0], drifts=[{"terms": [cos(0.8, [1, 1])]}, -0.3], spatial=[1.0, 2.0], fast_n=16)
    base = bellman_operator(data, data.fast_grid)
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(2, 16))
    g = f + np.abs(rng.normal(size=(2, 16)))
    mats = base.matrices()
    pf = solve_stationary_discounted(with_sources(base, f), delta, tol=1e-10, matrices=mats)
    pg = solve_stationary_discounted(with_sources(base, g), delta, tol=1e-10, matrices=mats)
    # a larger source gives a larger discounted solution
    assert np.all(pf.psi.values <= pg.psi.values + 1e-9)
    assert np.abs(pf.psi.values - pg.psi.values).max() <= np.abs(f - g).max() / delta + 1e-9
    assert pf.psi.sup_norm() <= np.abs(f).max() / delta + 1e-9


# --------------------------------------------------------------------------
# parabolic solver


def test_parabolic_zero_hamiltonian():
    data = make_problem([0.0], spatial=[0.0])
    u0 = sine(data.slow_grid, 0.5)
    sol = solve_parabolic(data, u0, 0.25, snapshot_times=[0.125, 0.25])
    for u in sol.snapshots:
        assert np.array_equal(u.values, u0.values)


def test_parabolic_constant_cost_ode():
    data = make_problem([{"const": 0.8}], spatial=[0.0])
    u0 = data.slow_grid.constant(0.0)
    sol = solve_parabolic(data, u0, 0.5, snapshot_times=[0.25, 0.5])
    for t, u in zip(sol.times, sol.snapshots):
        assert np.allclose(u.values, 0.8 * t, atol=1e-12)


def test_parabolic_sup_norm_barrier_and_export(tmp_path):
    data = make_problem([{"terms": [sin(1.0, [1, 0]), cos(0.25, [1, -1])]}, {"terms": [cos(1.0, [1, 0])]}],
                        drifts=[{"terms": [cos(0.5, [1, 1])]}, {"terms": [cos(-0.5, [1, 1])]}],
                        spatial=[{"const": 2.0, "terms": [cos(1.0, [1])]}, 2.0])
    u0 = sine(data.slow_grid, 0.5)
    sol = solve_parabolic(data, u0, 0.25, eps=0.25, snapshot_times=[0.0625, 0.125, 0.25])
    for t, u in zip(sol.times, sol.snapshots):
        assert u.sup_norm() <= u0.sup_norm() + data.M * t + 1e-12
    assert sol.cfl["cfl_number"] <= 1.0 + 1e-12
    manifest = sol.export(str(tmp_path))
    assert len(manifest["snapshots"]) == 3
    assert json.loads((tmp_path / "u_manifest.json").read_text())["tau"] == sol.tau


@given(st.integers(0, 2**31 - 1))
def test_parabolic_comparison(seed):
    data = make_problem([{"terms": [sin(1.0, [1, 0]), cos(0.5, [1, 1])]}, {"terms": [cos(1.0, [1, -1])]}],
                        drifts=[{"terms": [cos(0.5, [1, 1])]}, 0.3], spatial=[2.0, 1.0], slow_n=16, fast_n=16)
    problem = bellman_operator(data, data.slow_grid, 0.5)
    rng = np.random.default_rng(seed)
    u0 = rng.normal(size=16)
    v0 = u0 + np.abs(rng.normal(size=16))
    su = explicit_euler(problem, u0, 0.05, [0.025, 0.05])
    sv = explicit_euler(problem, v0, 0.05, [0.025, 0.05])
    for a, b in zip(su.snapshots, sv.snapshots):
        assert np.all(a.values <= b.values + 1e-8)
        # nonexpansive in the sup norm
        assert np.abs(a.values - b.values).max() <= np.abs(u0 - v0).max() + 1e-8


def test_parabolic_rejects_large_step():
    data = make_problem([0.0], drifts=[1.0])
    with pytest.raises(CFLError):
        solve_parabolic(data, data.slow_grid.constant(0.0), 0.1, tau=1.0)


def test_time_grid_hits_snapshots():
    tau, steps, idx = time_grid(0.25, 0.003, [0.0625, 0.125, 0.25])
    assert steps * tau == pytest.approx(0.25) and tau <= 0.003
    assert [i * tau for i in idx] == pytest.approx([0.0625, 0.125, 0.25])


def test_commensurate_eps():
    assert check_commensurate(0.25, 64) == 4
    with pytest.raises(ValueError):
        check_commensurate(1 / 3, 64)
    with pytest.raises(ValueError):
        check_commensurate(0.3, 64)
    data = make_problem([0.0], slow_n=64, fast_n=128)
    assert eps_grid(data, 0.25).n == 512


def test_lipschitz_probe_baseline():
    data = make_problem([{"terms": [sin(1.0, [1, 0])]}], spatial=[1.0])
    rows = lipschitz_scaling_probe(data, [1.0, 2.0], n=64)
    assert rows[0]["ratio"] == 1.0
    # the problem is linear in the source for a single control
    assert rows[1]["ratio"] == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(ValueError):
        lipschitz_scaling_probe(data, [0.5], n=64)
