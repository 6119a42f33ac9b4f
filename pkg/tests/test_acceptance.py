"""Acceptance suite: one test and one summary line per criterion.

Run as ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE  # noqa: E402
from helpers import cos, make_problem, sin  # noqa: E402
from levy_homog.bellman import hamiltonian, lipschitz_scaling_probe  # noqa: E402
from levy_homog.cell import (  # noqa: E402
    build_cell_problem,
    cell_from_tables,
    corrector_lipschitz_report,
    implied_constant_spread,
    solve_cell,
)
from levy_homog.cli import main  # noqa: E402
from levy_homog.config import problem_from_spec, reference_problem, reference_problem_spec  # noqa: E402
from levy_homog.effective import (  # noqa: E402
    check_convexity_in_u,
    check_global_comparison,
    check_lipschitz_in_p,
    eval_effective,
)
from levy_homog.grid import TorusGrid, lipschitz_seminorm, upwind_gradient  # noqa: E402
from levy_homog.homog import discrete_comparison_suite, run_convergence_study  # noqa: E402
from levy_homog.kernels import Modulation, drift_correction, separable_kernel  # noqa: E402
from levy_homog.nonlocal_ops import (  # noqa: E402
    apply_levy,
    fractional_laplacian_half,
    half_laplacian_kernel,
)

ROOT = Path(__file__).resolve().parent.parent
SOLVER_TOL = 1e-7  # default cell-solve tolerance


def record(k: int, passed: bool, measured: str) -> bool:
    line = f"CRITERION {k}: {'PASS' if passed else 'FAIL'} {measured}"
    ACCEPTANCE[k] = line
    print(line)
    return passed


def reference_u(data):
    return data.slow_grid.from_callable(lambda x: 0.5 * np.sin(2 * np.pi * x[..., 0]))


def test_spectral_oracle():
    t0 = time.time()
    g = TorusGrid(1, 256)
    kernel = half_laplacian_kernel(1)
    pts = np.arange(256)
    worst = 0.0
    for k in (1, 2, 4):
        f = g.from_callable(lambda x: np.cos(2 * np.pi * k * x[..., 0]))
        grad = upwind_gradient(f, 0.0)
        vals = np.array([apply_levy(kernel, 0, [0.0], f, g.node([i]), grad[:, i]) for i in pts])
        oracle = -fractional_laplacian_half(f).values
        worst = max(worst, np.abs(vals - oracle).max() / np.abs(oracle).max())
    dt = time.time() - t0
    assert record(1, worst <= 0.02 and dt < 5, f"max relative sup error {worst:.4%}, {dt:.1f} s")


def test_fast_trivial_collapse():
    t0 = time.time()
    data = make_problem(
        [{"terms": [sin(1.0, [1, 0])]}, {"const": 0.2, "terms": [cos(0.5, [1, 0])]}],
        drifts=[{"terms": [cos(0.5, [1, 0])]}, -0.25],
        spatial=[2.0, 1.0],
        fast_n=64,
    )
    u = reference_u(data)
    lip, lam_err, eff_err = 0.0, 0.0, 0.0
    for x, p in [(0.25, 0.5), (0.6, -1.0), (0.9, 2.0)]:
        cp = build_cell_problem(data, [x], [p], u)
        ev = solve_cell(cp)
        direct = hamiltonian(data, [x], [0.0], [p], u, cp.local.gradient)
        lip = max(lip, lipschitz_seminorm(ev.psi))
        lam_err = max(lam_err, abs(ev.lam - direct))
        eff_err = max(eff_err, abs(eval_effective(data, [x], [p], u) - direct))
    dt = time.time() - t0
    ok = lip < 1e-4 and lam_err <= 1e-6 and eff_err <= 1e-6 and dt < 30
    assert record(2, ok, f"Lip(psi) {lip:.2e}, |lambda - H| {lam_err:.2e}, |Hbar - H| {eff_err:.2e}, {dt:.1f} s")


def test_mean_formula_oracle():
    t0 = time.time()
    data = make_problem([0.0], spatial=[1.0], fast_n=128)
    xi = data.fast_grid.axis()
    worst = 0.0
    for c in (0.0, 0.7, -1.3):
        f = c + np.sin(2 * np.pi * xi)
        ev = solve_cell(cell_from_tables(data, [0.0], [0.0], f[None]))
        # independent Fourier solve of the linear cell equation
        fh = np.fft.fft(f)
        lam_fourier = -fh[0].real / len(f)
        worst = max(worst, abs(ev.lam + c), abs(ev.lam - lam_fourier))
    dt = time.time() - t0
    assert record(3, worst <= 1e-3 and dt < 30, f"max |lambda + c| {worst:.2e}, {dt:.1f} s")


def test_lipschitz_in_p():
    t0 = time.time()
    data = reference_problem(b_amp=2.0)
    rep = check_lipschitz_in_p(data, [0.25], reference_u(data), [-2, -1, 0, 1, 2])
    dt = time.time() - t0
    ok = rep["B"] == 2.0 and rep["max_quotient"] <= 2.01 and dt < 300
    assert record(4, ok, f"max divided difference {rep['max_quotient']:.4f} (B = {rep['B']}), {dt:.1f} s")


def test_comparison_and_convexity():
    t0 = time.time()
    data = reference_problem()
    tol2 = 2 * SOLVER_TOL
    g = data.slow_grid
    X = g.nodes()[..., 0]
    x = 0.25
    rng = np.random.default_rng(0)
    pairs = []
    for k in range(10):
        u1 = g.function(0.5 * np.sin(2 * np.pi * X) + 0.2 * rng.normal() * np.cos(4 * np.pi * X))
        bump = (1 - np.cos(2 * np.pi * (X - x))) ** 2 / 4 * 0.1 * (k + 1)
        pairs.append((u1, g.function(u1.values + bump)))
    comp = check_global_comparison(data, [x], [0.5], pairs)
    comp_ok = all(r["gap"] >= -tol2 for r in comp["pairs"])
    worst_defect = np.inf
    for _ in range(5):
        u1 = g.function(rng.normal() * np.sin(2 * np.pi * X) + rng.normal() * 0.3 * np.cos(4 * np.pi * X))
        u2 = g.function(rng.normal() * np.cos(2 * np.pi * X) + rng.normal() * 0.3 * np.sin(6 * np.pi * X))
        rep = check_convexity_in_u(data, [x], [0.5], u1, u2, [0.25, 0.5, 0.75])
        worst_defect = min(worst_defect, min(r["defect"] for r in rep["rows"]))
    spec = reference_problem_spec()
    spec["kernel"]["controls"] = 1
    spec["kernel"]["params"]["spatial"] = spec["kernel"]["params"]["spatial"][:1]
    spec["controls"] = spec["controls"][:1]
    single = problem_from_spec(spec)
    lin = check_convexity_in_u(single, [x], [0.5], u1, u2, [0.25, 0.5, 0.75])
    lin_dev = max(abs(r["defect"]) for r in lin["rows"])
    dt = time.time() - t0
    ok = comp_ok and worst_defect >= -tol2 and lin_dev <= tol2 and dt < 300
    min_gap = min(r["gap"] for r in comp["pairs"])
    assert record(
        5, ok, f"min comparison gap {min_gap:.3e}, min convexity defect {worst_defect:.3e}, "
        f"single-control |defect| {lin_dev:.2e} (slack {tol2:.0e}), {dt:.1f} s"
    )


def test_drift_correction():
    t0 = time.time()
    even = separable_kernel([1.0], modulation=[[Modulation("radial_power", (1.0,), 1.0)]], symmetric=False)
    even2d = separable_kernel([1.0], dim=2, modulation=[[Modulation("radial_power", (0.5,), 2.0)]], symmetric=False)
    linear = separable_kernel([1.0], modulation=[[Modulation("linear", (1.0,), 1.0)]], symmetric=False)
    zero = max(np.abs(drift_correction(even, 0, [0.2])).max(), np.abs(drift_correction(even2d, 0, [0.0, 0.0])).max())
    val = float(drift_correction(linear, 0, [0.0])[0])
    rel = abs(val - 2.0) / 2.0
    dt = time.time() - t0
    assert record(6, zero <= 1e-10 and rel <= 0.01 and dt < 1, f"even |b_K| {zero:.1e}, linear b_K {val:.5f} ({rel:.2%}), {dt:.2f} s")


def test_discrete_comparison():
    t0 = time.time()
    rep = discrete_comparison_suite(reference_problem(), trials=10, atol=1e-8)
    worst = max(max(r["oscillatory_violation"], r["effective_violation"], r["stationary_violation"]) for r in rep["trials"])
    dt = time.time() - t0
    assert record(7, rep["passed"] and dt < 120, f"max order violation {worst:.2e} over 10 trials, {dt:.1f} s")


def test_homogenization_convergence():
    t0 = time.time()
    data = reference_problem()
    study = run_convergence_study(data, reference_u(data), 0.25, [0.25, 0.125, 0.0625], threads=4)
    dt = time.time() - t0
    errs = study.max_errors()
    ok = not study.partial and study.verdict is True and errs[-1] < 0.5 * errs[0] and dt < 900
    ratio = errs[-1] / errs[0] if errs else float("nan")
    assert record(8, ok, f"max errors {[round(e, 5) for e in errs]}, ratio {ratio:.3f}, verdict {study.verdict}, {dt:.1f} s")


def test_lipschitz_scaling():
    t0 = time.time()
    data = reference_problem()
    coarse = lipschitz_scaling_probe(data, [1.0, 4.0, 16.0], n=256)
    fine = lipschitz_scaling_probe(data, [1.0, 4.0, 16.0], n=512)
    dt = time.time() - t0
    ratios = {r["s"]: r["ratio"] for r in coarse if r["s"] > 1}
    scaling_ok = all(ratios[s] <= s**0.6 for s in ratios)
    change = max(abs(f["lip"] - c["lip"]) / c["lip"] for c, f in zip(coarse, fine))
    ok = scaling_ok and change < 0.10 and dt < 600
    msg = ", ".join(f"s={s:g}: {r:.4f} vs bound {s ** 0.6:.4f}" for s, r in ratios.items())
    assert record(9, ok, f"{msg}; n=512 relative change {change:.2%}, {dt:.1f} s")


def test_corrector_lipschitz_bound():
    t0 = time.time()
    data = reference_problem()
    u = reference_u(data)
    reps = []
    for p in (0.0, 2.0, 8.0):
        cp = build_cell_problem(data, [0.25], [p], u)
        reps.append(corrector_lipschitz_report(solve_cell(cp), cp, 0.5))
    spread = implied_constant_spread(reps)
    dt = time.time() - t0
    assert record(10, spread < 3.0 and dt < 300, f"implied constant spread {spread:.3f}, {dt:.1f} s")


def test_converge_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv("LEVY_HOMOG_OUT", raising=False)
    cfg = str(ROOT / "configs" / "quick.json")
    codes = [main(["converge", "--config", cfg, "--out", str(tmp_path / d), "--threads", "4"]) for d in ("a", "b")]
    a = (tmp_path / "a" / "errors.csv").read_bytes()
    b = (tmp_path / "b" / "errors.csv").read_bytes()
    rows = len(a.splitlines()) - 1
    assert record(11, codes == [0, 0] and a == b, f"exit codes {codes}, errors.csv identical: {a == b} ({rows} rows)")


if __name__ == "__main__":
    code = pytest.main([__file__, "-v", "-s", "-p", "no:cacheprovider"])
    for k in sorted(ACCEPTANCE):
        print(ACCEPTANCE[k])
    sys.exit(code)
