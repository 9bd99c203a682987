"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run `pytest -sv tests/test_acceptance.py` to see the per-criterion lines.
Tolerances are pinned here and nowhere else.
"""

import math
from pathlib import Path

import numpy as np

from snlscontrol.adjoint import duality_check, solve_backward
from snlscontrol.cli import run
from snlscontrol.core import Field, GridSpec, make_grid
from snlscontrol.dynamics import ControlPath, solve_forward, solve_variation
from snlscontrol.fixtures import bang_bang_problem, plane_wave_problem, tracking_problem
from snlscontrol.model import CostSpec, NoiseSpec, PhysicsSpec, Problem, h1, h2
from snlscontrol.optimizer import bang_bang_example, fd_directional_derivative, gradient, optimize
from snlscontrol.paths import gauge_factor, sample_ensemble, sample_path

REPO = Path(__file__).resolve().parents[1]


def _report(criterion: str, ok: bool, detail: str):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {criterion}: {status} ({detail})", flush=True)
    assert ok, f"{criterion}: {detail}"


def test_c01_mass_conservation():
    # stochastic run, d=1, n=256, T=1, dt=1e-3, N=2, 16 paths
    grid = make_grid(GridSpec(1, 8.0, 256))
    xi = grid.axes[0]
    x0 = Field(grid, np.exp(-(xi**2) / 2)).normalized()
    physics = PhysicsSpec(grid, -1, 3.0, 0.5 * xi**2, (xi**2,))
    noise = NoiseSpec(grid, (0.3, 0.2), (np.ones(grid.shape), np.cos(np.pi * xi / 8.0)), seed=1)
    problem = Problem(grid, physics, noise)
    K, dt = 1000, 1e-3
    u = ControlPath.constant([0.3], K, dt)
    drift = 0.0
    for path in sample_ensemble(noise, 16, K, dt):
        rec = solve_forward(problem, x0, u, path)
        drift = max(drift, rec.max_mass_drift())
    _report("01 mass-conservation", drift <= 1e-10, f"max relative drift {drift:.3e} <= 1e-10")


def test_c02_plane_wave_exactness():
    problem, x0, exact = plane_wave_problem()
    K, dt = 1000, 1e-3
    u = ControlPath.constant([0.0], K, dt)
    rec = solve_forward(problem, x0, u, sample_path(problem.noise, K, dt, 0),
                        enforce_mass=False)
    worst = 0.0
    for k in range(0, K + 1, 100):
        worst = max(worst, np.abs(rec.state(k) - exact(k * dt)).max())
    _report("02 plane-wave-exactness", worst <= 1e-9, f"sup error {worst:.3e} <= 1e-9")


def test_c03_gauge_equivalence():
    problem, cost, admissible, x0 = tracking_problem(noise_intensities=(0.4,), seed=11)
    K, dt = 500, 2e-3
    u = ControlPath.constant([0.3], K, dt)
    path = sample_path(problem.noise, K, dt, 1)
    direct = solve_forward(problem, x0, u, path)
    off = Problem(problem.grid, problem.physics, NoiseSpec.off(problem.grid))
    rescaled = solve_forward(off, x0, u, sample_path(off.noise, K, dt, 1))
    worst = worst_mod = 0.0
    for k in range(0, K + 1, 20):
        factor = gauge_factor(path, problem.noise, problem.grid, k)
        worst = max(worst, np.abs(direct.state(k) - factor * rescaled.state(k)).max())
        worst_mod = max(worst_mod,
                        np.abs(np.abs(rescaled.state(k)) - np.abs(direct.state(k))).max())
    _report("03 gauge-equivalence", worst <= 1e-12 and worst_mod <= 1e-12,
            f"pointwise gap {worst:.3e}, modulus gap {worst_mod:.3e} <= 1e-12")


def test_c04_h_identity():
    gen = np.random.default_rng(123)
    z = 3.0 * (gen.standard_normal(10_000) + 1j * gen.standard_normal(10_000))
    z[:10] = 0.0  # include the origin
    alphas = gen.uniform(2.0, 4.0, size=10_000)
    worst_excess = 0.0
    for alpha in np.unique(alphas):
        mask = alphas == alpha
        zz = z[mask]
        resid = np.abs(
            h1(zz, alpha) * zz + h2(zz, alpha) * np.conj(zz)
            - alpha * np.abs(zz) ** (alpha - 1.0) * zz
        )
        bound = 1e-12 * (1.0 + np.abs(zz) ** alpha)
        worst_excess = max(worst_excess, float((resid / bound).max()))
    _report("04 h-identity", worst_excess <= 1.0,
            f"max residual/bound ratio {worst_excess:.3e} <= 1 over 1e4 samples")


def test_c05_variation_consistency():
    problem, cost, admissible, x0 = tracking_problem()
    K, dt = 500, 2e-3
    u = ControlPath.constant([0.2], K, dt)
    path = sample_path(problem.noise, K, dt, 0)
    base = solve_forward(problem, x0, u, path)
    gen = np.random.default_rng(5)
    direction = ControlPath(0.3 * gen.standard_normal((K, 1)), dt)
    phi = solve_variation(base, direction, problem)
    errors = []
    ladder = (1e-2, 1e-3, 1e-4)
    for eps in ladder:
        pert = solve_forward(problem, x0, u.replace(u.values + eps * direction.values), path)
        quotient = (pert.final - base.final) / eps
        errors.append(math.sqrt(float((np.abs(quotient - phi.final) ** 2).sum())
                                * problem.grid.cell_volume))
    orders = [math.log10(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]
    _report("05 variation-consistency", min(orders) >= 0.9,
            f"errors {['%.2e' % e for e in errors]}, observed orders "
            f"{['%.2f' % o for o in orders]} >= 0.9")


def test_c06_duality_identity():
    problem, cost, admissible, x0 = tracking_problem(gamma1=0.5)
    grid = problem.grid
    gen = np.random.default_rng(3)
    source = ((gen.standard_normal(grid.shape) + 1j * gen.standard_normal(grid.shape))
              * np.exp(-grid.axes[0] ** 2 / 4.0))
    residuals = []
    for dt in (2e-3, 1e-3, 5e-4):
        K = round(1.0 / dt)
        u = ControlPath.constant([0.2], K, dt)
        paths = sample_ensemble(problem.noise, 1, K, dt)
        residuals.append(duality_check(problem, cost, u, source, paths, x0).residual)
    ratios = [residuals[i] / residuals[i + 1] for i in range(len(residuals) - 1)]

    sproblem, scost, _, sx0 = tracking_problem(noise_intensities=(0.2,), seed=7, gamma1=0.5)
    K, dt = 500, 2e-3
    su = ControlPath.constant([0.2], K, dt)
    spaths = sample_ensemble(sproblem.noise, 32, K, dt)
    stochastic = duality_check(sproblem, scost, su, source, spaths, sx0).residual

    ok = residuals[1] <= 5e-3 and min(ratios) >= 1.7 and stochastic <= 1e-2
    _report("06 duality-identity", ok,
            f"det residual at dt=1e-3: {residuals[1]:.3e} <= 5e-3, halving ratios "
            f"{['%.2f' % r for r in ratios]} >= 1.7, stochastic M=32: {stochastic:.3e} <= 1e-2")


def test_c07_gradient_vs_fd():
    gen = np.random.default_rng(17)

    def check(problem, cost, x0, n_paths, tol, dt, K):
        u = ControlPath.constant([0.2], K, dt)
        paths = sample_ensemble(problem.noise, n_paths, K, dt)
        report = gradient(problem, cost, u, x0, paths)
        worst = 0.0
        for _ in range(5):
            direction = ControlPath(0.3 * gen.standard_normal((K, 1)), dt)
            adjoint_value = float((report.eta * direction.values).sum() * dt)
            fd = fd_directional_derivative(problem, cost, u, direction,
                                           (1e-2, 5e-3), x0, paths)
            worst = max(worst, abs(adjoint_value - fd.best) / (1.0 + abs(fd.best)))
        return worst

    dproblem, dcost, _, dx0 = tracking_problem(gamma1=0.5)
    det = check(dproblem, dcost, dx0, 1, 1e-3, 1e-3, 1000)
    sproblem, scost, _, sx0 = tracking_problem(noise_intensities=(0.2,), seed=19, gamma1=0.5)
    sto = check(sproblem, scost, sx0, 64, 1e-2, 2e-3, 500)
    _report("07 gradient-vs-fd", det <= 1e-3 and sto <= 1e-2,
            f"deterministic {det:.3e} <= 1e-3, stochastic CRN M=64 {sto:.3e} <= 1e-2")


def test_c08_optimizer_and_maximum_principle():
    problem, cost, admissible, x0 = tracking_problem()
    K, dt = 100, 1e-2
    u0 = ControlPath.constant([0.0], K, dt, admissible)
    paths = sample_ensemble(problem.noise, 1, K, dt)
    result = optimize(problem, cost, admissible, u0, x0, paths, max_iters=200)
    phis = [h.phi for h in result.history]
    monotone = all(phis[i + 1] <= phis[i] + 1e-15 for i in range(len(phis) - 1))
    residual = result.history[-1].pmp_residual
    det_ok = (monotone and result.iterations <= 200
              and residual <= 1e-3 * admissible.diameter)

    sproblem, scost, sadmissible, sx0 = tracking_problem(noise_intensities=(0.2,), seed=42)
    spaths = sample_ensemble(sproblem.noise, 64, K, dt)
    su0 = ControlPath.constant([0.0], K, dt, sadmissible)
    sresult = optimize(sproblem, scost, sadmissible, su0, sx0, spaths, max_iters=60)
    first, last = sresult.history[0], sresult.history[-1]
    sto_ok = last.phi <= first.phi - 5.0 * last.stderr

    _report("08 optimizer-pmp", det_ok and sto_ok,
            f"deterministic: monotone={monotone}, {result.iterations} iters, residual "
            f"{residual:.3e} <= {1e-3 * admissible.diameter:g}; stochastic M=64: "
            f"decrease {first.phi - last.phi:.3e} >= 5*stderr {5 * last.stderr:.3e}")


def test_c09_bang_bang_structure():
    results = {}
    for kind in ("lower", "upper"):
        problem, cost, admissible, x0, u0 = bang_bang_problem(kind)
        paths = sample_ensemble(problem.noise, 1, u0.n_steps, u0.dt)
        _, report = bang_bang_example(problem, cost, admissible, u0, x0, paths,
                                      max_iters=200, tol_pmp=1e-7)
        results[kind] = report.counts[kind] == u0.n_steps and report.branches_consistent

    problem, cost, admissible, x0, u0 = bang_bang_problem("mixed", n_steps=200, dt=2.5e-3)
    paths = sample_ensemble(problem.noise, 1, u0.n_steps, u0.dt)
    _, mixed = bang_bang_example(problem, cost, admissible, u0, x0, paths,
                                 max_iters=300, tol_pmp=1e-8)
    mixed_ok = (mixed.counts["interior"] > 0
                and mixed.counts["lower"] + mixed.counts["upper"] > 0
                and mixed.max_interior_violation <= 1e-6
                and mixed.branches_consistent)
    _report("09 bang-bang", results["lower"] and results["upper"] and mixed_ok,
            f"lower all-active={results['lower']}, upper all-active={results['upper']}, "
            f"mixed interior violation {mixed.max_interior_violation:.2e} <= 1e-6 "
            f"(cells {mixed.counts})")


def test_c10_energy_order():
    grid = make_grid(GridSpec(1, 8.0, 128))
    xi = grid.axes[0]
    x0 = Field(grid, np.exp(-(xi**2) / 2) * (1 + 0.2 * np.exp(1j * xi))).normalized()
    physics = PhysicsSpec(grid, -1, 3.0, np.zeros(grid.shape), (xi**2,))
    problem = Problem(grid, physics, NoiseSpec.off(grid))
    drifts = []
    for dt in (8e-3, 4e-3, 2e-3, 1e-3):
        K = round(1.0 / dt)
        rec = solve_forward(problem, x0, ControlPath.constant([0.0], K, dt),
                            sample_path(problem.noise, K, dt, 0))
        drifts.append(np.abs(rec.energy_series - rec.energy_series[0]).max()
                      / abs(rec.energy_series[0]))
    slopes = [math.log2(drifts[i] / drifts[i + 1]) for i in range(len(drifts) - 1)]
    ok = all(1.7 <= s <= 2.3 for s in slopes)
    _report("10 energy-order", ok,
            f"slopes over three halvings {['%.2f' % s for s in slopes]} within 2.0 +- 0.3")


def test_c11_replay_determinism(tmp_path):
    config = str(REPO / "configs" / "tracking_noise.cfg")
    outputs = []
    for name, threads in (("t1", "1"), ("t4", "4"), ("t1b", "1")):
        out = tmp_path / name
        code = run(["optimize", "--config", config, "--dt", "0.02", "--paths", "4",
                    "--max-iters", "3", "--out", str(out), "--threads", threads])
        assert code == 0
        outputs.append({f: (out / f).read_bytes()
                        for f in ("iters.csv", "control_final.csv")})
    identical = all(outputs[0] == other for other in outputs[1:])
    _report("11 replay-determinism", identical,
            "byte-identical CSVs across reruns and thread counts 1/4")
