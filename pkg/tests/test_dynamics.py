import math

import numpy as np
import pytest

from snlscontrol.core import Field, GridSpec, StrichartzPair, lp_norm, make_grid, strichartz_norm
from snlscontrol.dynamics import (
    ControlPath,
    NumericalAbort,
    energy,
    mass,
    solve_dual_test,
    solve_forward,
    solve_variation,
    step_forward,
)
from snlscontrol.fixtures import plane_wave_problem, tracking_problem
from snlscontrol.model import AdmissibleSet, NoiseSpec, PhysicsSpec, Problem
from snlscontrol.paths import gauge_factor, refine_path, sample_ensemble, sample_path


def test_plane_wave_exactness():
    problem, x0, exact = plane_wave_problem()
    K, dt = 1000, 1e-3
    u = ControlPath.constant([0.0], K, dt)
    path = sample_path(problem.noise, K, dt, 0)
    rec = solve_forward(problem, x0, u, path, enforce_mass=False)
    assert np.abs(rec.final - exact(K * dt)).max() <= 1e-9


def test_single_step_consistency():
    problem, x0, exact = plane_wave_problem()
    for dt in (1e-2, 1e-3, 1e-4):
        stepped = step_forward(x0, [0.0], [], dt, problem)
        assert np.abs(stepped - x0.values).max() <= 10.0 * dt  # X + O(dt)
        assert np.abs(stepped - exact(dt)).max() <= 1e-12


def test_gauge_multiplied_plane_wave():
    # constant-profile noise multiplies the exact plane wave by e^W, modulus unchanged
    grid = make_grid(GridSpec(1, math.pi, 64))
    xi = grid.axes[0]
    x0 = Field(grid, 0.5 * np.exp(1j * xi))
    phys = PhysicsSpec(grid, -1, 3.0, np.zeros(grid.shape), (np.ones(grid.shape),))
    noise = NoiseSpec.constant_profiles(grid, (0.7,), seed=3)
    problem = Problem(grid, phys, noise)
    K, dt = 400, 2.5e-3
    u = ControlPath.constant([0.0], K, dt)
    path = sample_path(noise, K, dt, 2)
    rec = solve_forward(problem, x0, u, path, enforce_mass=False)
    omega = 1.0 - (-1) * 0.5**2
    exact = 0.5 * np.exp(1j * xi) * np.exp(1j * omega * K * dt)
    exact = exact * gauge_factor(path, noise, grid, K)
    assert np.abs(rec.final - exact).max() <= 1e-9
    assert np.abs(np.abs(rec.final) - 0.5).max() <= 1e-12


def test_mass_conservation_stochastic():
    problem, cost, admissible, x0 = tracking_problem(noise_intensities=(0.4, 0.2), seed=9)
    K, dt = 200, 5e-3
    u = ControlPath.constant([0.5], K, dt)
    for path in sample_ensemble(problem.noise, 4, K, dt):
        rec = solve_forward(problem, x0, u, path)
        assert rec.max_mass_drift() <= 1e-10
        assert abs(rec.mass_series[0] - 1.0) <= 1e-13


def test_zero_horizon():
    problem, cost, admissible, x0 = tracking_problem()
    # a single tiny step is the shortest run; snapshots at both nodes
    u = ControlPath.constant([0.0], 1, 1e-8)
    rec = solve_forward(problem, x0, u, sample_path(problem.noise, 1, 1e-8, 0))
    assert rec.n_steps == 1
    assert np.abs(rec.state(0) - x0.values).max() == 0.0


def test_gauge_equivalence_invariant():
    problem, cost, admissible, x0 = tracking_problem(noise_intensities=(0.4,), seed=11)
    K, dt = 300, 2.5e-3
    u = ControlPath.constant([0.3], K, dt)
    path = sample_path(problem.noise, K, dt, 1)
    direct = solve_forward(problem, x0, u, path)

    nonoise = Problem(problem.grid, problem.physics, NoiseSpec.off(problem.grid))
    gauge_run = solve_forward(nonoise, x0, u, sample_path(nonoise.noise, K, dt, 1))
    worst = 0.0
    worst_mod = 0.0
    for k in range(0, K + 1, 25):
        factor = gauge_factor(path, problem.noise, problem.grid, k)
        worst = max(worst, np.abs(direct.state(k) - factor * gauge_run.state(k)).max())
        worst_mod = max(
            worst_mod, np.abs(np.abs(direct.state(k)) - np.abs(gauge_run.state(k))).max()
        )
    assert worst <= 1e-12
    assert worst_mod <= 1e-12


def test_blowup_guard_and_nan_abort():
    grid = make_grid(GridSpec(1, 4.0, 32))
    phys = PhysicsSpec(grid, 1, 3.0, np.zeros(grid.shape), (np.ones(grid.shape),))
    problem = Problem(grid, phys, NoiseSpec.off(grid))
    huge = Field(grid, np.full(grid.shape, 9.9e5 + 0j))
    u = ControlPath.constant([0.0], 5, 1e-3)
    with pytest.raises(NumericalAbort) as info:
        # focusing nonlinear phase of a near-threshold state trips the guard
        solve_forward(problem, Field(grid, huge.values * 1.2), u,
                      sample_path(problem.noise, 5, 1e-3, 0), enforce_mass=False)
    assert info.value.step is not None


def test_control_membership_validation():
    U = AdmissibleSet.box([0.0], [1.0])
    with pytest.raises(ValueError):
        ControlPath(np.full((10, 1), 1.5), 0.1, U)
    ControlPath(np.full((10, 1), 0.5), 0.1, U)


def test_checkpointed_record_matches_full():
    problem, cost, admissible, x0 = tracking_problem(noise_intensities=(0.3,), seed=2)
    K, dt = 64, 5e-3
    u = ControlPath.constant([0.4], K, dt)
    path = sample_path(problem.noise, K, dt, 0)
    full = solve_forward(problem, x0, u, path)
    packed = solve_forward(problem, x0, u, path, snapshot_stride=8)
    assert packed.stride == 8
    for k in (0, 1, 7, 8, 9, 33, 63, 64):
        assert np.array_equal(packed.state(k), full.state(k))
    tiny = solve_forward(problem, x0, u, path, memory_budget_mb=0.01)
    assert tiny.stride > 1
    assert np.allclose(tiny.state(K // 2), full.state(K // 2))


def test_variation_zero_direction():
    problem, cost, admissible, x0 = tracking_problem()
    K, dt = 50, 1e-2
    u = ControlPath.constant([0.2], K, dt)
    base = solve_forward(problem, x0, u, sample_path(problem.noise, K, dt, 0))
    phi = solve_variation(base, ControlPath.constant([0.0], K, dt), problem)
    assert np.abs(phi.snapshots).max() == 0.0


def test_variation_linearity():
    problem, cost, admissible, x0 = tracking_problem(noise_intensities=(0.2,), seed=4)
    K, dt = 80, 5e-3
    u = ControlPath.constant([0.2], K, dt)
    base = solve_forward(problem, x0, u, sample_path(problem.noise, K, dt, 0))
    gen = np.random.default_rng(0)
    direction = ControlPath(gen.standard_normal((K, 1)), dt)
    phi1 = solve_variation(base, direction, problem)
    phi3 = solve_variation(base, direction.replace(3.0 * direction.values), problem)
    assert np.abs(phi3.snapshots - 3.0 * phi1.snapshots).max() <= 1e-12 * max(
        1.0, np.abs(phi3.snapshots).max()
    )


def test_variation_difference_quotient_order():
    problem, cost, admissible, x0 = tracking_problem()
    K, dt = 200, 5e-3
    u = ControlPath.constant([0.2], K, dt)
    path = sample_path(problem.noise, K, dt, 0)
    base = solve_forward(problem, x0, u, path)
    gen = np.random.default_rng(1)
    direction = ControlPath(0.3 * gen.standard_normal((K, 1)), dt)
    phi = solve_variation(base, direction, problem)
    errors = []
    for eps in (1e-2, 1e-3, 1e-4):
        pert = solve_forward(problem, x0, u.replace(u.values + eps * direction.values), path)
        quotient = (pert.final - base.final) / eps
        errors.append(
            math.sqrt(float((np.abs(quotient - phi.final) ** 2).sum()) * problem.grid.cell_volume)
        )
    orders = [math.log10(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]
    assert min(orders) >= 0.9


def test_dual_test_zero_source_and_linearity():
    problem, cost, admissible, x0 = tracking_problem()
    K, dt = 60, 5e-3
    u = ControlPath.constant([0.2], K, dt)
    base = solve_forward(problem, x0, u, sample_path(problem.noise, K, dt, 0))
    zero = np.zeros((K,) + problem.grid.shape, dtype=complex)
    psi0 = solve_dual_test(base, zero, problem)
    assert np.abs(psi0.snapshots).max() == 0.0
    gen = np.random.default_rng(2)
    source = gen.standard_normal((K,) + problem.grid.shape) * np.exp(
        -problem.grid.axes[0] ** 2
    ) * (1.0 + 0.3j)
    a = solve_dual_test(base, source, problem)
    b = solve_dual_test(base, 2.5 * source, problem)
    assert np.abs(b.snapshots - 2.5 * a.snapshots).max() <= 1e-12 * max(
        1.0, np.abs(b.snapshots).max()
    )


def test_energy_examples():
    grid = make_grid(GridSpec(1, math.pi, 64))
    phys = PhysicsSpec(grid, -1, 3.0, np.zeros(grid.shape), (np.ones(grid.shape),))
    assert energy(Field.zero(grid), phys) == 0.0
    A, k = 0.8, 3
    wave = Field(grid, A * np.exp(1j * k * grid.axes[0]))
    expected = 2 * math.pi * (0.5 * A**2 * k**2 + A**4 / 4.0)
    assert energy(wave, phys) == pytest.approx(expected, rel=1e-12)


def test_energy_drift_second_order():
    grid = make_grid(GridSpec(1, 8.0, 128))
    xi = grid.axes[0]
    x0 = Field(grid, np.exp(-(xi**2) / 2) * (1 + 0.2 * np.exp(1j * xi))).normalized()
    phys = PhysicsSpec(grid, -1, 3.0, np.zeros(grid.shape), (xi**2,))
    problem = Problem(grid, phys, NoiseSpec.off(grid))
    drifts = []
    for dt in (8e-3, 4e-3, 2e-3):
        K = round(1.0 / dt)
        rec = solve_forward(problem, x0, ControlPath.constant([0.0], K, dt),
                            sample_path(problem.noise, K, dt, 0))
        drifts.append(np.abs(rec.energy_series - rec.energy_series[0]).max()
                      / abs(rec.energy_series[0]))
    slopes = [math.log2(drifts[i] / drifts[i + 1]) for i in range(len(drifts) - 1)]
    assert all(1.7 <= s <= 2.3 for s in slopes)


def test_global_strang_order():
    problem, cost, admissible, x0 = tracking_problem()
    ref_dt = 2.5e-4
    K_ref = round(1.0 / ref_dt)
    ref = solve_forward(problem, x0, ControlPath.constant([0.3], K_ref, ref_dt),
                        sample_path(problem.noise, K_ref, ref_dt, 0)).final
    errors = []
    for dt in (4e-3, 2e-3, 1e-3):
        K = round(1.0 / dt)
        rec = solve_forward(problem, x0, ControlPath.constant([0.3], K, dt),
                            sample_path(problem.noise, K, dt, 0))
        errors.append(math.sqrt(float((np.abs(rec.final - ref) ** 2).sum())
                                * problem.grid.cell_volume))
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]
    assert min(orders) >= 1.9


def test_strichartz_diagnostic_stable_under_refinement():
    problem, cost, admissible, x0 = tracking_problem(noise_intensities=(0.3,), seed=8)
    pair = StrichartzPair(4, 8, 1)
    K, dt = 100, 5e-3
    path = sample_path(problem.noise, K, dt, 0)
    u = ControlPath.constant([0.4], K, dt)
    rec = solve_forward(problem, x0, u, path)
    coarse_norm = strichartz_norm(
        [rec.state(k) for k in range(K + 1)], dt, pair, problem.grid
    )
    fine_path = refine_path(path, 2)
    fine_u = ControlPath(np.repeat(u.values, 2, axis=0), dt / 2)
    fine_rec = solve_forward(problem, x0, fine_u, fine_path)
    fine_norm = strichartz_norm(
        [fine_rec.state(k) for k in range(2 * K + 1)], dt / 2, pair, problem.grid
    )
    assert np.isfinite(coarse_norm) and np.isfinite(fine_norm)
    assert abs(fine_norm - coarse_norm) <= 0.05 * coarse_norm


def test_mass_matches_lp_norm():
    grid = make_grid(GridSpec(1, math.pi, 32))
    f = Field(grid, np.exp(1j * grid.axes[0]))
    assert mass(f) == pytest.approx(lp_norm(f, 2))
    assert mass(Field.zero(grid)) == 0.0
    assert mass(Field(grid, 3.0 * f.values)) == pytest.approx(3.0 * mass(f))
