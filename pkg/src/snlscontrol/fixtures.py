"""Built-in benchmark problems so every check runs with zero external data.

All fixtures are 1-d, defocusing (lam = -1), cubic (alpha = 3) and live on
[-8, 8) except the plane-wave fixture on [-pi, pi).  Parameters were chosen
so that boundary mass stays negligible and, for the bang-bang constructions,
the control-to-mismatch response keeps a definite sign over the horizon.
"""

from __future__ import annotations

import numpy as np

from .core import Field, GridSpec, make_grid
from .dynamics import ControlPath, solve_forward
from .model import AdmissibleSet, CostSpec, NoiseSpec, PhysicsSpec, Problem
from .paths import sample_path

__all__ = [
    "plane_wave_problem",
    "tracking_grid",
    "tracking_problem",
    "bang_bang_problem",
    "single_mode_source_problem",
]


def plane_wave_problem(n: int = 64, amplitude: float = 0.7, k_mode: int = 2,
                       lam: int = -1, alpha: float = 3.0):
    """Plane wave on [-pi, pi): every splitting substep is exact for it.

    Returns (problem, x0, exact) where exact(t) gives the closed-form state
    A exp(i k xi) exp(i (k^2 - lam |A|^(alpha-1)) t).
    """
    grid = make_grid(GridSpec(1, np.pi, n))
    xi = grid.axes[0]
    x0 = Field(grid, amplitude * np.exp(1j * k_mode * xi))
    physics = PhysicsSpec(grid, lam, alpha, np.zeros(grid.shape), (xi**2,))
    problem = Problem(grid, physics, NoiseSpec.off(grid))

    def exact(t: float) -> np.ndarray:
        omega = k_mode**2 - lam * abs(amplitude) ** (alpha - 1.0)
        return amplitude * np.exp(1j * k_mode * xi) * np.exp(1j * omega * t)

    return problem, x0, exact


def tracking_grid(n: int = 64):
    return make_grid(GridSpec(1, 8.0, n))


def tracking_problem(
    n: int = 64,
    noise_intensities=(),
    seed: int = 42,
    gamma1: float = 0.0,
    gamma2: float = 0.1,
    target_shift: float = 0.4,
):
    """Gaussian-to-shifted-Gaussian tracking with a harmonic control potential.

    Returns (problem, cost, admissible, x0).  Deterministic when
    noise_intensities is empty; the stochastic benchmark uses (0.2,).
    """
    grid = tracking_grid(n)
    xi = grid.axes[0]
    x0 = Field(grid, np.exp(-(xi**2) / 2.0)).normalized()
    target = Field(grid, np.exp(-((xi - target_shift) ** 2) / 2.0)).normalized()
    physics = PhysicsSpec(grid, -1, 3.0, 0.5 * xi**2, (xi**2,))
    noise = (
        NoiseSpec.constant_profiles(grid, noise_intensities, seed)
        if noise_intensities
        else NoiseSpec.off(grid, seed)
    )
    running = x0.values if gamma1 > 0 else None
    cost = CostSpec(grid, gamma1, gamma2, 0.0, target, running)
    admissible = AdmissibleSet.box([-2.0], [2.0])
    return Problem(grid, physics, noise), cost, admissible, x0


def bang_bang_problem(kind: str, n_steps: int = 50, dt: float = 1e-2, n: int = 64):
    """m = 1, U = [0, 1] fixtures with engineered coupling signs.

    kind = 'lower': the target is generated by an (inadmissible) negative
    control, so the coupling stays strictly negative and the optimum pins at
    0.  kind = 'upper': generated by a control above the box, coupling stays
    above gamma2 * ell, optimum pins at 1.  kind = 'mixed': a sinusoidal
    generating control exceeding the box part of the time yields both
    boundary-active and interior cells.

    Returns (problem, cost, admissible, x0, u0).
    """
    grid = tracking_grid(n)
    xi = grid.axes[0]
    x0 = Field(grid, np.exp(-(xi**2) / 2.0)).normalized()
    physics = PhysicsSpec(grid, -1, 3.0, 0.5 * xi**2, (xi**2,))
    noise = NoiseSpec.off(grid)
    problem = Problem(grid, physics, noise)
    admissible = AdmissibleSet.box([0.0], [1.0])

    if kind == "lower":
        generator = np.full((n_steps, 1), -0.6)
        gamma2 = 0.02
    elif kind == "upper":
        generator = np.full((n_steps, 1), 1.4)
        gamma2 = 0.002
    elif kind == "mixed":
        t_cells = dt * np.arange(n_steps)
        generator = (0.5 + 1.0 * np.sin(2.0 * np.pi * t_cells))[:, None]
        gamma2 = 0.1
    else:
        raise ValueError(f"unknown bang-bang fixture kind {kind!r}")

    path = sample_path(noise, n_steps, dt, 0)
    record = solve_forward(problem, x0, ControlPath(generator, dt), path)
    cost = CostSpec(grid, 0.0, gamma2, 0.0, Field(grid, record.final))
    u0 = ControlPath.constant([0.5], n_steps, dt, admissible)
    return problem, cost, admissible, x0, u0


def single_mode_source_problem(n: int = 32, k_mode: int = 1, omega: float | None = None,
                               gamma1: float = 1.0, n_steps: int = 400, dt: float = 2.5e-3):
    """Zero state, single-Fourier-mode running target: the backward solve has
    a closed-form per-mode solution (Duhamel sum = geometric series).

    Returns (problem, cost, x0, u, path, exact_backward) where
    exact_backward(k) is the analytic value of the discrete backward state at
    node k.  With omega = -k_mode^2 (resonant in this sign convention) the
    left-endpoint sum also equals the continuum Duhamel integral exactly.
    """
    grid = make_grid(GridSpec(1, np.pi, n))
    xi = grid.axes[0]
    kappa = k_mode * np.pi / grid.extent  # integer mode on the unit-scaled box
    if omega is None:
        omega = kappa**2
    physics = PhysicsSpec(grid, -1, 3.0, np.zeros(grid.shape), (np.zeros(grid.shape),))
    problem = Problem(grid, physics, NoiseSpec.off(grid))
    x0 = Field.zero(grid)
    mode = np.exp(1j * kappa * xi)
    t_nodes = dt * np.arange(n_steps + 1)
    running = np.exp(1j * omega * t_nodes)[:, None] * mode[None, :]
    cost = CostSpec(grid, gamma1, 0.0, 0.0, Field.zero(grid), running)
    u = ControlPath.constant([0.0], n_steps, dt)
    path = sample_path(problem.noise, n_steps, dt, 0)

    def exact_backward(k: int) -> np.ndarray:
        # Y_k = gamma1 dt sum_{j=k}^{K-1} exp(-i kappa^2 (t_j - t_k)) X1_hat(t_j)
        j = np.arange(k, n_steps)
        phases = np.exp(-1j * (kappa**2) * (dt * j - dt * k) + 1j * omega * dt * j)
        return gamma1 * dt * phases.sum() * mode

    return problem, cost, x0, u, path, exact_backward
