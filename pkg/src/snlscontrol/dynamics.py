"""Time integration: forward state, linearized variation, and dual test equations.

One Strang step is (a) half free flow exp(i k^2 dt/2) in Fourier space,
(b) full pointwise phase exp(-i dt (lam |X|^(alpha-1) + V0 + u.V)), exact
because the substep preserves |X|, (c) the exact conservative noise substep
X -> X exp(i sum_j m_j e_j dbeta_j), (d) half free flow.  Every substep is
unitary or unit-modulus pointwise, so mass is conserved to roundoff and the
Stratonovich correction -mu X dt is absorbed analytically.
"""

from __future__ import annotations

import numpy as np

from .core import Field, Grid, boundary_mass_fraction
from .model import CostSpec, NoiseSpec, PhysicsSpec, Problem

__all__ = [
    "NumericalAbort",
    "MassDriftError",
    "ControlPath",
    "TrajectoryRecord",
    "LinearizedTrajectory",
    "step_forward",
    "solve_forward",
    "solve_variation",
    "solve_dual_test",
    "energy",
    "mass",
]

BLOWUP_GUARD = 1.0e6  # abort when max |X| exceeds this (focusing blow-up proxy)
MASS_DRIFT_TOL = 1.0e-10  # relative, enforced on every conservative forward run


class NumericalAbort(RuntimeError):
    """Raised when a solve produces NaN or trips the blow-up guard."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class MassDriftError(NumericalAbort):
    """Mass conservation violated beyond the solver tolerance."""


class ControlPath:
    """Piecewise-constant control u_k in R^m on cells [t_k, t_{k+1})."""

    def __init__(self, values, dt: float, admissible=None):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.ndim != 2:
            raise ValueError("control values must have shape (K, m)")
        if not (dt > 0):
            raise ValueError("dt must be positive")
        if admissible is not None and not admissible.contains(values, tol=1e-12):
            raise ValueError("control path leaves the admissible set")
        values = values.copy()
        values.setflags(write=False)
        self.values = values
        self.dt = float(dt)

    @classmethod
    def constant(cls, value, n_steps: int, dt: float, admissible=None) -> "ControlPath":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(value, (n_steps, 1)), dt, admissible)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def replace(self, values, admissible=None) -> "ControlPath":
        return ControlPath(values, self.dt, admissible)


class _StepContext:
    """Precomputed arrays shared by every step of one solve."""

    def __init__(self, problem: Problem, dt: float):
        grid, phys, noise = problem.grid, problem.physics, problem.noise
        self.grid = grid
        self.dt = dt
        self.lam = phys.lam
        self.alpha = phys.alpha
        self.V0 = phys.V0
        self.V = np.stack(phys.V)  # (m, *shape)
        self.half_flow = np.exp(0.5j * dt * grid.k_squared)
        self.half_flow_inv = np.conj(self.half_flow)
        if noise.n_drivers:
            profiles = np.stack(noise.profiles)  # (N, *shape)
            self.noise_weights = np.asarray(noise.intensities)[:, None] * profiles.reshape(
                noise.n_drivers, -1
            )
        else:
            self.noise_weights = None
        self.spectral_scale = grid.cell_volume / np.prod(grid.shape)

    def potential_phase(self, u_k) -> np.ndarray:
        return self.V0 + np.tensordot(u_k, self.V, axes=(0, 0))

    def noise_phase(self, dbeta_k) -> np.ndarray | None:
        if self.noise_weights is None or dbeta_k.size == 0:
            return None
        return (dbeta_k @ self.noise_weights).reshape(self.grid.shape)


def _advance(ctx: _StepContext, X, u_k, dbeta_k):
    """One Strang step; returns (X_next, spectrum of X_next before the ifft)."""
    X = np.fft.ifftn(np.fft.fftn(X) * ctx.half_flow)
    r = np.abs(X)
    theta = ctx.lam * r ** (ctx.alpha - 1.0) + ctx.potential_phase(u_k)
    X = X * np.exp(-1j * ctx.dt * theta)
    phase = ctx.noise_phase(dbeta_k)
    if phase is not None:
        X = X * np.exp(1j * phase)
    spectrum = np.fft.fftn(X) * ctx.half_flow
    return np.fft.ifftn(spectrum), spectrum


def step_forward(X_k, u_k, dbeta_k, dt: float, problem: Problem) -> np.ndarray:
    """Advance one state one step.  For whole trajectories use solve_forward."""
    ctx = _StepContext(problem, dt)
    values = X_k.values if isinstance(X_k, Field) else np.asarray(X_k, complex)
    X_next, _ = _advance(ctx, values, np.atleast_1d(u_k), np.atleast_1d(dbeta_k))
    _guard(X_next, 1, dt)
    return X_next


def _guard(X, step: int, dt: float):
    peak = np.abs(X).max()
    if not np.isfinite(peak):
        raise NumericalAbort(f"NaN/Inf detected at step {step}", step=step, time=step * dt)
    if peak > BLOWUP_GUARD:
        raise NumericalAbort(
            f"blow-up guard tripped at step {step}: max|X| = {peak:.3e}",
            step=step,
            time=step * dt,
        )


class TrajectoryRecord:
    """States X(t_k) along one noise path, plus running diagnostics.

    Snapshots are stored at every node by default; above a memory budget a
    checkpoint/recompute scheme stores every `stride`-th state and replays a
    segment on demand (the forward map is deterministic given the stored
    control and noise path).
    """

    def __init__(self, problem, control, path, dt, snapshots, checkpoints, stride,
                 mass_series, energy_series, boundary_series):
        self.problem = problem
        self.grid = problem.grid
        self.control = control
        self.path = path
        self.dt = dt
        self.n_steps = control.n_steps
        self._snapshots = snapshots  # full array when stride == 1, else None
        self._checkpoints = checkpoints
        self._stride = stride
        self._segment_index = -1
        self._segment = None
        self.mass_series = mass_series
        self.energy_series = energy_series
        self.boundary_series = boundary_series

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def stride(self) -> int:
        return self._stride

    def state(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.n_steps:
            raise ValueError(f"node index {k} outside 0..{self.n_steps}")
        if self._snapshots is not None:
            return self._snapshots[k]
        j = k // self._stride
        if j != self._segment_index:
            self._replay_segment(j)
        return self._segment[k - j * self._stride]

    def _replay_segment(self, j: int):
        ctx = _StepContext(self.problem, self.dt)
        k0 = j * self._stride
        k1 = min(k0 + self._stride, self.n_steps)
        seg = np.empty((k1 - k0 + 1,) + self.grid.shape, dtype=np.complex128)
        seg[0] = self._checkpoints[j]
        X = seg[0]
        for k in range(k0, k1):
            X, _ = _advance(ctx, X, self.control.values[k], self.path.increments[k])
            seg[k - k0 + 1] = X
        self._segment_index = j
        self._segment = seg

    @property
    def final(self) -> np.ndarray:
        return self.state(self.n_steps)

    def max_mass_drift(self) -> float:
        m0 = self.mass_series[0]
        if m0 == 0:
            return 0.0
        return float(np.abs(self.mass_series - m0).max() / m0)


def _energy_from_spectrum(ctx: _StepContext, X, spectrum) -> float:
    kinetic = 0.5 * float(
        (ctx.grid.k_squared * (spectrum.real**2 + spectrum.imag**2)).sum()
        * ctx.spectral_scale
    )
    potential = float((np.abs(X) ** (ctx.alpha + 1.0)).sum() * ctx.grid.cell_volume)
    return kinetic - ctx.lam / (ctx.alpha + 1.0) * potential


def solve_forward(
    problem: Problem,
    x,
    u: ControlPath,
    path,
    *,
    snapshot_stride: int = 1,
    memory_budget_mb: float | None = None,
    enforce_mass: bool = True,
) -> TrajectoryRecord:
    """Integrate the state equation along one noise path.

    Pre: the control and noise grids agree (same K and dt).  Mass conservation
    is enforced to MASS_DRIFT_TOL relative; NaN or blow-up aborts the solve
    with the offending step index.
    """
    grid = problem.grid
    K = u.n_steps
    if problem.noise.n_drivers and path.n_steps != K:
        raise ValueError(f"noise path has {path.n_steps} steps, control has {K}")
    if problem.noise.n_drivers and not np.isclose(path.dt, u.dt):
        raise ValueError("control and noise path disagree on dt")
    if u.m != problem.physics.m:
        raise ValueError(f"control has m = {u.m}, physics has m = {problem.physics.m}")
    dt = u.dt
    ctx = _StepContext(problem, dt)

    x0 = x.values if isinstance(x, Field) else np.asarray(x, dtype=np.complex128)
    if x0.shape != grid.shape:
        raise ValueError("initial state shape does not match the grid")

    stride = max(1, int(snapshot_stride))
    snap_bytes = 16 * x0.size
    if memory_budget_mb is not None:
        budget = memory_budget_mb * 1e6
        while (K // stride + 2) * snap_bytes > budget and stride <= K:
            stride *= 2

    mass_series = np.empty(K + 1)
    energy_series = np.empty(K + 1)
    boundary_series = np.empty(K + 1)

    X = x0.astype(np.complex128, copy=True)
    spectrum0 = np.fft.fftn(X)
    mass_series[0] = np.sqrt((np.abs(X) ** 2).sum() * grid.cell_volume)
    energy_series[0] = _energy_from_spectrum(ctx, X, spectrum0)
    boundary_series[0] = boundary_mass_fraction(X, grid)

    if stride == 1:
        snapshots = np.empty((K + 1,) + grid.shape, dtype=np.complex128)
        snapshots[0] = X
        checkpoints = None
    else:
        snapshots = None
        checkpoints = np.empty((K // stride + 1,) + grid.shape, dtype=np.complex128)
        checkpoints[0] = X

    for k in range(K):
        X, spectrum = _advance(ctx, X, u.values[k], path.increments[k])
        _guard(X, k + 1, dt)
        mass_series[k + 1] = np.sqrt((np.abs(X) ** 2).sum() * grid.cell_volume)
        energy_series[k + 1] = _energy_from_spectrum(ctx, X, spectrum)
        boundary_series[k + 1] = boundary_mass_fraction(X, grid)
        if stride == 1:
            snapshots[k + 1] = X
        elif (k + 1) % stride == 0:
            checkpoints[(k + 1) // stride] = X

    record = TrajectoryRecord(
        problem, u, path, dt, snapshots, checkpoints, stride,
        mass_series, energy_series, boundary_series,
    )
    if enforce_mass and mass_series[0] > 0:
        drift = record.max_mass_drift()
        if drift > MASS_DRIFT_TOL:
            raise MassDriftError(
                f"relative mass drift {drift:.3e} exceeds {MASS_DRIFT_TOL:.1e}"
            )
    return record


class LinearizedTrajectory:
    """Solution of a linearized (variation or dual-test) solve on the node grid."""

    def __init__(self, dt: float, snapshots: np.ndarray):
        self.dt = dt
        self.snapshots = snapshots
        self.n_steps = snapshots.shape[0] - 1

    def state(self, k: int) -> np.ndarray:
        return self.snapshots[k]

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]


def _modulus_kick(X_star, r, phi, alpha, lam):
    """(alpha-1) |X|^(alpha-3) Re(conj(X) phi) X, continuously extended at 0.

    Computed with the unit phase factored out so tiny |X| cannot overflow.
    """
    out = np.zeros_like(phi)
    mask = r > 0
    xm, rm = X_star[mask], r[mask]
    unit = xm.real / rm + 1j * (xm.imag / rm)
    out[mask] = (
        lam
        * (alpha - 1.0)
        * rm ** (alpha - 1.0)
        * (np.conj(unit) * phi[mask]).real
        * unit
    )
    return out


def _solve_linearized(base: TrajectoryRecord, problem: Problem, source_at) -> LinearizedTrajectory:
    """Shared propagator: the exact directional derivative of the forward map.

    `source_at(k, X_star)` returns the in-step source injected at the phase
    substep (already including the dt factor), or None.
    """
    ctx = _StepContext(problem, base.dt)
    grid = problem.grid
    K = base.n_steps
    lam, alpha, dt = ctx.lam, ctx.alpha, ctx.dt

    phi = np.zeros(grid.shape, dtype=np.complex128)
    snapshots = np.empty((K + 1,) + grid.shape, dtype=np.complex128)
    snapshots[0] = phi
    for k in range(K):
        X_star = np.fft.ifftn(np.fft.fftn(base.state(k)) * ctx.half_flow)
        r = np.abs(X_star)
        theta = lam * r ** (alpha - 1.0) + ctx.potential_phase(base.control.values[k])
        phase = np.exp(-1j * dt * theta)

        phi = np.fft.ifftn(np.fft.fftn(phi) * ctx.half_flow)
        # derivative of the pointwise phase substep: the |X|^(alpha-1) factor
        # contributes lam (alpha-1) |X|^(alpha-3) Re(conj(X) phi) X
        bracket = phi - 1j * dt * _modulus_kick(X_star, r, phi, alpha, lam)
        src = source_at(k, X_star)
        if src is not None:
            bracket = bracket + src
        phi = phase * bracket
        noise_phase = ctx.noise_phase(base.path.increments[k])
        if noise_phase is not None:
            phi = phi * np.exp(1j * noise_phase)
        phi = np.fft.ifftn(np.fft.fftn(phi) * ctx.half_flow)
        snapshots[k + 1] = phi
    return LinearizedTrajectory(base.dt, snapshots)


def solve_variation(base: TrajectoryRecord, u_dir: ControlPath, problem: Problem) -> LinearizedTrajectory:
    """Directional derivative of the state with respect to the control.

    phi(0) = 0; the control direction enters as the source -i (udir . V) X dt
    at the phase substep, and the nonlinearity is linearized around the stored
    base trajectory.  Exactly linear in u_dir.
    """
    if u_dir.n_steps != base.n_steps:
        raise ValueError("direction and base trajectory disagree on the time grid")
    ctx_V = np.stack(problem.physics.V)
    dt = base.dt

    def source(k, X_star):
        coeff = np.tensordot(u_dir.values[k], ctx_V, axes=(0, 0))
        return -1j * dt * coeff * X_star

    return _solve_linearized(base, problem, source)


def solve_dual_test(base: TrajectoryRecord, source_fields, problem: Problem) -> LinearizedTrajectory:
    """Linearized solve with prescribed source -Psi dt in place of the control term.

    `source_fields` may be a single field (time-constant) or an array of one
    field per step cell (K, *shape) / per node (K+1, *shape; the last entry is
    unused).  Used by the duality check.
    """
    grid = problem.grid
    K = base.n_steps
    if isinstance(source_fields, Field):
        psi_src = np.broadcast_to(source_fields.values, (K,) + grid.shape)
    else:
        arr = np.asarray(source_fields, dtype=np.complex128)
        if arr.shape == grid.shape:
            psi_src = np.broadcast_to(arr, (K,) + grid.shape)
        elif arr.shape[0] in (K, K + 1) and arr.shape[1:] == grid.shape:
            psi_src = arr[:K]
        else:
            raise ValueError("source has wrong shape for the base trajectory")
    dt = base.dt

    def source(k, X_star):
        return -dt * psi_src[k]

    return _solve_linearized(base, problem, source)


def energy(X, physics: PhysicsSpec, grid: Grid | None = None) -> float:
    """H(X) = (1/2) |grad X|_2^2 - lam/(alpha+1) |X|_{alpha+1}^{alpha+1}."""
    values = X.values if isinstance(X, Field) else np.asarray(X)
    g = X.grid if isinstance(X, Field) else grid
    spectrum = np.fft.fftn(values)
    scale = g.cell_volume / values.size
    kinetic = 0.5 * float((g.k_squared * np.abs(spectrum) ** 2).sum() * scale)
    potential = float((np.abs(values) ** (physics.alpha + 1.0)).sum() * g.cell_volume)
    return kinetic - physics.lam / (physics.alpha + 1.0) * potential


def mass(X, grid: Grid | None = None) -> float:
    """The conserved L^2 norm |X|_2."""
    values = X.values if isinstance(X, Field) else np.asarray(X)
    g = X.grid if isinstance(X, Field) else grid
    return float(np.sqrt((np.abs(values) ** 2).sum() * g.cell_volume))
