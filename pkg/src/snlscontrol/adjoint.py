"""Backward dual solve, duality-identity verification, and the PMP residual.

The backward equation is solved pathwise in the gauge frame: with conservative
noise the martingale integrand satisfies Z_k = i m_k e_k Y, so the mu Y and
Z terms combine into the same unit-modulus Stratonovich phase as the forward
equation.  The sweep is the time-reversed Strang splitting matched to the
forward scheme: per cell, unwind the half free flows and the noise phase,
apply the pointwise linear substep with coefficients h1, h2 frozen at the
intra-step base state, and attach the gamma1 running source at the node
(adjoint to the left-endpoint cost quadrature).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Field
from .dynamics import (
    ControlPath,
    NumericalAbort,
    TrajectoryRecord,
    _StepContext,
    solve_dual_test,
    solve_forward,
)
from .model import AdmissibleSet, CostSpec, Problem, h2

__all__ = [
    "BackwardSolution",
    "terminal_condition",
    "solve_backward",
    "DualityReport",
    "duality_check",
    "pmp_residual",
    "estimate_martingale_integrand",
]


def terminal_condition(terminal_state, target) -> np.ndarray:
    """Terminal datum Y(T) = -(X(T) - target)."""
    xs = terminal_state.values if isinstance(terminal_state, Field) else np.asarray(terminal_state)
    xt = target.values if isinstance(target, Field) else np.asarray(target)
    if xs.shape != xt.shape:
        raise ValueError("state and target live on different grids")
    return -(xs - xt)


@dataclass
class BackwardSolution:
    """Y(t_k) on the node grid, plus the control coupling accumulated in-step."""

    dt: float
    snapshots: np.ndarray  # (K+1, *shape)
    coupling: np.ndarray | None  # (K, m) quadratures of V_j Im(X conj(Y))
    base: TrajectoryRecord

    def state(self, k: int) -> np.ndarray:
        return self.snapshots[k]

    @property
    def n_steps(self) -> int:
        return self.snapshots.shape[0] - 1


def solve_backward(
    base: TrajectoryRecord,
    cost: CostSpec,
    problem: Problem,
    *,
    compute_coupling: bool = True,
) -> BackwardSolution:
    """March the dual state from t_K to 0 along one stored forward trajectory.

    The coupling g_k = integral V_j Im(X conj(Y)) dxi is evaluated at the
    splitting stage where the control source enters the forward step, which is
    what the discrete cost actually pairs against; pmp_residual and the
    descent step consume exactly this quantity.
    """
    ctx = _StepContext(problem, base.dt)
    grid = problem.grid
    K = base.n_steps
    lam, alpha, dt = ctx.lam, ctx.alpha, ctx.dt
    gamma1 = cost.gamma1
    running = cost.x_running
    V = ctx.V
    m = V.shape[0]

    snapshots = np.empty((K + 1,) + grid.shape, dtype=np.complex128)
    coupling = np.empty((K, m)) if compute_coupling else None

    Y = terminal_condition(base.state(K), cost.x_target.values)
    snapshots[K] = Y
    for k in range(K - 1, -1, -1):
        # unwind the trailing half flow and the noise phase of cell k
        Y = np.fft.ifftn(np.fft.fftn(Y) * ctx.half_flow_inv)
        noise_phase = ctx.noise_phase(base.path.increments[k])
        if noise_phase is not None:
            Y = Y * np.exp(-1j * noise_phase)

        X_star = np.fft.ifftn(np.fft.fftn(base.state(k)) * ctx.half_flow)
        r = np.abs(X_star)
        r_am1 = r ** (alpha - 1.0)
        u_k = base.control.values[k]

        if compute_coupling:
            theta = lam * r_am1 + ctx.potential_phase(u_k)
            X_stage = X_star * np.exp(-1j * dt * theta)
            pair = (X_stage * np.conj(Y)).imag
            coupling[k] = np.tensordot(V, pair, axes=(tuple(range(1, V.ndim)),
                                                      tuple(range(pair.ndim)))) * grid.cell_volume

        # pointwise linear substep, integrated backward over the cell:
        # diagonal exp(+i dt (lam h1 + V0 + u.V)), conjugate coupling explicit
        h1_vals = 0.5 * (alpha + 1.0) * r_am1
        diag = lam * h1_vals + ctx.potential_phase(u_k)
        Y = np.exp(1j * dt * diag) * Y
        Y = Y - 1j * lam * dt * h2(X_star, alpha) * np.conj(Y)

        Y = np.fft.ifftn(np.fft.fftn(Y) * ctx.half_flow_inv)
        if gamma1 > 0:
            x1 = running.at(k, K + 1)
            drift = base.state(k) if x1 is None else base.state(k) - x1
            Y = Y - dt * gamma1 * drift

        if not np.isfinite(Y.view(np.float64)).all():
            raise NumericalAbort(f"backward sweep produced NaN at step {k}", step=k)
        snapshots[k] = Y

    return BackwardSolution(dt, snapshots, coupling, base)


@dataclass(frozen=True)
class DualityReport:
    lambda_value: float
    pairing_value: float
    residual: float
    n_paths: int


def duality_check(
    problem: Problem,
    cost: CostSpec,
    u: ControlPath,
    source,
    paths,
    x0,
    pmap=map,
) -> DualityReport:
    """Primary correctness oracle for solve_backward.

    Computes Lambda(Psi) = E Re<X(T)-X_T, psi(T)> + gamma1 E int Re<X-X_1, psi> dt
    through the dual test solve, and compares with E int Re<Psi, Y> dt from the
    backward solve, on the same path ensemble (common random numbers).
    Residual is |Lambda - pairing| / (1 + |Lambda|).
    """
    grid = problem.grid
    dv = grid.cell_volume
    dt = u.dt
    xt = cost.x_target.values

    if isinstance(source, Field):
        src_at = lambda k: source.values  # noqa: E731
    else:
        arr = np.asarray(source, dtype=np.complex128)
        if arr.shape == grid.shape:
            src_at = lambda k: arr  # noqa: E731
        else:
            src_at = lambda k: arr[k]  # noqa: E731

    def one_path(path):
        rec = solve_forward(problem, x0, u, path)
        psi = solve_dual_test(rec, source, problem)
        back = solve_backward(rec, cost, problem, compute_coupling=False)
        K = rec.n_steps
        lam_val = float(((rec.state(K) - xt) * np.conj(psi.state(K))).sum().real * dv)
        if cost.gamma1 > 0:
            for k in range(K):
                x1 = cost.x_running.at(k, K + 1)
                diff = rec.state(k) if x1 is None else rec.state(k) - x1
                lam_val += cost.gamma1 * float(
                    (diff * np.conj(psi.state(k))).sum().real * dv
                ) * dt
        pair_val = 0.0
        for k in range(K):
            pair_val += float((src_at(k) * np.conj(back.state(k))).sum().real * dv) * dt
        return lam_val, pair_val

    results = list(pmap(one_path, paths))
    lam_mean = float(np.mean([r[0] for r in results]))
    pair_mean = float(np.mean([r[1] for r in results]))
    residual = abs(lam_mean - pair_mean) / (1.0 + abs(lam_mean))
    return DualityReport(lam_mean, pair_mean, residual, len(results))


def pmp_residual(
    u: ControlPath,
    coupling_mean: np.ndarray,
    gamma2: float,
    admissible: AdmissibleSet,
    dt: float | None = None,
) -> float:
    """L^2-in-time distance of u from the projected maximum-principle map.

    residual = (sum_k |u_k - P_U(g_k / gamma2)|^2 dt)^(1/2); zero exactly at a
    maximum-principle point.
    """
    if gamma2 <= 0:
        raise ValueError("pmp_residual requires gamma2 > 0")
    dt = u.dt if dt is None else dt
    target = admissible.project(np.asarray(coupling_mean) / gamma2)
    gap = u.values - target
    return float(np.sqrt((gap**2).sum() * dt))


def estimate_martingale_integrand(backward_solutions, paths) -> np.ndarray:
    """Ensemble regression estimate of the integrand Z_j(t_k).

    Z_j(t_k) is approximated by E[(Y(t_{k+1}) - Y(t_k)) dbeta_{j,k}] / dt over
    the ensemble.  Diagnostic only; never used in the gradient, and with no
    quantitative target asserted.
    """
    if not backward_solutions:
        raise ValueError("empty ensemble")
    K = backward_solutions[0].n_steps
    N = paths[0].n_drivers
    dt = backward_solutions[0].dt
    shape = backward_solutions[0].snapshots.shape[1:]
    out = np.zeros((K, N) + shape, dtype=np.complex128)
    for back, path in zip(backward_solutions, paths):
        dY = np.diff(back.snapshots, axis=0)
        for j in range(N):
            out[:, j] += dY * path.increments[:, j].reshape((K,) + (1,) * len(shape))
    out /= len(backward_solutions) * dt
    return out
