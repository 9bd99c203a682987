"""Cost, adjoint gradient, finite-difference oracle, and projected descent.

The descent iteration is the proximal form of the maximum-principle fixed
point: u+ = P_U(u/(1+2 gamma2 rho) + 2 rho/(1+2 gamma2 rho) g) with g the
ensemble-mean coupling Im int V X conj(Y) dxi.  Step sizes are chosen by
Armijo backtracking on the common-random-number cost estimate, so accepted
iterations decrease the sampled cost monotonically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import pmp_residual, solve_backward
from .dynamics import ControlPath, solve_forward
from .model import AdmissibleSet, CostSpec, Problem

__all__ = [
    "CostEstimate",
    "evaluate_cost",
    "GradientReport",
    "gradient",
    "FDReport",
    "fd_directional_derivative",
    "descent_step",
    "IterationState",
    "OptimizeResult",
    "optimize",
    "BangBangReport",
    "classify_bang_bang",
    "bang_bang_example",
]

ARMIJO_C1 = 1e-4


def _require_gamma3_zero(cost: CostSpec, what: str):
    if cost.gamma3 != 0:
        raise ValueError(
            f"{what} requires gamma3 = 0: no gradient formula is available for the "
            "control-derivative penalty, so it is supported in cost reporting only"
        )


@dataclass(frozen=True)
class CostEstimate:
    value: float
    stderr: float
    n_paths: int
    state_terms: np.ndarray  # per-path tracking contributions
    control_term: float  # deterministic gamma2/gamma3 part

    def __float__(self):
        return self.value


def _state_cost(rec, cost: CostSpec) -> float:
    dv = rec.grid.cell_volume
    K = rec.n_steps
    xt = cost.x_target.values
    total = float((np.abs(rec.state(K) - xt) ** 2).sum() * dv)
    if cost.gamma1 > 0:
        run = 0.0
        for k in range(K):
            x1 = cost.x_running.at(k, K + 1)
            diff = rec.state(k) if x1 is None else rec.state(k) - x1
            run += float((np.abs(diff) ** 2).sum() * dv)
        total += cost.gamma1 * run * rec.dt
    return total


def _control_cost(u: ControlPath, cost: CostSpec) -> float:
    vals = u.values
    out = cost.gamma2 * float((vals**2).sum() * u.dt)
    if cost.gamma3 > 0 and u.n_steps >= 2:
        du = np.diff(vals, axis=0)
        out += cost.gamma3 * float((du**2).sum() / u.dt)
    return out


def evaluate_cost(problem: Problem, cost: CostSpec, u: ControlPath, x0, paths, pmap=map) -> CostEstimate:
    """Sample-mean objective over the path ensemble, with its standard error.

    Quadratures use the left-endpoint rule on the step grid; the gamma3 term
    uses forward differences of the piecewise-constant control (reporting
    only: the gradient refuses gamma3 > 0).
    """
    paths = list(paths)
    if not paths:
        raise ValueError("empty path ensemble")
    terms = np.array(
        list(pmap(lambda p: _state_cost(solve_forward(problem, x0, u, p), cost), paths))
    )
    control_term = _control_cost(u, cost)
    value = float(terms.mean()) + control_term
    stderr = float(terms.std(ddof=1) / np.sqrt(len(terms))) if len(terms) > 1 else 0.0
    return CostEstimate(value, stderr, len(terms), terms, control_term)


@dataclass(frozen=True)
class GradientReport:
    """Assembled gradient eta_k = 2 (gamma2 u_k - g_k) and its ensemble spread."""

    eta: np.ndarray  # (K, m)
    stderr: np.ndarray  # (K, m) standard error of eta (= 2 x stderr of g)
    coupling: np.ndarray  # (K, m) ensemble mean of Im int V X conj(Y)
    n_paths: int
    cost: CostEstimate

    def norm(self, dt: float) -> float:
        return float(np.sqrt((self.eta**2).sum() * dt))


def gradient(problem: Problem, cost: CostSpec, u: ControlPath, x0, paths, pmap=map) -> GradientReport:
    """Adjoint-state gradient of the objective over the path ensemble.

    Per path: solve forward, solve backward, accumulate the coupling
    quadratures; then eta_k = 2 (gamma2 u_k - mean g_k) identically.
    """
    _require_gamma3_zero(cost, "gradient")
    paths = list(paths)
    if not paths:
        raise ValueError("empty path ensemble")

    def one_path(path):
        rec = solve_forward(problem, x0, u, path)
        back = solve_backward(rec, cost, problem, compute_coupling=True)
        return _state_cost(rec, cost), back.coupling

    results = list(pmap(one_path, paths))
    terms = np.array([r[0] for r in results])
    couplings = np.stack([r[1] for r in results])  # (M, K, m)
    g_mean = couplings.mean(axis=0)
    if len(paths) > 1:
        g_stderr = couplings.std(axis=0, ddof=1) / np.sqrt(len(paths))
    else:
        g_stderr = np.zeros_like(g_mean)
    eta = 2.0 * (cost.gamma2 * u.values - g_mean)
    control_term = _control_cost(u, cost)
    est = CostEstimate(
        float(terms.mean()) + control_term,
        float(terms.std(ddof=1) / np.sqrt(len(terms))) if len(terms) > 1 else 0.0,
        len(terms),
        terms,
        control_term,
    )
    return GradientReport(eta, 2.0 * g_stderr, g_mean, len(paths), est)


@dataclass(frozen=True)
class FDReport:
    epsilons: tuple
    values: tuple  # central differences per epsilon
    richardson: tuple  # extrapolated values for adjacent halved pairs
    best: float


def fd_directional_derivative(
    problem: Problem,
    cost: CostSpec,
    u: ControlPath,
    u_dir: ControlPath,
    epsilons,
    x0,
    paths,
    admissible: AdmissibleSet | None = None,
    pmap=map,
) -> FDReport:
    """Independent oracle: central differences of the sampled cost along u_dir.

    All evaluations reuse the identical path ensemble (common random numbers).
    Richardson extrapolation is applied to adjacent (eps, eps/2) pairs.
    """
    eps_ladder = tuple(sorted((float(e) for e in epsilons), reverse=True))
    if not eps_ladder:
        raise ValueError("need at least one epsilon")
    paths = list(paths)
    values = []
    for eps in eps_ladder:
        up = u.values + eps * u_dir.values
        um = u.values - eps * u_dir.values
        if admissible is not None:
            for pert in (up, um):
                if not admissible.contains(pert, tol=1e-12):
                    raise ValueError(
                        f"perturbed control leaves the admissible set at eps = {eps:g}"
                    )
        phi_p = evaluate_cost(problem, cost, u.replace(up), x0, paths, pmap).value
        phi_m = evaluate_cost(problem, cost, u.replace(um), x0, paths, pmap).value
        values.append((phi_p - phi_m) / (2.0 * eps))
    richardson = []
    for i in range(len(eps_ladder) - 1):
        if np.isclose(eps_ladder[i + 1], eps_ladder[i] / 2.0):
            richardson.append((4.0 * values[i + 1] - values[i]) / 3.0)
    best = richardson[-1] if richardson else values[-1]
    return FDReport(eps_ladder, tuple(values), tuple(richardson), best)


def descent_step(
    u: ControlPath,
    rho: float,
    coupling: np.ndarray,
    gamma2: float,
    admissible: AdmissibleSet,
) -> ControlPath:
    """One projected proximal-gradient step of the fixed-point iteration.

    u+ = P_U(u/(1 + 2 gamma2 rho) + 2 rho/(1 + 2 gamma2 rho) g); equivalently
    P_U(u - rho_eff eta) with rho_eff = rho/(1 + 2 gamma2 rho).
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    denom = 1.0 + 2.0 * gamma2 * rho
    candidate = (u.values + 2.0 * rho * np.asarray(coupling)) / denom
    return u.replace(admissible.project(candidate))


@dataclass
class IterationState:
    n: int
    phi: float
    stderr: float
    grad_norm: float
    rho: float
    pmp_residual: float


@dataclass
class OptimizeResult:
    control: ControlPath
    history: list
    termination: str
    coupling: np.ndarray
    gradient_report: GradientReport

    @property
    def iterations(self) -> int:
        return len(self.history) - 1


def optimize(
    problem: Problem,
    cost: CostSpec,
    admissible: AdmissibleSet,
    u0: ControlPath,
    x0,
    paths,
    *,
    max_iters: int = 200,
    tol_pmp: float | None = None,
    rho0: float = 1.0,
    rho_cap: float = 1e6,
    rho_min: float = 1e-12,
    pmap=map,
) -> OptimizeResult:
    """Projected gradient descent to the maximum-principle fixed point.

    Backtracking halves rho until the projected Armijo test
    phi(u+) <= phi(u) - c1 |u+ - u|^2 / rho_eff passes on the CRN ensemble
    (the margin reduces to c1 rho_eff |eta|^2 when no constraint is active);
    after an acceptance rho is regrown by 2 (capped).  Terminates when the
    PMP residual drops below tol_pmp (default 1e-3 times the diameter of U),
    on max_iters, or when backtracking underflows.
    """
    cost.require_gamma2()
    _require_gamma3_zero(cost, "optimize")
    if not admissible.contains(u0.values, tol=1e-12):
        raise ValueError("initial control is not admissible")
    if tol_pmp is None:
        tol_pmp = 1e-3 * admissible.diameter
    paths = list(paths)
    dt = u0.dt
    gamma2 = cost.gamma2

    u = u0
    rho = rho0
    history: list[IterationState] = []
    termination = "max_iters"
    report = None
    for n in range(max_iters + 1):
        report = gradient(problem, cost, u, x0, paths, pmap)
        residual = pmp_residual(u, report.coupling, gamma2, admissible, dt)
        grad_norm = report.norm(dt)
        history.append(
            IterationState(n, report.cost.value, report.cost.stderr, grad_norm, rho, residual)
        )
        if residual <= tol_pmp:
            termination = "pmp_converged"
            break
        if n == max_iters:
            break

        accepted = False
        rho_try = rho
        while rho_try >= rho_min:
            u_new = descent_step(u, rho_try, report.coupling, gamma2, admissible)
            rho_eff = rho_try / (1.0 + 2.0 * gamma2 * rho_try)
            # projected Armijo margin c1 |u+ - u|^2 / rho_eff; equals the
            # unconstrained c1 rho_eff |eta|^2 when no constraint is active
            step_sq = float(((u_new.values - u.values) ** 2).sum() * dt)
            if step_sq == 0.0:
                termination = "fixed_point"
                break
            phi_new = evaluate_cost(problem, cost, u_new, x0, paths, pmap).value
            if phi_new <= report.cost.value - ARMIJO_C1 * step_sq / rho_eff:
                accepted = True
                break
            rho_try *= 0.5
        if not accepted:
            if termination != "fixed_point":
                termination = "step_underflow"
            break
        u = u_new
        rho = min(2.0 * rho_try, rho_cap)
        history[-1].rho = rho_try  # record the step actually taken

    return OptimizeResult(u, history, termination, report.coupling, report)


@dataclass(frozen=True)
class BangBangReport:
    """Per-cell classification of a converged control on a 1-d box."""

    labels: tuple  # 'lower' | 'upper' | 'interior' per time cell
    counts: dict
    max_interior_violation: float
    branches_consistent: bool


def classify_bang_bang(
    u: ControlPath,
    coupling: np.ndarray,
    gamma2: float,
    admissible: AdmissibleSet,
    boundary_tol: float = 1e-6,
    branch_tol: float = 1e-6,
) -> BangBangReport:
    """Classify each cell as boundary-active or interior and check the branches.

    On U = [a, b] the fixed point reads: u = a when g/gamma2 <= a, u = b when
    g/gamma2 >= b, and u = g/gamma2 in between; interior cells must satisfy
    the last identity to branch_tol.
    """
    if admissible.shape != "box" or admissible.m != 1:
        raise ValueError("bang-bang classification needs a 1-d box control set")
    a, b = float(admissible.lower[0]), float(admissible.upper[0])
    vals = u.values[:, 0]
    g = np.asarray(coupling).reshape(-1) / gamma2
    labels = []
    consistent = True
    max_violation = 0.0
    for uk, gk in zip(vals, g):
        if abs(uk - a) <= boundary_tol:
            labels.append("lower")
            if gk > a + branch_tol:
                consistent = False
        elif abs(uk - b) <= boundary_tol:
            labels.append("upper")
            if gk < b - branch_tol:
                consistent = False
        else:
            labels.append("interior")
            max_violation = max(max_violation, abs(uk - gk))
    counts = {name: labels.count(name) for name in ("lower", "upper", "interior")}
    return BangBangReport(tuple(labels), counts, max_violation, consistent)


def bang_bang_example(
    problem: Problem,
    cost: CostSpec,
    admissible: AdmissibleSet,
    u0: ControlPath,
    x0,
    paths,
    boundary_tol: float = 1e-6,
    branch_tol: float = 1e-6,
    **optimize_kwargs,
):
    """Run the optimizer on an m = 1 box problem and classify the result."""
    result = optimize(problem, cost, admissible, u0, x0, paths, **optimize_kwargs)
    report = classify_bang_bang(
        result.control, result.coupling, cost.gamma2, admissible, boundary_tol, branch_tol
    )
    return result, report
