"""Problem definition: nonlinearity, potentials, noise structure, cost, controls.

All spec types here are immutable values and safe to share across threads.
Only the conservative noise case is representable: intensities store the
moduli m_j of the purely imaginary coefficients mu_j = i m_j, so the noise
acts pathwise as a pure phase and the L^2 norm is conserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Field, Grid

__all__ = [
    "PhysicsSpec",
    "NoiseSpec",
    "AdmissibleSet",
    "CostSpec",
    "Problem",
    "h1",
    "h2",
    "mu_field",
    "HypothesesReport",
    "check_hypotheses",
    "project",
    "ReducedCostReport",
    "reduced_cost_report",
]


def _real_field_values(grid: Grid, f) -> np.ndarray:
    values = f.values if isinstance(f, Field) else np.asarray(f, dtype=np.complex128)
    if values.shape != grid.shape:
        raise ValueError("potential/profile shape does not match the grid")
    if np.abs(values.imag).max(initial=0.0) > 0:
        raise ValueError("potentials and noise profiles must be real-valued")
    out = np.ascontiguousarray(values.real)
    if not np.all(np.isfinite(out)):
        raise ValueError("potential/profile contains non-finite values")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PhysicsSpec:
    """Focusing sign, nonlinearity exponent, and the external/control potentials."""

    grid: Grid
    lam: int
    alpha: float
    V0: np.ndarray
    V: tuple  # control potentials V_1..V_m, m >= 1

    def __post_init__(self):
        if self.lam not in (-1, 1):
            raise ValueError("lam must be +1 (focusing) or -1 (defocusing)")
        if not (self.alpha > 1):
            raise ValueError("alpha must exceed 1")
        object.__setattr__(self, "V0", _real_field_values(self.grid, self.V0))
        if len(self.V) < 1:
            raise ValueError("at least one control potential is required")
        object.__setattr__(
            self, "V", tuple(_real_field_values(self.grid, v) for v in self.V)
        )

    @property
    def m(self) -> int:
        return len(self.V)


@dataclass(frozen=True)
class NoiseSpec:
    """Conservative noise: drivers beta_j with mu_j = i m_j and real profiles e_j."""

    grid: Grid
    intensities: tuple  # moduli m_j > 0
    profiles: tuple  # real fields e_j
    seed: int = 0

    def __post_init__(self):
        intensities = tuple(float(v) for v in self.intensities)
        if any(v <= 0 for v in intensities):
            raise ValueError("noise intensities m_j must be positive")
        profiles = tuple(_real_field_values(self.grid, e) for e in self.profiles)
        if len(profiles) != len(intensities):
            raise ValueError("need one profile e_j per intensity m_j")
        object.__setattr__(self, "intensities", intensities)
        object.__setattr__(self, "profiles", profiles)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def off(cls, grid: Grid, seed: int = 0) -> "NoiseSpec":
        return cls(grid, (), (), seed)

    @classmethod
    def constant_profiles(cls, grid: Grid, intensities, seed: int = 0) -> "NoiseSpec":
        ones = np.ones(grid.shape)
        return cls(grid, tuple(intensities), tuple(ones for _ in intensities), seed)

    @property
    def n_drivers(self) -> int:
        return len(self.intensities)

    def profiles_constant(self) -> bool:
        return all(np.ptp(e) == 0.0 for e in self.profiles)


def mu_field(noise: NoiseSpec, grid: Grid | None = None) -> np.ndarray:
    """The dissipation field mu(xi) = (1/2) sum m_j^2 e_j(xi)^2 (real, >= 0)."""
    g = grid if grid is not None else noise.grid
    out = np.zeros(g.shape)
    for m_j, e_j in zip(noise.intensities, noise.profiles):
        out += 0.5 * m_j**2 * e_j**2
    return out


@dataclass(frozen=True)
class AdmissibleSet:
    """Compact convex control set U in R^m: an axis box or a Euclidean ball."""

    shape: str
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.shape == "box":
            lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
            hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
            if lo.shape != hi.shape or lo.ndim != 1:
                raise ValueError("box bounds must be 1-d arrays of equal length")
            if np.any(lo > hi):
                raise ValueError("box bounds must satisfy a_j <= b_j")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        elif self.shape == "ball":
            c = np.atleast_1d(np.asarray(self.center, dtype=float))
            if not (self.radius is not None and self.radius > 0):
                raise ValueError("ball radius must be positive")
            object.__setattr__(self, "center", c)
            object.__setattr__(self, "radius", float(self.radius))
        else:
            raise ValueError(f"unknown admissible-set shape {self.shape!r}")

    @classmethod
    def box(cls, lower, upper) -> "AdmissibleSet":
        return cls("box", lower=lower, upper=upper)

    @classmethod
    def ball(cls, center, radius) -> "AdmissibleSet":
        return cls("ball", center=center, radius=radius)

    @property
    def m(self) -> int:
        return len(self.lower) if self.shape == "box" else len(self.center)

    @property
    def diameter(self) -> float:
        if self.shape == "box":
            return float(np.linalg.norm(self.upper - self.lower))
        return 2.0 * self.radius

    def project(self, v) -> np.ndarray:
        """Euclidean projection; accepts a single vector or a (K, m) array."""
        v = np.asarray(v, dtype=float)
        if self.shape == "box":
            return np.clip(v, self.lower, self.upper)
        delta = v - self.center
        if v.ndim == 1:
            r = np.linalg.norm(delta)
            if r <= self.radius:
                return v.copy()
            return self.center + delta * (self.radius / r)
        r = np.linalg.norm(delta, axis=-1, keepdims=True)
        scale = np.where(r > self.radius, self.radius / np.maximum(r, 1e-300), 1.0)
        return self.center + delta * scale

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.max(np.linalg.norm(v - self.project(v), axis=-1), initial=0.0) <= tol)


def project(admissible: AdmissibleSet, v) -> np.ndarray:
    return admissible.project(v)


class TimeTarget:
    """Running target X_1: zero, a fixed field, or one field per time node."""

    def __init__(self, grid: Grid, data=None):
        self.grid = grid
        if data is None:
            self.kind = "zero"
            self.data = None
        elif isinstance(data, Field) or (
            isinstance(data, np.ndarray) and data.shape == grid.shape
        ):
            self.kind = "static"
            values = data.values if isinstance(data, Field) else np.asarray(data, complex)
            self.data = values
        else:
            arr = np.asarray(data, dtype=np.complex128)
            if arr.ndim != len(grid.shape) + 1 or arr.shape[1:] != grid.shape:
                raise ValueError("time-indexed target must have shape (K+1, *grid.shape)")
            self.kind = "sequence"
            self.data = arr

    def at(self, k: int, n_nodes: int) -> np.ndarray | None:
        if self.kind == "zero":
            return None
        if self.kind == "static":
            return self.data
        if self.data.shape[0] != n_nodes:
            raise ValueError(
                f"running target has {self.data.shape[0]} nodes, run has {n_nodes}"
            )
        return self.data[k]


@dataclass(frozen=True)
class CostSpec:
    """Tracking weights and targets of the objective functional."""

    grid: Grid
    gamma1: float
    gamma2: float
    gamma3: float
    x_target: Field  # terminal target
    x_running: TimeTarget = None  # running target; zero when omitted

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "gamma3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.x_target.grid != self.grid:
            raise ValueError("terminal target lives on a different grid")
        if self.x_running is None:
            object.__setattr__(self, "x_running", TimeTarget(self.grid))
        elif not isinstance(self.x_running, TimeTarget):
            object.__setattr__(self, "x_running", TimeTarget(self.grid, self.x_running))

    def require_gamma2(self):
        if self.gamma2 <= 0:
            raise ValueError(
                "gamma2 must be positive for the optimizer / maximum principle"
            )


@dataclass(frozen=True)
class Problem:
    """Grid, physics and noise bundled; the inputs every solver needs."""

    grid: Grid
    physics: PhysicsSpec
    noise: NoiseSpec

    def __post_init__(self):
        if self.physics.grid != self.grid or self.noise.grid != self.grid:
            raise ValueError("physics/noise specs live on a different grid")


# ---------------------------------------------------------------------------
# Pointwise derivatives of z -> |z|^(alpha-1) z


def h1(z, alpha: float):
    """d/dz of |z|^(alpha-1) z: the real coefficient (alpha+1)/2 |z|^(alpha-1)."""
    r = np.abs(z)
    return 0.5 * (alpha + 1.0) * r ** (alpha - 1.0)


def h2(z, alpha: float):
    """d/dzbar of |z|^(alpha-1) z: (alpha-1)/2 |z|^(alpha-3) z^2, 0 at z = 0.

    For alpha < 3 the prefactor is singular at the origin but the product is
    bounded by (alpha-1)/2 |z|^(alpha-1), so the continuous extension by 0 is
    used; no NaN is ever produced.
    """
    z = np.asarray(z, dtype=np.complex128)
    r = np.abs(z)
    out = np.zeros_like(z)
    mask = r > 0
    # factor out the unit phase so |z|^(alpha-3) never overflows for tiny |z|;
    # divide componentwise (complex division squares the denominator)
    zm, rm = z[mask], r[mask]
    unit = zm.real / rm + 1j * (zm.imag / rm)
    out[mask] = 0.5 * (alpha - 1.0) * rm ** (alpha - 1.0) * unit**2
    if out.ndim == 0:
        return complex(out)
    return out


# ---------------------------------------------------------------------------
# Hypothesis validators


@dataclass(frozen=True)
class HypothesesReport:
    h0: bool
    h1: bool
    h2: bool
    reasons: tuple

    def __str__(self):
        marks = {True: "ok", False: "FAIL"}
        lines = [
            f"H0: {marks[self.h0]}",
            f"H1: {marks[self.h1]}",
            f"H2: {marks[self.h2]}",
        ]
        return "\n".join(lines + [f"  - {r}" for r in self.reasons])


def check_hypotheses(physics: PhysicsSpec, noise: NoiseSpec, d: int) -> HypothesesReport:
    """Validate the standing assumptions on (alpha, lam, d) and the profiles.

    Decay of non-constant profiles at infinity cannot be certified from grid
    samples; those are reported as assumed and only constancy is checked where
    it is required.
    """
    alpha, lam = physics.alpha, physics.lam
    reasons = []
    mass_sub = 1.0 + 4.0 / d
    constant_profiles = noise.profiles_constant()

    ok0 = 1.0 < alpha < mass_sub
    if not ok0:
        reasons.append(f"H0 needs 1 < alpha < 1 + 4/d = {mass_sub:g}, got alpha = {alpha:g}")
    if noise.n_drivers and not constant_profiles:
        reasons.append("H0/H1 profile decay at infinity assumed (non-constant e_j)")

    if lam == -1:
        energy_sub = float("inf") if d <= 2 else 1.0 + 4.0 / (d - 2)
        ok1 = 1.0 < alpha < energy_sub
        if not ok1:
            reasons.append(
                f"H1 (defocusing) needs 1 < alpha < 1 + 4/(d-2)+ = {energy_sub:g}"
            )
    else:
        ok1 = 1.0 < alpha < mass_sub
        if not ok1:
            reasons.append(f"H1 (focusing) needs 1 < alpha < 1 + 4/d = {mass_sub:g}")

    ok2 = 2.0 <= alpha < mass_sub and 1 <= d <= 3
    if not (2.0 <= alpha < mass_sub):
        reasons.append(f"H2 needs 2 <= alpha < 1 + 4/d = {mass_sub:g}, got alpha = {alpha:g}")
    if not (1 <= d <= 3):
        reasons.append(f"H2 needs 1 <= d <= 3, got d = {d}")
    if noise.n_drivers and not constant_profiles:
        ok2 = False
        reasons.append("H2 needs constant noise profiles e_k")

    return HypothesesReport(ok0, ok1, ok2, tuple(reasons))


# ---------------------------------------------------------------------------
# Normalized-cost identity check


@dataclass(frozen=True)
class ReducedCostReport:
    direct: float
    reduced: float
    rel_discrepancy: float
    max_mass_drift: float
    mass_ok: bool


def reduced_cost_report(records, u, cost: CostSpec, mass_tol: float = 1e-8) -> ReducedCostReport:
    """Compare the objective computed directly with its normalized reduction.

    Requires |x|_2 = 1; with conservative noise the quadratic state terms
    collapse to constants plus cross terms, and both routes must agree up to
    mass-conservation roundoff.  `records` is an ensemble of trajectory
    records (one per path) and `u` the shared control path.
    """
    grid = records[0].grid
    dt = records[0].dt
    K = records[0].n_steps
    xt = cost.x_target.values
    running = cost.x_running
    dv = grid.cell_volume

    drift = 0.0
    direct_terms = []
    cross_terms = []
    run_sq_const = None
    for rec in records:
        masses = rec.mass_series
        drift = max(drift, float(np.abs(masses - 1.0).max()))
        terminal = rec.state(K)
        direct = float((np.abs(terminal - xt) ** 2).sum() * dv)
        cross = -2.0 * float((terminal * np.conj(xt)).sum().real * dv)
        run_direct = 0.0
        run_cross = 0.0
        run_sq = 0.0
        if cost.gamma1 > 0:
            for k in range(K):
                xk = rec.state(k)
                x1 = running.at(k, K + 1)
                if x1 is None:
                    run_direct += float((np.abs(xk) ** 2).sum() * dv) * dt
                else:
                    run_direct += float((np.abs(xk - x1) ** 2).sum() * dv) * dt
                    run_cross += -2.0 * float((xk * np.conj(x1)).sum().real * dv) * dt
                    run_sq += float((np.abs(x1) ** 2).sum() * dv) * dt
        direct_terms.append(direct + cost.gamma1 * run_direct)
        cross_terms.append(cross + cost.gamma1 * run_cross)
        if run_sq_const is None:
            run_sq_const = run_sq

    u_vals = np.asarray(u.values)
    control_sq = float((u_vals**2).sum() * dt)
    control_d_sq = 0.0
    if cost.gamma3 > 0 and K >= 2:
        du = np.diff(u_vals, axis=0)
        control_d_sq = float((du**2).sum() / dt)
    control_part = cost.gamma2 * control_sq + cost.gamma3 * control_d_sq

    target_sq = float((np.abs(xt) ** 2).sum() * dv)
    direct_value = float(np.mean(direct_terms)) + control_part
    reduced_value = (
        (1.0 + target_sq)
        + cost.gamma1 * (dt * K + (run_sq_const or 0.0))
        + float(np.mean(cross_terms))
        + control_part
    )
    rel = abs(direct_value - reduced_value) / max(1.0, abs(direct_value))
    return ReducedCostReport(direct_value, reduced_value, rel, drift, drift <= mass_tol)
