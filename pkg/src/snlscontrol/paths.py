"""Brownian drivers: keyed sampling, bridge refinement, and the gauge factor.

Every path is drawn from its own counter-based Philox stream keyed by
(master seed, stream tag, path index, refinement level), so ensembles are
reproducible bit-exactly regardless of execution order or thread count, and
the finite-difference oracle can reuse the exact noise of the adjoint run
(common random numbers) by passing the same path handles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Grid
from .model import NoiseSpec

__all__ = [
    "BrownianPath",
    "sample_path",
    "sample_ensemble",
    "refine_path",
    "coarse_increments",
    "gauge_phase",
    "gauge_factor",
]

_STREAM_PATH = 1
_STREAM_REFINE = 2


def _generator(seed: int, tag: int, path_index: int, level: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(tag, path_index, level))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class BrownianPath:
    """Increments dbeta[k, j] ~ N(0, dt) of N independent drivers on a uniform grid."""

    dt: float
    increments: np.ndarray  # shape (K, N)
    seed: int
    path_index: int
    level: int = 0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2:
            raise ValueError("increments must have shape (K, N)")
        inc = inc.copy()
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        if not (self.dt > 0):
            raise ValueError("dt must be positive")

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_drivers(self) -> int:
        return self.increments.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def values(self) -> np.ndarray:
        """beta_j(t_k) for k = 0..K, with beta_j(0) = 0; shape (K+1, N)."""
        K, N = self.increments.shape
        out = np.zeros((K + 1, N))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def sample_path(noise: NoiseSpec, n_steps: int, dt: float, path_index: int) -> BrownianPath:
    """Draw the increments of one path; pure in (seed, path_index)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    N = noise.n_drivers
    if N == 0:
        inc = np.zeros((n_steps, 0))
    else:
        gen = _generator(noise.seed, _STREAM_PATH, path_index, 0)
        inc = gen.standard_normal((n_steps, N)) * np.sqrt(dt)
    return BrownianPath(dt, inc, noise.seed, path_index)


def sample_ensemble(noise: NoiseSpec, n_paths: int, n_steps: int, dt: float):
    return [sample_path(noise, n_steps, dt, i) for i in range(n_paths)]


def refine_path(path: BrownianPath, factor: int) -> BrownianPath:
    """Split each increment into `factor` Brownian-bridge conditioned pieces.

    Group sums reproduce the coarse increments bitwise: the last fine
    increment of each group is set to coarse - sum(others), which is exactly
    what the bridge constraint dictates.
    """
    r = int(factor)
    if r < 2:
        raise ValueError("refinement factor must be an integer >= 2")
    K, N = path.increments.shape
    fine_dt = path.dt / r
    if N == 0:
        fine = np.zeros((K * r, 0))
        return BrownianPath(fine_dt, fine, path.seed, path.path_index, path.level + 1)

    gen = _generator(path.seed, _STREAM_REFINE, path.path_index, path.level + 1)
    xi = gen.standard_normal((K, r, N)) * np.sqrt(fine_dt)
    # conditional sampling given the group sum: delta_i = D/r + (xi_i - mean xi)
    fine = path.increments[:, None, :] / r + (xi - xi.mean(axis=1, keepdims=True))
    partial = np.zeros((K, N))
    for i in range(r - 1):
        partial += fine[:, i, :]
    last = path.increments - partial
    # snap the balancing increment toward bitwise group-sum reproduction under
    # left-to-right accumulation; a 1-ulp residual can survive when the
    # partials dominate the coarse increment (no representable balancer)
    best, best_err = last.copy(), np.abs((partial + last) - path.increments)
    for _ in range(4):
        if not best_err.any():
            break
        last = last - ((partial + last) - path.increments)
        err = np.abs((partial + last) - path.increments)
        improve = err < best_err
        best[improve], best_err[improve] = last[improve], err[improve]
    fine[:, -1, :] = best
    return BrownianPath(fine_dt, fine.reshape(K * r, N), path.seed, path.path_index, path.level + 1)


def coarse_increments(fine: BrownianPath, factor: int) -> np.ndarray:
    """Sum each group of `factor` fine increments left-to-right.

    This is the accumulation order refine_path snaps against: group sums
    reproduce the coarse increments bitwise except for groups with near-total
    cancellation, where they stay within a few ulps of the partials.
    """
    K_fine, N = fine.increments.shape
    if K_fine % factor:
        raise ValueError("path length is not a multiple of the group size")
    grouped = fine.increments.reshape(K_fine // factor, factor, N)
    out = np.zeros((K_fine // factor, N))
    for i in range(factor):
        out += grouped[:, i, :]
    return out


def gauge_phase(path: BrownianPath, noise: NoiseSpec, grid: Grid, k: int) -> np.ndarray:
    """Real phase w(t_k, xi) = sum_j m_j e_j(xi) beta_j(t_k) of the Wiener field."""
    if not 0 <= k <= path.n_steps:
        raise ValueError(f"node index {k} outside 0..{path.n_steps}")
    beta = path.values()[k]
    out = np.zeros(grid.shape)
    for m_j, e_j, b in zip(noise.intensities, noise.profiles, beta):
        out += m_j * b * e_j
    return out


def gauge_factor(path: BrownianPath, noise: NoiseSpec, grid: Grid, k: int) -> np.ndarray:
    """The unit-modulus factor e^{W(t_k)} = exp(i w(t_k, xi))."""
    return np.exp(1j * gauge_phase(path, noise, grid, k))
