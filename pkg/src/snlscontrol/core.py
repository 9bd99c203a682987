"""Periodic spatial grids, complex fields, and the norms used throughout.

The whole-space problem is truncated to the periodic box [-L, L)^d so that the
free Schrodinger flow is exact in Fourier space.  A boundary-mass monitor
(fraction of the squared amplitude in the outer 10% shell) is exposed so users
can detect wrap-around contamination of the truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "GridSpec",
    "Grid",
    "make_grid",
    "Field",
    "lp_norm",
    "inner",
    "grad_norm_sq",
    "boundary_mass_fraction",
    "StrichartzPair",
    "is_admissible_pair",
    "canonical_pair",
    "theta_exponent",
    "strichartz_norm",
    "write_field",
    "read_field",
]

_SHELL_FRACTION = 0.9  # nodes with |xi|_inf >= 0.9 L count as boundary shell


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Parameters of the periodic box: dimension, half-extent and points per axis."""

    dimension: int
    extent: float
    points: int

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if not (self.extent > 0):
            raise ValueError(f"half-extent L must be positive, got {self.extent}")
        if not _is_power_of_two(self.points) or self.points < 8:
            raise ValueError(
                f"points per axis must be a power of two >= 8, got {self.points}"
            )


class Grid:
    """Immutable periodic grid with node coordinates and wavenumber lattice.

    Nodes are xi_i = -L + i * dxi on [-L, L); wavenumbers are the standard
    discrete Fourier frequencies scaled by pi/L, so the largest magnitude per
    axis is pi*n/(2L).
    """

    def __init__(self, spec: GridSpec):
        d, L, n = spec.dimension, spec.extent, spec.points
        self.spec = spec
        self.dimension = d
        self.extent = L
        self.points = n
        self.spacing = 2.0 * L / n
        self.shape = (n,) * d
        self.cell_volume = self.spacing**d

        axis = -L + self.spacing * np.arange(n)
        wavenumbers = (math.pi / L) * (np.fft.fftfreq(n) * n)
        if d == 1:
            self.axes = (axis,)
            self.nodes = (axis,)
            self.wavenumbers = (wavenumbers,)
            self.k_squared = wavenumbers**2
            radial = np.abs(axis)
        else:
            self.axes = (axis, axis)
            xx, yy = np.meshgrid(axis, axis, indexing="ij")
            self.nodes = (xx, yy)
            self.wavenumbers = (wavenumbers, wavenumbers)
            self.k_squared = wavenumbers[:, None] ** 2 + wavenumbers[None, :] ** 2
            radial = np.maximum(np.abs(xx), np.abs(yy))
        self.boundary_mask = radial >= _SHELL_FRACTION * L
        for arr in (self.k_squared, self.boundary_mask):
            arr.setflags(write=False)

    def fft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values)

    def ifft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(values)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=np.complex128)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.spec == other.spec

    def __hash__(self):
        return hash(self.spec)

    def __repr__(self):
        return f"Grid(d={self.dimension}, n={self.points}, L={self.extent})"


def make_grid(spec: GridSpec) -> Grid:
    """Build a grid; rejects non-power-of-two point counts and L <= 0."""
    return Grid(spec)


class Field:
    """A complex amplitude sampled on a grid; immutable after construction."""

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != grid.shape:
            raise ValueError(
                f"field shape {values.shape} does not match grid shape {grid.shape}"
            )
        if not np.all(np.isfinite(values.view(np.float64))):
            raise ValueError("field contains non-finite amplitudes")
        values = values.copy()
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def constant(cls, grid: Grid, value: complex) -> "Field":
        return cls(grid, np.full(grid.shape, value, dtype=np.complex128))

    @classmethod
    def zero(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))

    def mass(self) -> float:
        return lp_norm(self, 2)

    def normalized(self) -> "Field":
        m = self.mass()
        if m == 0:
            raise ValueError("cannot normalize the zero field")
        return Field(self.grid, self.values / m)

    def __repr__(self):
        return f"Field(grid={self.grid!r}, mass={self.mass():.6g})"


def _values_of(field) -> np.ndarray:
    return field.values if isinstance(field, Field) else np.asarray(field)


def lp_norm(field, p, grid: Grid | None = None) -> float:
    """Discrete L^p norm (sum |v|^p dxi^d)^(1/p); max modulus for p = inf."""
    values = _values_of(field)
    g = field.grid if isinstance(field, Field) else grid
    if g is None:
        raise ValueError("grid required when passing a bare array")
    p = float(p)
    if p < 1:
        raise ValueError(f"p must satisfy p >= 1, got {p}")
    mags = np.abs(values)
    if math.isinf(p):
        return float(mags.max()) if mags.size else 0.0
    return float((mags**p).sum() * g.cell_volume) ** (1.0 / p)


def inner(a, b, grid: Grid | None = None) -> complex:
    """L^2 pairing <a, b> = sum a * conj(b) * dxi^d (complex-valued)."""
    va, vb = _values_of(a), _values_of(b)
    g = a.grid if isinstance(a, Field) else grid
    return complex((va * np.conj(vb)).sum() * g.cell_volume)


def grad_norm_sq(field, grid: Grid | None = None) -> float:
    """Squared L^2 norm of the spatial gradient, computed spectrally."""
    values = _values_of(field)
    g = field.grid if isinstance(field, Field) else grid
    vhat = g.fft(values)
    # Parseval for the unnormalized FFT: sum |v|^2 = (1/n^d) sum |vhat|^2
    scale = g.cell_volume / values.size
    return float((g.k_squared * np.abs(vhat) ** 2).sum() * scale)


def boundary_mass_fraction(field, grid: Grid | None = None) -> float:
    """Fraction of |v|^2 carried by nodes in the outer 10% shell of the box."""
    values = _values_of(field)
    g = field.grid if isinstance(field, Field) else grid
    dens = np.abs(values) ** 2
    total = dens.sum()
    if total == 0:
        return 0.0
    return float(dens[g.boundary_mask].sum() / total)


# ---------------------------------------------------------------------------
# Strichartz exponent pairs


def _as_exponent(x):
    """Normalize an exponent to Fraction or +inf for exact arithmetic."""
    if x == math.inf:
        return math.inf
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"invalid exponent {x}")
        return Fraction(x)  # exact binary rational
    raise TypeError(f"unsupported exponent type {type(x)!r}")


def is_admissible_pair(p, q, d: int) -> bool:
    """Whether (p, q) satisfies 2/q = d/2 - d/p on the admitted ranges.

    For d != 2 the ranges are [2, inf] x [2, inf]; for d = 2 the endpoint
    p = inf is excluded and q must exceed 2.
    """
    try:
        p = _as_exponent(p)
        q = _as_exponent(q)
    except (ValueError, TypeError):
        return False
    if d < 1:
        return False
    p_inf = p == math.inf
    q_inf = q == math.inf
    if not p_inf and p < 2:
        return False
    if not q_inf and q < 2:
        return False
    if d == 2:
        if p_inf:
            return False
        if not q_inf and q <= 2:
            return False
    lhs = Fraction(0) if q_inf else Fraction(2, 1) / q
    rhs = Fraction(d, 2) - (Fraction(0) if p_inf else Fraction(d, 1) / p)
    return lhs == rhs


@dataclass(frozen=True)
class StrichartzPair:
    """An admissible space-time exponent pair (p, q) for dimension d."""

    p: object
    q: object
    d: int

    def __post_init__(self):
        object.__setattr__(self, "p", _as_exponent(self.p))
        object.__setattr__(self, "q", _as_exponent(self.q))
        if not is_admissible_pair(self.p, self.q, self.d):
            raise ValueError(
                f"(p, q) = ({self.p}, {self.q}) is not an admissible pair for d = {self.d}"
            )

    @property
    def theta(self):
        """Contraction exponent 1 - p/q; equals 1 - d(alpha-1)/4 when p = alpha + 1."""
        if self.p == math.inf:
            return None
        if self.q == math.inf:
            return Fraction(1)
        return 1 - Fraction(self.p) / Fraction(self.q)


def canonical_pair(alpha, d: int) -> StrichartzPair:
    """The pair (alpha + 1, 4(alpha + 1) / (d(alpha - 1))) used for the nonlinearity."""
    alpha = Fraction(alpha) if not isinstance(alpha, Fraction) else alpha
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    p = alpha + 1
    q = 4 * (alpha + 1) / (d * (alpha - 1))
    return StrichartzPair(p, q, d)


def theta_exponent(alpha: float, d: int) -> float:
    """The exponent 1 - d(alpha - 1)/4; positive iff alpha < 1 + 4/d."""
    return 1.0 - d * (alpha - 1.0) / 4.0


def strichartz_norm(snapshots, dt: float, pair: StrichartzPair, grid: Grid | None = None) -> float:
    """Space-time norm (sum_k ||X(t_k)||_p^q dt)^(1/q) over the step cells.

    Snapshots are a time-indexed sequence on a uniform grid; the last snapshot
    is the right endpoint and is excluded from the left-endpoint time sum.
    With q = inf the max over all snapshots is returned.
    """
    snaps = list(snapshots)
    if not snaps:
        raise ValueError("empty snapshot sequence")
    g = snaps[0].grid if isinstance(snaps[0], Field) else grid
    if pair.d != g.dimension:
        raise ValueError(f"pair is for d = {pair.d}, grid has d = {g.dimension}")
    p = float(pair.p) if pair.p != math.inf else math.inf
    norms = np.array([lp_norm(s, p, g) for s in snaps])
    if pair.q == math.inf:
        return float(norms.max())
    q = float(pair.q)
    cells = norms[:-1] if len(norms) > 1 else norms
    return float((cells**q).sum() * dt) ** (1.0 / q)


# ---------------------------------------------------------------------------
# Snapshot file format: `snls-field v1 d=<d> n=<n> L=<L>` then re,im rows


def write_field(field: Field, path) -> None:
    g = field.grid
    flat = field.values.reshape(-1)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"snls-field v1 d={g.dimension} n={g.points} L={float(g.extent)!r}\n")
        for z in flat:
            fh.write(f"{float(z.real)!r},{float(z.imag)!r}\n")


def read_field(path, grid: Grid | None = None) -> Field:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 5 or parts[0] != "snls-field" or parts[1] != "v1":
            raise ValueError(f"not a snls-field v1 file: {header!r}")
        meta = dict(kv.split("=", 1) for kv in parts[2:])
        d, n, L = int(meta["d"]), int(meta["n"]), float(meta["L"])
        g = grid if grid is not None else make_grid(GridSpec(d, L, n))
        if (g.dimension, g.points) != (d, n) or not math.isclose(g.extent, L):
            raise ValueError("snapshot grid does not match the requested grid")
        rows = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
    if rows.shape[0] != n**d:
        raise ValueError(f"expected {n**d} rows, found {rows.shape[0]}")
    values = (rows[:, 0] + 1j * rows[:, 1]).reshape(g.shape)
    return Field(g, values)
