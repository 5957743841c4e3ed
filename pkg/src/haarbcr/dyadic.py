"""Finite dyadic grid, Haar system and the O(N) analysis/synthesis cascade.

The domain is ``[0, M)`` split into ``N = M * 2**J`` cells of width ``h = 2**-J``.
Functions are piecewise constant on those cells and vanish outside the domain.
Wavelet levels run over ``j = 0 .. J-1``; the coefficients against the unit-cell
scaling functions ``phi_{0,m}`` are kept as an explicit coarse block so that
analysis followed by synthesis is exact.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend


@dataclass(frozen=True)
class GridSpec:
    """``M`` unit cells refined ``J`` times."""

    M: int
    J: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")
        if int(self.J) != self.J or self.J < 0:
            raise ValueError(f"J must be a non-negative integer, got {self.J!r}")

    @property
    def N(self) -> int:
        return self.M << self.J

    @property
    def h(self) -> float:
        return 2.0 ** (-self.J)

    @property
    def length(self) -> float:
        return float(self.M)

    def side(self, j: int) -> int:
        """Number of dyadic cubes at level ``j``."""
        return self.M << j

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h

    def cubes(self, levels=None):
        """Iterate all cubes at the given levels (default ``0 .. J-1``)."""
        if levels is None:
            levels = range(self.J)
        for j in levels:
            for k in range(self.side(j)):
                yield DyadicCube(j, k)

    def cell_slice(self, cube: "DyadicCube") -> slice:
        """Finest-cell index range covered by ``cube``."""
        width = 1 << (self.J - cube.j)
        return slice(cube.k * width, (cube.k + 1) * width)


@dataclass(frozen=True, order=True)
class DyadicCube:
    """``Q_{j,k} = [2**-j k, 2**-j (k+1))``."""

    j: int
    k: int

    @property
    def size(self) -> float:
        return 2.0 ** (-self.j)

    @property
    def left(self) -> float:
        return self.k * self.size

    @property
    def right(self) -> float:
        return (self.k + 1) * self.size

    def contains(self, other: "DyadicCube") -> bool:
        return other.j >= self.j and (other.k >> (other.j - self.j)) == self.k

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.j - 1, self.k >> 1)

    def __str__(self):
        return f"Q[{self.j},{self.k}]"


def cube_distance(Q: DyadicCube, R: DyadicCube) -> float:
    """Gap between the closures of two same-level cubes (0 when adjacent)."""
    if Q.j != R.j:
        raise ValueError(f"cubes at different levels: {Q} and {R}")
    gap = abs(Q.k - R.k) - 1
    return max(gap, 0) * Q.size


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-constant function given by its value on each finest cell."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.N,):
            raise ValueError(f"expected {self.grid.N} values, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def inner(self, other: "GridFunction") -> float:
        return self.grid.h * float(np.dot(self.values, _values(other)))

    def norm(self) -> float:
        return math.sqrt(self.inner(self))

    def integral(self) -> float:
        return self.grid.h * float(self.values.sum())

    def __add__(self, other):
        return GridFunction(self.grid, self.values + _values(other))

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - _values(other))

    def __mul__(self, scalar):
        return GridFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)


@dataclass(frozen=True, eq=False)
class WaveletCoeffs:
    """Coarse coefficients against ``phi_{0,m}`` and details per level."""

    grid: GridSpec
    coarse: np.ndarray
    detail: list = field(default_factory=list)

    def energy(self) -> float:
        return float(self.coarse @ self.coarse + sum(d @ d for d in self.detail))


def eval_psi(j, k, x):
    """``2**(j/2) psi(2**j x - k)`` with ``psi = 1`` on [0, 1/2), ``-1`` on [1/2, 1)."""
    t = np.ldexp(np.asarray(x, dtype=float), j) - k
    amp = 2.0 ** (j / 2)
    out = np.where((t >= 0) & (t < 0.5), amp, np.where((t >= 0.5) & (t < 1), -amp, 0.0))
    return out[()] if out.ndim == 0 else out


def eval_phi(j, k, x):
    """``2**(j/2)`` on ``Q_{j,k}``, zero elsewhere."""
    t = np.ldexp(np.asarray(x, dtype=float), j) - k
    out = np.where((t >= 0) & (t < 1), 2.0 ** (j / 2), 0.0)
    return out[()] if out.ndim == 0 else out


def sample_psi(grid: GridSpec, j: int, k: int) -> GridFunction:
    return GridFunction(grid, eval_psi(j, k, grid.midpoints()))


def sample_phi(grid: GridSpec, j: int, k: int) -> GridFunction:
    return GridFunction(grid, eval_phi(j, k, grid.midpoints()))


def indicator(grid: GridSpec, cube: DyadicCube) -> GridFunction:
    values = np.zeros(grid.N)
    values[grid.cell_slice(cube)] = 1.0
    return GridFunction(grid, values)


def cascade(grid: GridSpec, values):
    """Run the analysis cascade.

    Returns ``(details, scalings)``: ``details[j]`` and ``scalings[j]`` hold the
    coefficients against ``psi_{j,k}`` and ``phi_{j,k}`` for ``j = 0 .. J``
    (``details`` has no entry for ``J``).
    """
    s = np.array(_values(values), dtype=float) * math.sqrt(grid.h)
    scalings = [None] * (grid.J + 1)
    details = [None] * grid.J
    scalings[grid.J] = s
    for j in range(grid.J - 1, -1, -1):
        n = grid.side(j)
        coarse, detail = np.empty(n), np.empty(n)
        _backend.haar_split(s, coarse, detail)
        scalings[j], details[j] = coarse, detail
        s = coarse
    return details, scalings


def fold_synthesis(grid: GridSpec, phi_out, psi_out) -> np.ndarray:
    """Coarse-to-fine synthesis with per-level scaling contributions.

    ``phi_out[j]`` (``j = 0 .. J-1``, entries may be ``None``) are coefficients
    against ``phi_{j,k}``; ``psi_out[j]`` against ``psi_{j,k}``. Each level's
    ``phi`` vector is added to the running scaling coefficients before the next
    refinement, so the non-orthogonal ``phi`` families across levels are summed
    exactly. Returns finest-cell values.
    """
    t = np.zeros(grid.M) if phi_out[0] is None else np.array(phi_out[0], dtype=float)
    for j in range(grid.J):
        n = grid.side(j)
        nxt = np.empty(2 * n)
        detail = psi_out[j] if psi_out[j] is not None else np.zeros(n)
        _backend.haar_merge(t, np.ascontiguousarray(detail, dtype=float), nxt)
        if j + 1 < grid.J and phi_out[j + 1] is not None:
            nxt += phi_out[j + 1]
        t = nxt
    return t / math.sqrt(grid.h)


def haar_analysis(f: GridFunction) -> WaveletCoeffs:
    details, scalings = cascade(f.grid, f.values)
    return WaveletCoeffs(f.grid, scalings[0], details)


def haar_synthesis(c: WaveletCoeffs) -> GridFunction:
    grid = c.grid
    if len(c.detail) != grid.J or len(c.coarse) != grid.M:
        raise ValueError("coefficient layout does not match the grid")
    phi_out = [c.coarse] + [None] * max(grid.J - 1, 0)
    return GridFunction(grid, fold_synthesis(grid, phi_out, list(c.detail)))


# --- I/O ---------------------------------------------------------------------

def write_grid_function(path, f) -> None:
    """CSV (one value per line) for ``.csv`` paths, raw float64 otherwise."""
    values = _values(f)
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text("".join(f"{v:.17g}\n" for v in values))
    else:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", values.size))
            fh.write(values.astype("<f8").tobytes())


def read_grid_values(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        text = path.read_text().split()
        return np.array([float(t) for t in text])
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[:8])
    if len(raw) != 8 + 8 * n:
        raise ValueError(f"{path}: header says {n} values, payload has {(len(raw) - 8) / 8}")
    return np.frombuffer(raw[8:], dtype="<f8").astype(float)


def read_grid_function(path, grid: GridSpec) -> GridFunction:
    values = read_grid_values(path)
    if values.size != grid.N:
        raise ValueError(f"{path}: expected {grid.N} values for {grid}, got {values.size}")
    return GridFunction(grid, values)
