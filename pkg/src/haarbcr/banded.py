"""Per-level coefficient storage: dense ``ndarray`` or row-aligned band.

Level arrays in the forms are either square ``ndarray`` objects or
:class:`BandMatrix`. The helpers at the bottom dispatch on the two so the form
code does not care which storage a level uses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend


def half_width(rmax: int) -> int:
    """Largest kept ``|k - l|`` when shells ``R <= rmax`` are retained."""
    if rmax < 1:
        raise ValueError(f"Rmax must be >= 1, got {rmax}")
    return (1 << rmax) - 1


def _band_index(n: int, w: int):
    rows = np.arange(n)[:, None]
    cols = rows + np.arange(-w, w + 1)[None, :]
    valid = (cols >= 0) & (cols < n)
    return rows, cols, valid


@dataclass(frozen=True, eq=False)
class BandMatrix:
    """Square ``n x n`` matrix with entries only for ``|k - l| <= w``.

    ``data[k, d]`` holds entry ``(k, k + d - w)``; slots falling outside the
    matrix are kept at zero.
    """

    data: np.ndarray
    w: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2 * self.w + 1:
            raise ValueError(f"band data shape {data.shape} does not match w={self.w}")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return (self.n, self.n)

    @classmethod
    def from_dense(cls, matrix, w: int) -> "BandMatrix":
        matrix = np.asarray(matrix, dtype=float)
        n = matrix.shape[0]
        rows, cols, valid = _band_index(n, w)
        data = np.where(valid, matrix[rows, np.clip(cols, 0, n - 1)], 0.0)
        return cls(data, w)

    def todense(self) -> np.ndarray:
        n, w = self.n, self.w
        rows, cols, valid = _band_index(n, w)
        out = np.zeros((n, n))
        out[np.broadcast_to(rows, cols.shape)[valid], cols[valid]] = self.data[valid]
        return out

    def diagonal(self) -> np.ndarray:
        return self.data[:, self.w].copy()

    def row_sums(self) -> np.ndarray:
        return self.data.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        _, cols, valid = _band_index(self.n, self.w)
        return np.bincount(cols[valid], weights=self.data[valid], minlength=self.n)

    def abs_row_sums(self) -> np.ndarray:
        return np.abs(self.data).sum(axis=1)

    def abs_col_sums(self) -> np.ndarray:
        _, cols, valid = _band_index(self.n, self.w)
        return np.bincount(cols[valid], weights=np.abs(self.data[valid]), minlength=self.n)

    def with_diagonal(self, diag) -> "BandMatrix":
        data = self.data.copy()
        data[:, self.w] = diag
        return BandMatrix(data, self.w)

    def transpose(self) -> "BandMatrix":
        n, w = self.n, self.w
        rows, cols, valid = _band_index(n, w)
        d = np.broadcast_to(np.arange(2 * w + 1), cols.shape)
        out = np.zeros_like(self.data)
        out[cols[valid], (2 * w - d)[valid]] = self.data[valid]
        return BandMatrix(out, w)

    @property
    def T(self) -> "BandMatrix":
        return self.transpose()

    def narrowed(self, w: int) -> "BandMatrix":
        if w >= self.w:
            return self
        return BandMatrix(self.data[:, self.w - w:self.w + w + 1].copy(), w)

    def matvec(self, x, out=None) -> np.ndarray:
        if out is None:
            out = np.zeros(self.n)
        _backend.band_matvec(self.data, self.w, np.ascontiguousarray(x, dtype=float), out)
        return out

    def __matmul__(self, x):
        return self.matvec(x)

    @property
    def nbytes(self) -> int:
        return self.data.nbytes


# --- storage-agnostic helpers --------------------------------------------------

def to_dense(m) -> np.ndarray:
    return m.todense() if isinstance(m, BandMatrix) else np.asarray(m, dtype=float)


def store(m, w=None):
    """Dense when ``w`` is None or covers the whole level, band otherwise."""
    n = m.n if isinstance(m, BandMatrix) else m.shape[0]
    if w is None or w >= n - 1:
        return to_dense(m)
    if isinstance(m, BandMatrix):
        return m.narrowed(w)
    return BandMatrix.from_dense(m, w)


def diagonal(m) -> np.ndarray:
    return m.diagonal() if isinstance(m, BandMatrix) else np.diag(m).copy()


def row_sums(m) -> np.ndarray:
    return m.row_sums() if isinstance(m, BandMatrix) else m.sum(axis=1)


def col_sums(m) -> np.ndarray:
    return m.col_sums() if isinstance(m, BandMatrix) else m.sum(axis=0)


def abs_row_sums(m) -> np.ndarray:
    return m.abs_row_sums() if isinstance(m, BandMatrix) else np.abs(m).sum(axis=1)


def abs_col_sums(m) -> np.ndarray:
    return m.abs_col_sums() if isinstance(m, BandMatrix) else np.abs(m).sum(axis=0)


def with_diagonal(m, diag):
    if isinstance(m, BandMatrix):
        return m.with_diagonal(diag)
    out = np.array(m, dtype=float)
    np.fill_diagonal(out, diag)
    return out


def transpose(m):
    if isinstance(m, BandMatrix):
        return m.transpose()
    if m.ndim == 1:
        return m
    return np.ascontiguousarray(m.T)


def band_limit(m, w: int):
    """Zero every entry with ``|k - l| > w``, keeping the storage kind."""
    if isinstance(m, BandMatrix):
        return m.narrowed(w)
    n = m.shape[0]
    k = np.arange(n)
    keep = np.abs(k[:, None] - k[None, :]) <= w
    return np.where(keep, m, 0.0)


def matvec(m, x) -> np.ndarray:
    """Apply a level operator: band, dense square, or 1-D diagonal."""
    if isinstance(m, BandMatrix):
        return m.matvec(x)
    if m.ndim == 1:
        return m * x
    return m @ x


def side(m) -> int:
    return m.n if isinstance(m, BandMatrix) else m.shape[0]
