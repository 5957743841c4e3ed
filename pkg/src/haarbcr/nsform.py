"""Non-standard form of a kernel operator in the Haar basis, and its split.

For each level ``j`` the form holds

* ``A[j][k, l] = <psi_{j,k}, T psi_{j,l}>``
* ``B[j][k, l] = <psi_{j,k}, T phi_{j,l}>``
* ``C[j][k, l] = <phi_{j,k}, T psi_{j,l}>``

plus the coarse block ``S0[k, l] = <phi_{0,k}, T phi_{0,l}>``. The split moves
the diagonal of ``A`` and the row sums of ``B`` / column sums of ``C`` into a
one-index-per-level (perfect dyadic) part; what remains has zero diagonal in
``alpha`` and exact row/column cancellation in ``beta``/``gamma``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import banded
from .banded import BandMatrix, _band_index, half_width
from .dyadic import GridSpec, eval_phi, eval_psi
from .kernels import MIDPOINT, KernelSpec, Quadrature, operator_matrix

DIRECT_MAX_N = 4096


class FormError(ValueError):
    """Malformed, corrupted or inconsistent form."""


@dataclass(frozen=True, eq=False)
class NonStandardForm:
    grid: GridSpec
    A: list
    B: list
    C: list
    coarse: np.ndarray
    meta: dict = field(default_factory=dict)

    def levels(self):
        return zip(self.A, self.B, self.C)

    def adjoint(self) -> "NonStandardForm":
        t = banded.transpose
        return NonStandardForm(self.grid, [t(a) for a in self.A], [t(c) for c in self.C],
                               [t(b) for b in self.B], np.ascontiguousarray(self.coarse.T),
                               dict(self.meta))

    def dense(self) -> "NonStandardForm":
        d = banded.to_dense
        return NonStandardForm(self.grid, [d(a) for a in self.A], [d(b) for b in self.B],
                               [d(c) for c in self.C], self.coarse, dict(self.meta))


@dataclass(frozen=True, eq=False)
class ModifiedForm:
    grid: GridSpec
    alpha: list
    beta: list
    gamma: list

    def adjoint(self) -> "ModifiedForm":
        t = banded.transpose
        return ModifiedForm(self.grid, [t(a) for a in self.alpha], [t(g) for g in self.gamma],
                            [t(b) for b in self.beta])


@dataclass(frozen=True, eq=False)
class DiagonalForm:
    grid: GridSpec
    a: list
    b: list
    c: list

    def adjoint(self) -> "DiagonalForm":
        return DiagonalForm(self.grid, list(self.a), list(self.c), list(self.b))


@dataclass(frozen=True, eq=False)
class SplitForm:
    smooth: ModifiedForm
    dyadic: DiagonalForm
    coarse: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> GridSpec:
        return self.smooth.grid

    def adjoint(self) -> "SplitForm":
        return SplitForm(self.smooth.adjoint(), self.dyadic.adjoint(),
                         np.ascontiguousarray(self.coarse.T), dict(self.meta))


def _meta(kernel, quad, band):
    return {"kernel": kernel.describe() if kernel is not None else None,
            "quadrature": quad.describe(), "band": band}


# --- builders ---------------------------------------------------------------------

def _butterfly(S: np.ndarray, w):
    """One pyramid step: ``s^{j+1}`` -> ``(A_j, B_j, C_j, s^j)``."""
    S00, S01 = S[0::2, 0::2], S[0::2, 1::2]
    S10, S11 = S[1::2, 0::2], S[1::2, 1::2]
    n = S00.shape[0]
    coarse = S00 + S01
    coarse += S10
    coarse += S11
    coarse *= 0.5
    if w is None or w >= n - 1:
        A = (S00 - S01 - S10 + S11) * 0.5
        B = (S00 + S01 - S10 - S11) * 0.5
        C = (S00 - S01 + S10 - S11) * 0.5
        return A, B, C, coarse
    rows, cols, valid = _band_index(n, w)
    cc = np.clip(cols, 0, n - 1)
    g00, g01, g10, g11 = S00[rows, cc], S01[rows, cc], S10[rows, cc], S11[rows, cc]

    def pack(v):
        return BandMatrix(np.where(valid, v * 0.5, 0.0), w)

    A = pack(g00 - g01 - g10 + g11)
    B = pack(g00 + g01 - g10 - g11)
    C = pack(g00 - g01 + g10 - g11)
    return A, B, C, coarse


def pyramid_from_matrix(grid: GridSpec, matrix: np.ndarray, band: int | None = None,
                        meta: dict | None = None) -> NonStandardForm:
    """Run the pyramid on a finest-level phi-phi block (``h * Kbar``).

    ``band`` is ``Rmax``: levels wider than ``2**Rmax`` are stored as bands of
    half-width ``2**Rmax - 1``, computed without forming the dense level arrays.
    """
    if matrix.shape != (grid.N, grid.N):
        raise FormError(f"matrix shape {matrix.shape} does not match N={grid.N}")
    w = half_width(band) if band is not None else None
    A, B, C = [None] * grid.J, [None] * grid.J, [None] * grid.J
    S = matrix
    for j in range(grid.J - 1, -1, -1):
        A[j], B[j], C[j], S = _butterfly(S, w)
    return NonStandardForm(grid, A, B, C, np.ascontiguousarray(S), dict(meta or {}))


def build_nsform_pyramid(kernel: KernelSpec, grid: GridSpec, quad: Quadrature = MIDPOINT,
                         band: int | None = None) -> NonStandardForm:
    """O(N^2) pyramid from finest-cell kernel averages."""
    matrix = operator_matrix(kernel, grid, quad)
    return pyramid_from_matrix(grid, matrix, band, _meta(kernel, quad, band))


def build_nsform_direct(kernel: KernelSpec, grid: GridSpec, quad: Quadrature = MIDPOINT,
                        max_n: int = DIRECT_MAX_N) -> NonStandardForm:
    """Reference builder: explicit inner products against sampled basis functions."""
    if grid.N > max_n:
        raise MemoryError(f"direct build refused: N={grid.N} exceeds limit {max_n}")
    T = operator_matrix(kernel, grid, quad)
    return nsform_from_matrix_direct(grid, T, _meta(kernel, quad, None))


def nsform_from_matrix_direct(grid: GridSpec, T: np.ndarray, meta=None) -> NonStandardForm:
    h = grid.h
    x = grid.midpoints()
    A, B, C = [], [], []
    for j in range(grid.J):
        k = np.arange(grid.side(j))[:, None]
        Psi = eval_psi(j, k, x[None, :])
        Phi = eval_phi(j, k, x[None, :])
        TPsi, TPhi = T @ Psi.T, T @ Phi.T
        A.append(h * Psi @ TPsi)
        B.append(h * Psi @ TPhi)
        C.append(h * Phi @ TPsi)
    Phi0 = eval_phi(0, np.arange(grid.M)[:, None], x[None, :])
    coarse = h * Phi0 @ T @ Phi0.T
    return NonStandardForm(grid, A, B, C, coarse, dict(meta or {}))


# --- modification and split ------------------------------------------------------------

def _compensate_rows(m):
    d = banded.diagonal(m)
    return banded.with_diagonal(m, -(banded.row_sums(m) - d))


def _compensate_cols(m):
    d = banded.diagonal(m)
    return banded.with_diagonal(m, -(banded.col_sums(m) - d))


def modify(nsf: NonStandardForm) -> ModifiedForm:
    """Zero the ``a`` diagonal; replace ``b``/``c`` diagonals by minus the
    off-diagonal row/column sums (over indices that exist on the grid)."""
    alpha = [banded.with_diagonal(a, 0.0) for a in nsf.A]
    beta = [_compensate_rows(b) for b in nsf.B]
    gamma = [_compensate_cols(c) for c in nsf.C]
    return ModifiedForm(nsf.grid, alpha, beta, gamma)


def diagonal_part(nsf: NonStandardForm) -> DiagonalForm:
    return DiagonalForm(nsf.grid,
                        [banded.diagonal(a) for a in nsf.A],
                        [banded.row_sums(b) for b in nsf.B],
                        [banded.col_sums(c) for c in nsf.C])


def split(nsf: NonStandardForm) -> SplitForm:
    return SplitForm(modify(nsf), diagonal_part(nsf), nsf.coarse, dict(nsf.meta))


def embed(df: DiagonalForm) -> tuple:
    """Dense per-level diagonal matrices of the dyadic families."""
    return ([np.diag(v) for v in df.a], [np.diag(v) for v in df.b], [np.diag(v) for v in df.c])


def band_truncate(form, rmax: int):
    """Drop every entry with ``|k - l| >= 2**rmax``.

    On a :class:`ModifiedForm` (or the smooth part of a :class:`SplitForm`) the
    ``beta``/``gamma`` diagonals are recomputed from the kept entries so the
    row/column cancellation survives truncation.
    """
    w = half_width(rmax)
    lim = banded.band_limit
    if isinstance(form, NonStandardForm):
        meta = dict(form.meta, band=rmax)
        return NonStandardForm(form.grid, [lim(a, w) for a in form.A], [lim(b, w) for b in form.B],
                               [lim(c, w) for c in form.C], form.coarse, meta)
    if isinstance(form, ModifiedForm):
        return ModifiedForm(form.grid, [lim(a, w) for a in form.alpha],
                            [_compensate_rows(lim(b, w)) for b in form.beta],
                            [_compensate_cols(lim(c, w)) for c in form.gamma])
    if isinstance(form, SplitForm):
        return SplitForm(band_truncate(form.smooth, rmax), form.dyadic, form.coarse,
                         dict(form.meta, band=rmax))
    raise TypeError(f"cannot truncate {type(form).__name__}")


def compress(form, rmax: int):
    """Like :func:`band_truncate` but switches wide levels to band storage."""
    w = half_width(rmax)
    truncated = band_truncate(form, rmax)

    def st(levels):
        return [banded.store(m, w) for m in levels]

    if isinstance(truncated, NonStandardForm):
        return NonStandardForm(truncated.grid, st(truncated.A), st(truncated.B), st(truncated.C),
                               truncated.coarse, truncated.meta)
    if isinstance(truncated, ModifiedForm):
        return ModifiedForm(truncated.grid, st(truncated.alpha), st(truncated.beta),
                            st(truncated.gamma))
    return replace(truncated, smooth=compress(truncated.smooth, rmax))


# --- serialization -------------------------------------------------------------------------

MAGIC = b"HBCRFORM"


def _block_list(form):
    if isinstance(form, NonStandardForm):
        kind = "nsform"
        blocks = []
        for j, (a, b, c) in enumerate(form.levels()):
            blocks += [(f"A_{j}", a), (f"B_{j}", b), (f"C_{j}", c)]
    elif isinstance(form, SplitForm):
        kind = "split"
        blocks = []
        sm, dy = form.smooth, form.dyadic
        for j in range(form.grid.J):
            blocks += [(f"alpha_{j}", sm.alpha[j]), (f"beta_{j}", sm.beta[j]),
                       (f"gamma_{j}", sm.gamma[j]), (f"a_{j}", dy.a[j]), (f"b_{j}", dy.b[j]),
                       (f"c_{j}", dy.c[j])]
    else:
        raise TypeError(f"cannot serialize {type(form).__name__}")
    blocks.append(("coarse", form.coarse))
    return kind, blocks


def save_form(path, form) -> dict:
    """Write a form file; returns the header (including the payload sha256)."""
    kind, blocks = _block_list(form)
    descr, chunks = [], []
    for name, m in blocks:
        if isinstance(m, BandMatrix):
            descr.append({"name": name, "storage": "band", "shape": list(m.data.shape), "w": m.w})
            arr = m.data
        else:
            arr = np.asarray(m, dtype=float)
            descr.append({"name": name, "storage": "dense", "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    meta = dict(form.meta)
    header = {
        "format": "haarbcr-form", "version": 1, "kind": kind,
        "grid": {"M": form.grid.M, "J": form.grid.J},
        "kernel": meta.get("kernel"), "quadrature": meta.get("quadrature"),
        "band": meta.get("band"), "blocks": descr,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(payload)
    return header


def read_header(path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise FormError(f"{path}: not a form file")
        (size,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(size))
        except json.JSONDecodeError as exc:
            raise FormError(f"{path}: unreadable header ({exc})") from None
    return header, 16 + size


def load_form(path):
    header, offset = read_header(path)
    payload = Path(path).read_bytes()[offset:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise FormError(f"{path}: checksum mismatch (file corrupted)")
    grid = GridSpec(**header["grid"])
    arrays, pos = {}, 0
    for d in header["blocks"]:
        count = int(np.prod(d["shape"]))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=pos).astype(float)
        arr = arr.reshape(d["shape"])
        pos += 8 * count
        arrays[d["name"]] = BandMatrix(arr, d["w"]) if d["storage"] == "band" else arr
    if pos != len(payload):
        raise FormError(f"{path}: payload size does not match block layout")
    meta = {"kernel": header.get("kernel"), "quadrature": header.get("quadrature"),
            "band": header.get("band")}
    J = grid.J
    if header["kind"] == "nsform":
        return NonStandardForm(grid, [arrays[f"A_{j}"] for j in range(J)],
                               [arrays[f"B_{j}"] for j in range(J)],
                               [arrays[f"C_{j}"] for j in range(J)], arrays["coarse"], meta)
    if header["kind"] == "split":
        smooth = ModifiedForm(grid, [arrays[f"alpha_{j}"] for j in range(J)],
                              [arrays[f"beta_{j}"] for j in range(J)],
                              [arrays[f"gamma_{j}"] for j in range(J)])
        dyadic = DiagonalForm(grid, [arrays[f"a_{j}"] for j in range(J)],
                              [arrays[f"b_{j}"] for j in range(J)],
                              [arrays[f"c_{j}"] for j in range(J)])
        return SplitForm(smooth, dyadic, arrays["coarse"], meta)
    raise FormError(f"{path}: unknown kind {header['kind']!r}")
