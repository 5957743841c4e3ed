"""Operator application: dense oracle, non-standard-form apply, norm estimation.

An :class:`ApplyPlan` is a list of per-level coefficient operators sorted by
what they consume and produce:

* ``psi_d[j]``: detail coefficients -> psi output (``a``, ``alpha``, diagonal ``a``)
* ``psi_s[j]``: scaling coefficients -> psi output (``b``, ``beta``, ``b`` sums)
* ``phi_d[j]``: detail coefficients -> phi output (``c``, ``gamma``, ``c`` sums)

plus the coarse block acting on ``s^0``. Each operator is a dense square
array, a :class:`~haarbcr.banded.BandMatrix`, or a 1-D diagonal.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _backend, banded
from .banded import BandMatrix
from .dyadic import GridFunction, GridSpec, _values, cascade, fold_synthesis
from .kernels import MIDPOINT, KernelSpec, Quadrature, kernel_registry_get, operator_matrix
from .nsform import (DiagonalForm, ModifiedForm, NonStandardForm, SplitForm, compress,
                     pyramid_from_matrix)

NSF_COMPONENTS = ("U", "V", "W", "coarse")
SPLIT_COMPONENTS = ("smooth", "dyadic", "coarse")


@dataclass(frozen=True, eq=False)
class DenseOperator:
    grid: GridSpec
    matrix: np.ndarray

    @classmethod
    def from_kernel(cls, kernel: KernelSpec, grid: GridSpec, quad: Quadrature = MIDPOINT):
        return cls(grid, operator_matrix(kernel, grid, quad))

    def adjoint(self) -> "DenseOperator":
        return DenseOperator(self.grid, np.ascontiguousarray(self.matrix.T))

    def apply_values(self, values) -> np.ndarray:
        return self.matrix @ values

    def __call__(self, f) -> GridFunction:
        return apply_dense(self, f)


def apply_dense(T: DenseOperator, f) -> GridFunction:
    values = _values(f)
    if values.shape != (T.grid.N,):
        raise ValueError(f"input has shape {values.shape}, operator expects ({T.grid.N},)")
    return GridFunction(T.grid, T.matrix @ values)


@dataclass(frozen=True, eq=False)
class ApplyPlan:
    grid: GridSpec
    psi_d: list
    psi_s: list
    phi_d: list
    coarse: list
    label: str = ""

    @classmethod
    def from_form(cls, form, components=None, band: int | None = None) -> "ApplyPlan":
        """Plan for a form, optionally band-compressed to ``band`` (= Rmax).

        ``components`` picks the parts to include: for a non-standard form any
        of ``U, V, W, coarse``; for a split form any of ``smooth, dyadic,
        coarse`` or the individual families ``alpha, beta, gamma, a, b, c``.
        """
        if band is not None and not isinstance(form, DiagonalForm):
            form = compress(form, band)
        grid = form.grid
        J = grid.J
        psi_d, psi_s, phi_d = ([[] for _ in range(J)] for _ in range(3))
        coarse = []

        def add(target, levels):
            for j, m in enumerate(levels):
                target[j].append(m)

        if isinstance(form, NonStandardForm):
            comps = set(NSF_COMPONENTS if components is None else components)
            _check(comps, NSF_COMPONENTS)
            if "U" in comps:
                add(psi_d, form.A)
            if "V" in comps:
                add(psi_s, form.B)
            if "W" in comps:
                add(phi_d, form.C)
            if "coarse" in comps:
                coarse.append(form.coarse)
        else:
            if isinstance(form, SplitForm):
                comps = set(SPLIT_COMPONENTS if components is None else components)
                smooth, dyadic = form.smooth, form.dyadic
            elif isinstance(form, ModifiedForm):
                comps = {"smooth"} if components is None else set(components)
                smooth, dyadic = form, None
            elif isinstance(form, DiagonalForm):
                comps = {"dyadic"} if components is None else set(components)
                smooth, dyadic = None, form
            else:
                raise TypeError(f"no plan for {type(form).__name__}")
            _check(comps, SPLIT_COMPONENTS + ("alpha", "beta", "gamma", "a", "b", "c"))
            if "smooth" in comps:
                comps |= {"alpha", "beta", "gamma"}
            if "dyadic" in comps:
                comps |= {"a", "b", "c"}
            if smooth is not None:
                if "alpha" in comps:
                    add(psi_d, smooth.alpha)
                if "beta" in comps:
                    add(psi_s, smooth.beta)
                if "gamma" in comps:
                    add(phi_d, smooth.gamma)
            if dyadic is not None:
                if "a" in comps:
                    add(psi_d, dyadic.a)
                if "b" in comps:
                    add(psi_s, dyadic.b)
                if "c" in comps:
                    add(phi_d, dyadic.c)
            if "coarse" in comps and isinstance(form, SplitForm):
                coarse.append(form.coarse)
        label = "+".join(sorted(comps))
        return cls(grid, psi_d, psi_s, phi_d, coarse, label)

    def adjoint(self) -> "ApplyPlan":
        t = banded.transpose
        return ApplyPlan(self.grid,
                         [[t(m) for m in ops] for ops in self.psi_d],
                         [[t(m) for m in ops] for ops in self.phi_d],
                         [[t(m) for m in ops] for ops in self.psi_s],
                         [np.ascontiguousarray(c.T) for c in self.coarse],
                         self.label + "*")

    def __add__(self, other: "ApplyPlan") -> "ApplyPlan":
        if other.grid != self.grid:
            raise ValueError("plans live on different grids")
        return ApplyPlan(self.grid,
                         [a + b for a, b in zip(self.psi_d, other.psi_d)],
                         [a + b for a, b in zip(self.psi_s, other.psi_s)],
                         [a + b for a, b in zip(self.phi_d, other.phi_d)],
                         self.coarse + other.coarse, f"{self.label}|{other.label}")

    def apply_values(self, values) -> np.ndarray:
        grid = self.grid
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.N,):
            raise ValueError(f"input has shape {values.shape}, plan expects ({grid.N},)")
        details, scalings = cascade(grid, values)
        psi_out, phi_out = [None] * grid.J, [None] * grid.J
        for j in range(grid.J):
            psi_out[j] = _accumulate(self.psi_d[j], details[j], _accumulate(
                self.psi_s[j], scalings[j], None))
            phi_out[j] = _accumulate(self.phi_d[j], details[j], None)
        if self.coarse:
            c0 = sum(c @ scalings[0] for c in self.coarse)
            if grid.J == 0:
                return c0 / math.sqrt(grid.h)
            phi_out[0] = c0 if phi_out[0] is None else phi_out[0] + c0
        if grid.J == 0:
            return np.zeros(grid.N)
        return fold_synthesis(grid, phi_out, psi_out)

    def __call__(self, f) -> GridFunction:
        return GridFunction(self.grid, self.apply_values(_values(f)))


def _check(comps, allowed):
    unknown = set(comps) - set(allowed)
    if unknown:
        raise ValueError(f"unknown components {sorted(unknown)}; allowed: {list(allowed)}")


def _accumulate(ops, x, acc):
    for m in ops:
        if isinstance(m, BandMatrix):
            if acc is None:
                acc = np.zeros(m.n)
            m.matvec(x, out=acc)
        else:
            y = banded.matvec(m, x)
            acc = y if acc is None else acc + y
    return acc


def apply_nsform(plan: ApplyPlan, f) -> GridFunction:
    if isinstance(f, GridFunction) and f.grid != plan.grid:
        raise ValueError("plan and function live on different grids")
    return plan(f)


def apply_dyadic(form: DiagonalForm, f) -> GridFunction:
    """Apply the perfect dyadic part; O(N)."""
    return ApplyPlan.from_form(form)(f)


# --- norm estimation --------------------------------------------------------------------

def _as_pair(op, adjoint):
    if isinstance(op, (ApplyPlan, DenseOperator)):
        fwd = op.apply_values
        adj = adjoint if adjoint is not None else op.adjoint().apply_values
        return fwd, adj
    fwd = (lambda v: _values(op(v)))
    if adjoint is None:
        return fwd, fwd
    return fwd, (lambda v: _values(adjoint(v)))


def estimate_opnorm(op, grid: GridSpec, iters: int = 200, seed: int = 0, adjoint=None,
                    tol: float = 1e-9) -> float:
    """L2 -> L2 norm by power iteration on ``adjoint(op(.))``.

    ``op`` may be an :class:`ApplyPlan`, a :class:`DenseOperator` (adjoint
    derived) or a callable on value vectors (self-adjoint unless ``adjoint`` is
    given). Stops after ``iters`` steps or when the eigenvalue estimate moves by
    less than ``tol`` relative. Deterministic given ``seed``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    fwd, adj = _as_pair(op, adjoint)
    rng = np.random.default_rng(seed)
    x = None
    for _ in range(3):
        x = rng.standard_normal(grid.N)
        if np.any(fwd(x)):
            break
    else:
        return 0.0
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = adj(fwd(x))
        new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if lam > 0 and abs(new - lam) <= tol * abs(new):
            lam = new
            break
        lam = new
    return math.sqrt(max(lam, 0.0))


# --- benchmark -----------------------------------------------------------------------------

@dataclass
class BenchRow:
    N: int
    band: int | None
    components: str
    seconds: float
    doubling_ratio: float | None

    def csv(self) -> str:
        band = "" if self.band is None else str(self.band)
        ratio = "" if self.doubling_ratio is None else f"{self.doubling_ratio:.4f}"
        return f"{self.N},{band},{self.components},{self.seconds:.6e},{ratio}"


CSV_HEADER = "N,band,component-set,seconds-per-apply,doubling-ratio"

_flush_buffer = None


def _flush_caches(nbytes: int):
    global _flush_buffer
    if _flush_buffer is None or _flush_buffer.nbytes != nbytes:
        _flush_buffer = np.zeros(nbytes // 8)
    _flush_buffer += 1.0


def time_apply(fn, x, repeats: int = 5, cold: bool = True, flush_bytes: int = 256 << 20) -> float:
    """Best-of-``repeats`` wall time of ``fn(x)``.

    With ``cold`` the caches are flushed before each call, so every size is
    measured in the same memory regime (operator data streamed from RAM).
    """
    fn(x)
    best = math.inf
    for _ in range(repeats):
        if cold:
            _flush_caches(flush_bytes)
        t0 = time.perf_counter()
        fn(x)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_apply(sizes, bands=(8,), kernel: str = "truncated-hilbert", M: int = 2,
                backends=None, repeats: int = 5, cold: bool = True, seed: int = 0,
                dense: bool = True):
    """Seconds per apply for the dense operator and banded non-standard forms.

    ``sizes`` must be increasing and of the form ``M * 2**J``. Each banded form
    is the full ``(a, b, c)`` + coarse form truncated to ``Rmax = band`` with
    band storage. Returns a list of :class:`BenchRow`.
    """
    sizes = [int(n) for n in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    backends = list(backends or [_backend.active()])
    bands = sorted(set(int(b) for b in bands))
    rng = np.random.default_rng(seed)
    times = {}
    previous = _backend.active()
    try:
        for N in sizes:
            J = int(round(math.log2(N / M)))
            if M << J != N:
                raise ValueError(f"size {N} is not M * 2**J for M={M}")
            grid = GridSpec(M, J)
            k = kernel_registry_get(kernel, grid=grid)
            x = rng.standard_normal(N)
            matrix = operator_matrix(k, grid)
            if dense:
                op = DenseOperator(grid, matrix)
                times[(N, None, "dense")] = time_apply(lambda v: apply_dense(op, v), x, repeats, cold)
                del op
            form = pyramid_from_matrix(grid, matrix, band=max(bands))
            del matrix
            for band in bands:
                plan = ApplyPlan.from_form(form, band=band)
                for name in backends:
                    _backend.use(name)
                    times[(N, band, f"full@{name}")] = time_apply(plan.apply_values, x, repeats, cold)
            del form
    finally:
        _backend.use(previous)
    rows = []
    for (N, band, comp), t in times.items():
        prev = [(n, s) for (n, b, c), s in times.items() if b == band and c == comp and n < N]
        ratio = None
        if prev:
            n0, t0 = prev[-1]
            ratio = (t / t0) ** (1.0 / math.log2(N / n0))
        rows.append(BenchRow(N, band, comp, t, ratio))
    rows.sort(key=lambda r: (r.components != "dense", r.components, r.band or 0, r.N))
    return rows


def bench_csv(rows) -> str:
    return "\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n"


def mean_doubling_ratio(rows, components: str, band=None) -> float:
    """Geometric-mean doubling ratio across the measured size range."""
    sel = sorted((r.N, r.seconds) for r in rows if r.components == components and r.band == band)
    (n0, t0), (n1, t1) = sel[0], sel[-1]
    return (t1 / t0) ** (1.0 / math.log2(n1 / n0))
