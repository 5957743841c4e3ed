"""Kernel registry, finest-scale quadrature, and Calderon-Zygmund condition checks.

Every built-in kernel is finite on the whole closed domain square: the
singular ones are mollified at width ``delta`` (default: the finest mesh).
The checks return measured sup constants over finite sample sets; they are
certificates on those samples, nothing more.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dyadic import DyadicCube, GridSpec, cube_distance


class KernelError(ValueError):
    """Unknown kernel name or invalid kernel parameters."""


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A kernel ``K(x, y)`` with its claimed size constant and Holder exponent.

    ``eval`` must broadcast over numpy arrays. ``reg_constant`` is the claimed
    constant for the regularity condition (defaults to ``C0``). ``table`` is set
    only for tabulated kernels and holds finest-cell averages.
    """

    name: str
    eval: Callable
    C0: float
    s: float
    params: dict = field(default_factory=dict)
    reg_constant: float | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.s <= 1:
            raise KernelError(f"Holder exponent must lie in (0, 1], got {self.s}")

    def __call__(self, x, y):
        return self.eval(x, y)

    @property
    def regularity_constant(self) -> float:
        return self.C0 if self.reg_constant is None else self.reg_constant

    def describe(self) -> dict:
        params = {k: v for k, v in self.params.items() if not isinstance(v, np.ndarray)}
        return {"name": self.name, "params": params, "C0": self.C0, "s": self.s}


# --- registry -------------------------------------------------------------------

def _constant(params, domain_length):
    c = float(params.get("c", 1.0))
    bound = abs(c) * domain_length if domain_length else math.inf
    return KernelSpec("constant", lambda x, y: np.full(np.broadcast(x, y).shape, c),
                      C0=bound, s=1.0, params={"c": c}, reg_constant=0.0)


def _separable(params, domain_length):
    u = np.atleast_1d(np.asarray(params.get("u", [1.0]), dtype=float))
    v = np.atleast_1d(np.asarray(params.get("v", [1.0]), dtype=float))
    pu, pv = np.polynomial.Polynomial(u), np.polynomial.Polynomial(v)

    def k(x, y):
        return pu(np.asarray(x, dtype=float)) * pv(np.asarray(y, dtype=float))

    if domain_length:
        t = np.linspace(0.0, domain_length, 4097)
        bound = float(np.abs(pu(t)).max() * np.abs(pv(t)).max() * domain_length)
    else:
        bound = math.inf
    return KernelSpec("separable", k, C0=bound, s=1.0,
                      params={"u": u.tolist(), "v": v.tolist()}, reg_constant=math.inf)


def _delta(params, default_delta):
    delta = params.get("delta", default_delta)
    if delta is None:
        raise KernelError("delta is required (no grid to default from)")
    delta = float(delta)
    if not delta > 0:
        raise KernelError(f"delta must be > 0, got {delta}")
    return delta


def _truncated_hilbert(params, default_delta):
    delta = _delta(params, default_delta)
    d2 = delta * delta

    def k(x, y):
        t = np.subtract(x, y, dtype=float)
        return t / (t * t + d2)

    # |K'(u)| <= 1/u^2 and the intermediate point sits at >= |x-y|/2: 4 per term.
    return KernelSpec("truncated-hilbert", k, C0=1.0, s=1.0,
                      params={"delta": delta}, reg_constant=8.0)


def _truncated_abs(params, default_delta):
    delta = _delta(params, default_delta)

    def k(x, y):
        return 1.0 / np.maximum(np.abs(np.subtract(x, y, dtype=float)), delta)

    return KernelSpec("truncated-abs", k, C0=1.0, s=1.0,
                      params={"delta": delta}, reg_constant=8.0)


def read_kernel_table(path):
    """Read a tabulated kernel file.

    First line: ``N`` (optionally ``N,C0``). Then ``N*N`` values, row-major,
    separated by commas and/or whitespace.
    """
    text = Path(path).read_text()
    head, _, body = text.partition("\n")
    fields = [f for f in head.replace(",", " ").split() if f]
    if not fields:
        raise KernelError(f"{path}: missing header")
    n = int(fields[0])
    declared = float(fields[1]) if len(fields) > 1 else math.inf
    values = np.array([float(t) for t in body.replace(",", " ").split()])
    if values.size != n * n:
        raise KernelError(f"{path}: header says N={n}, found {values.size} values")
    return values.reshape(n, n), declared


def write_kernel_table(path, table, C0=None):
    table = np.asarray(table, dtype=float)
    n = table.shape[0]
    head = f"{n}" if C0 is None else f"{n},{C0:.17g}"
    rows = "\n".join(",".join(f"{v:.17g}" for v in row) for row in table)
    Path(path).write_text(head + "\n" + rows + "\n")


def _tabulated(params, domain_length):
    if "table" in params:
        table = np.asarray(params["table"], dtype=float)
        declared = float(params.get("C0", math.inf))
    elif "path" in params:
        table, declared = read_kernel_table(params["path"])
    else:
        raise KernelError("tabulated kernel needs 'path' or 'table'")
    n = table.shape[0]
    if table.shape != (n, n):
        raise KernelError(f"kernel table must be square, got {table.shape}")
    length = float(params.get("length", domain_length or 0.0))
    if not length > 0:
        raise KernelError("tabulated kernel needs the domain length")
    width = length / n

    def k(x, y):
        p = np.clip(np.floor(np.asarray(x, dtype=float) / width).astype(int), 0, n - 1)
        q = np.clip(np.floor(np.asarray(y, dtype=float) / width).astype(int), 0, n - 1)
        return table[p, q]

    out = {"length": length}
    if "path" in params:
        out["path"] = str(params["path"])
    return KernelSpec("tabulated", k, C0=declared, s=1.0, params=out,
                      reg_constant=math.inf, table=table)


_REGISTRY = {
    "constant": lambda p, L, d: _constant(p, L),
    "separable": lambda p, L, d: _separable(p, L),
    "truncated-hilbert": lambda p, L, d: _truncated_hilbert(p, d),
    "truncated-abs": lambda p, L, d: _truncated_abs(p, d),
    "tabulated": lambda p, L, d: _tabulated(p, L),
}


def kernel_names():
    return sorted(_REGISTRY)


def kernel_registry_get(name: str, params=None, grid: GridSpec | None = None) -> KernelSpec:
    """Look up a built-in kernel.

    ``grid`` supplies defaults: the mollification width (``h``) and the domain
    length used in the declared size constants.
    """
    if name not in _REGISTRY:
        raise KernelError(f"unknown kernel {name!r}; known: {', '.join(kernel_names())}")
    params = dict(params or {})
    length = grid.length if grid is not None else params.get("length")
    default_delta = grid.h if grid is not None else None
    return _REGISTRY[name](params, length, default_delta)


# --- quadrature -------------------------------------------------------------------

@dataclass(frozen=True)
class Quadrature:
    """Cell-average rule: midpoint, refined to ``m x m`` near the diagonal.

    Cell pairs with ``|p - q| <= cutoff`` use the composite ``m x m`` midpoint
    rule; ``m = 1`` is the plain midpoint rule everywhere.
    """

    m: int = 1
    cutoff: int = 0

    def __post_init__(self):
        if self.m < 1 or self.cutoff < 0:
            raise ValueError(f"invalid quadrature {self}")

    def describe(self) -> dict:
        return {"m": self.m, "cutoff": self.cutoff}


MIDPOINT = Quadrature()


def cell_averages(kernel: KernelSpec, grid: GridSpec, quad: Quadrature = MIDPOINT,
                  out: np.ndarray | None = None, rows_per_block: int = 256) -> np.ndarray:
    """``N x N`` finest-cell kernel averages under ``quad``."""
    N, h = grid.N, grid.h
    if out is None:
        out = np.empty((N, N))
    if kernel.table is not None:
        if kernel.table.shape != (N, N):
            raise KernelError(f"kernel table is {kernel.table.shape[0]}^2, grid needs N={N}")
        out[...] = kernel.table
        return out
    x = grid.midpoints()
    for start in range(0, N, rows_per_block):
        stop = min(start + rows_per_block, N)
        out[start:stop] = kernel.eval(x[start:stop, None], x[None, :])
    if quad.m > 1 and quad.cutoff >= 0:
        offsets = ((np.arange(quad.m) + 0.5) / quad.m - 0.5) * h
        ox, oy = np.meshgrid(offsets, offsets, indexing="ij")
        ox, oy = ox.ravel(), oy.ravel()
        for off in range(-quad.cutoff, quad.cutoff + 1):
            p = np.arange(max(0, -off), min(N, N - off))
            q = p + off
            vals = kernel.eval(x[p][:, None] + ox[None, :], x[q][:, None] + oy[None, :])
            out[p, q] = vals.mean(axis=1)
    return out


def operator_matrix(kernel: KernelSpec, grid: GridSpec, quad: Quadrature = MIDPOINT) -> np.ndarray:
    """Dense discretized operator ``h * Kbar``; also the finest phi-phi block."""
    out = cell_averages(kernel, grid, quad)
    out *= grid.h
    return out


# --- condition checks ----------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "pass": bool(self.passed), **self.detail}


@dataclass
class KernelCheckReport:
    size: CheckResult | None = None
    regularity: CheckResult | None = None
    weak_adjacent: CheckResult | None = None
    weak_separated: CheckResult | None = None

    def results(self):
        return [r for r in (self.size, self.regularity, self.weak_adjacent,
                            self.weak_separated) if r is not None]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results())


def center_pairs(grid: GridSpec, level: int):
    """All ordered pairs of distinct level-``level`` cube centers."""
    c = (np.arange(grid.side(level)) + 0.5) * 2.0 ** (-level)
    x, y = np.meshgrid(c, c, indexing="ij")
    mask = x != y
    return x[mask], y[mask]


def check_size(kernel: KernelSpec, samples) -> CheckResult:
    """sup |K(x, y)| |x - y| over the sample pairs."""
    x, y = (np.asarray(a, dtype=float) for a in samples)
    keep = x != y
    if not np.any(keep):
        raise ValueError("no sample pairs with x != y")
    x, y = x[keep], y[keep]
    value = float(np.max(np.abs(kernel(x, y)) * np.abs(x - y)))
    return CheckResult("kernel_size", value, kernel.C0, bool(value <= kernel.C0 * (1 + 1e-12)),
                       {"samples": int(x.size)})


def regularity_triples(grid: GridSpec, level: int, min_sep: float = 0.0, steps: int = 6):
    """Triples ``(x, x', y)`` from cube centers with ``x'`` at dyadic offsets of ``x``."""
    x, y = center_pairs(grid, level)
    keep = np.abs(x - y) >= min_sep
    x, y = x[keep], y[keep]
    fracs = 0.5 ** np.arange(1, steps + 1)
    gap = np.abs(x - y)[:, None] * fracs[None, :]
    xs = np.repeat(x, steps)
    ys = np.repeat(y, steps)
    xp = np.concatenate([xs + gap.ravel(), xs - gap.ravel()])
    return np.concatenate([xs, xs]), xp, np.concatenate([ys, ys])


def check_regularity(kernel: KernelSpec, triples, s: float | None = None) -> CheckResult:
    """sup of the two-sided Holder ratio over admissible triples.

    Triples with ``|x - x'| > |x - y| / 2`` or ``x = x'`` are skipped.
    """
    s = kernel.s if s is None else s
    x, xp, y = (np.asarray(a, dtype=float) for a in triples)
    dx, dy = np.abs(x - xp), np.abs(x - y)
    ok = (dx > 0) & (dx <= 0.5 * dy)
    if not np.any(ok):
        raise ValueError("every sample triple violates |x - x'| <= |x - y| / 2")
    x, xp, y, dx, dy = x[ok], xp[ok], y[ok], dx[ok], dy[ok]
    diff = np.abs(kernel(x, y) - kernel(xp, y)) + np.abs(kernel(y, x) - kernel(y, xp))
    ratio = diff * dy ** (1 + s) / dx ** s
    value = float(np.max(ratio))
    bound = kernel.regularity_constant
    return CheckResult("kernel_regularity", value, bound,
                       bool(np.isfinite(value) and value <= bound * (1 + 1e-12)),
                       {"s": s, "samples": int(x.size), "skipped": int((~ok).sum())})


def check_weak_integral(kernel: KernelSpec, grid: GridSpec, level: int, eps: float = 1.0,
                        quad: Quadrature = MIDPOINT):
    """Measured constants for the weakened kernel conditions at one level.

    Adjacent pairs: ``int_Q int_R |K| / |Q|`` from the finest-cell averages.
    Separated pairs: ``int_Q int_R |K(x,y) - K(x,y_R)|`` (and the transposed
    kernel) times ``d(Q,R) ln^{2+eps}(2 + d(Q,R)/|Q|)``.
    Returns ``(adjacent, separated)`` as :class:`CheckResult`.
    """
    if not 0 <= level <= grid.J:
        raise ValueError(f"level {level} outside 0..{grid.J}")
    h = grid.h
    absK = np.abs(cell_averages(kernel, grid, quad))
    n = grid.side(level)
    w = 1 << (grid.J - level)
    size = 2.0 ** (-level)
    blocks = absK.reshape(n, w, n, w).sum(axis=(1, 3)) * h * h
    idx = np.arange(n)
    adjacent = np.abs(idx[:, None] - idx[None, :]) == 1
    adj_value = float(blocks[adjacent].max() / size) if np.any(adjacent) else 0.0

    x = grid.midpoints().reshape(n, w)
    sep_value = 0.0
    worst = None
    for a in range(n):
        for b in range(n):
            if abs(a - b) < 2:
                continue
            yR = (b + 0.5) * size
            xq, yr = x[a][:, None], x[b][None, :]
            direct = np.abs(kernel(xq, yr) - kernel(xq, yR)).sum() * h * h
            trans = np.abs(kernel(yr, xq) - kernel(yR, xq)).sum() * h * h
            d = cube_distance(DyadicCube(level, a), DyadicCube(level, b))
            c = max(direct, trans) * d * math.log(2 + d / size) ** (2 + eps)
            if c > sep_value:
                sep_value, worst = c, (a, b)
    # Only existence of a finite constant is required; the values are reported.
    return (
        CheckResult("kernel_weak_adjacent", adj_value, math.inf, bool(np.isfinite(adj_value)),
                    {"level": level}),
        CheckResult("kernel_weak_separated", float(sep_value), math.inf,
                    bool(np.isfinite(sep_value)),
                    {"level": level, "eps": eps, "worst_pair": worst}),
    )


def local_boundedness_sweep(kernel: KernelSpec, grid: GridSpec, points: int = 257) -> float:
    """Max |K| over a closed-square sample lattice (diagonal and edges included)."""
    t = np.linspace(0.0, grid.length, points)
    if kernel.table is not None:
        t = np.minimum(t, np.nextafter(grid.length, 0))
    vals = kernel(t[:, None], t[None, :])
    if not np.all(np.isfinite(vals)):
        raise KernelError(f"kernel {kernel.name} is not finite on the closed domain square")
    return float(np.abs(vals).max())


def check_kernel(kernel: KernelSpec, grid: GridSpec, level: int | None = None,
                 eps: float = 1.0, min_sep: float | None = None) -> KernelCheckReport:
    """Run all kernel checks on the default sample sets at ``level``."""
    level = min(grid.J, 4) if level is None else level
    if min_sep is None:
        min_sep = 4 * kernel.params.get("delta", 0.0)
    report = KernelCheckReport()
    report.size = check_size(kernel, center_pairs(grid, level))
    report.regularity = check_regularity(kernel, regularity_triples(grid, level, min_sep))
    report.weak_adjacent, report.weak_separated = check_weak_integral(kernel, grid, min(level, 3), eps)
    return report
