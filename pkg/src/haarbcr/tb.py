"""Local T(b) testing conditions and the T(1) condition on a discretized operator.

A b-system assigns to each dyadic cube ``Q`` two functions ``b1_Q, b2_Q``
supported in ``Q`` together with exponents ``1 < p, q <= inf``. All integrals
are exact cell sums of piecewise-constant functions.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dyadic import DyadicCube, GridSpec
from .fastapply import ApplyPlan, DenseOperator, estimate_opnorm
from .nsform import DiagonalForm, SplitForm


class BSystemError(ValueError):
    """Malformed b-system (bad exponent, shape, or support)."""


def _exponent(v) -> float:
    v = math.inf if isinstance(v, str) and v.lower() in ("inf", "infinity") else float(v)
    if not v > 1:
        raise BSystemError(f"exponents must lie in (1, inf], got {v}")
    return v


def dual(p: float) -> float:
    return math.inf if p == 1 else (1.0 if math.isinf(p) else p / (p - 1))


@dataclass(frozen=True, eq=False)
class BSystem:
    grid: GridSpec
    cubes: list
    b1: list
    b2: list
    p: float
    q: float

    def __post_init__(self):
        object.__setattr__(self, "p", _exponent(self.p))
        object.__setattr__(self, "q", _exponent(self.q))
        if not len(self.cubes) == len(self.b1) == len(self.b2):
            raise BSystemError("cubes, b1 and b2 must have the same length")
        for Q, f1, f2 in zip(self.cubes, self.b1, self.b2):
            for f in (f1, f2):
                if np.shape(f) != (self.grid.N,):
                    raise BSystemError(f"{Q}: expected {self.grid.N} values, got {np.shape(f)}")
                outside = np.ones(self.grid.N, dtype=bool)
                outside[self.grid.cell_slice(Q)] = False
                if np.any(np.asarray(f)[outside]):
                    raise BSystemError(f"{Q}: b function is nonzero outside the cube")

    @property
    def exponent_ok(self) -> bool:
        """``1/p + 1/q <= 1``, equivalently ``q' <= p``."""
        return 1.0 / self.p + 1.0 / self.q <= 1.0 + 1e-15


def default_levels(grid: GridSpec):
    return range(grid.J)


def make_bsystem_indicator(grid: GridSpec, levels=None, p=2.0, q=2.0) -> BSystem:
    """``b1_Q = b2_Q = 1_Q`` for every cube at ``levels`` (default ``0 .. J-1``)."""
    levels = default_levels(grid) if levels is None else levels
    for j in levels:
        if not 0 <= j <= grid.J:
            raise ValueError(f"level {j} outside 0..{grid.J}")
    cubes = list(grid.cubes(levels))
    ones = []
    for Q in cubes:
        v = np.zeros(grid.N)
        v[grid.cell_slice(Q)] = 1.0
        ones.append(v)
    return BSystem(grid, cubes, ones, [v.copy() for v in ones], p, q)


def load_bsystem(path, grid: GridSpec | None = None) -> BSystem:
    """Read a b-system JSON file.

    Layout: ``{"M", "J", "p", "q", "cubes": [{"j", "k", "b1": [...], "b2": [...]}]}``
    with full-length value lists; ``b2`` defaults to ``b1``.
    """
    try:
        doc = json.loads(Path(path).read_text())
        g = GridSpec(int(doc["M"]), int(doc["J"]))
        if grid is not None and g != grid:
            raise BSystemError(f"b-system grid {g} does not match {grid}")
        cubes, b1, b2 = [], [], []
        for entry in doc["cubes"]:
            Q = DyadicCube(int(entry["j"]), int(entry["k"]))
            if not (0 <= Q.j <= g.J and 0 <= Q.k < g.side(Q.j)):
                raise BSystemError(f"{Q}: cube outside the grid")
            cubes.append(Q)
            b1.append(np.asarray(entry["b1"], dtype=float))
            b2.append(np.asarray(entry.get("b2", entry["b1"]), dtype=float))
        return BSystem(g, cubes, b1, b2, doc.get("p", 2.0), doc.get("q", 2.0))
    except (KeyError, TypeError) as exc:
        raise BSystemError(f"{path}: malformed b-system ({exc!r})") from None


def _mean_power(values, p: float) -> float:
    """``(1/|Q|) int_Q |f|^p`` on the cells of ``Q``; ``sup |f|`` when ``p = inf``."""
    a = np.abs(values)
    if math.isinf(p):
        return float(a.max()) if a.size else 0.0
    return float((a ** p).mean())


def check_normalization(bs: BSystem) -> np.ndarray:
    """``max(|int b1 - |Q||, |int b2 - |Q||) / |Q|`` per cube."""
    h = bs.grid.h
    out = np.empty(len(bs.cubes))
    for i, Q in enumerate(bs.cubes):
        s = bs.grid.cell_slice(Q)
        size = Q.size
        out[i] = max(abs(h * bs.b1[i][s].sum() - size), abs(h * bs.b2[i][s].sum() - size)) / size
    return out


def check_size(bs: BSystem) -> np.ndarray:
    """``(int_Q |b1|^p + |b2|^q) / |Q|`` per cube (sup norms for infinite exponents)."""
    out = np.empty(len(bs.cubes))
    for i, Q in enumerate(bs.cubes):
        s = bs.grid.cell_slice(Q)
        out[i] = _mean_power(bs.b1[i][s], bs.p) + _mean_power(bs.b2[i][s], bs.q)
    return out


def _callable(op):
    if isinstance(op, DiagonalForm):
        op = ApplyPlan.from_form(op)
    if isinstance(op, (ApplyPlan, DenseOperator)):
        return op.apply_values
    return op


def _adjoint_of(op):
    if isinstance(op, DiagonalForm):
        return ApplyPlan.from_form(op.adjoint()).apply_values
    if isinstance(op, (ApplyPlan, DenseOperator)):
        return op.adjoint().apply_values
    raise TypeError("adjoint must be given for plain callables")


def image_terms(bs: BSystem, T, adjointT=None):
    """Per-cube ``(mean_Q |T b1|^q', mean_Q |T* b2|^p')``."""
    if bs.p == 1 or bs.q == 1:
        raise BSystemError("p = 1 or q = 1 is not allowed")
    fwd = _callable(T)
    adj = _callable(adjointT) if adjointT is not None else _adjoint_of(T)
    qd, pd = dual(bs.q), dual(bs.p)
    t1, t2 = np.empty(len(bs.cubes)), np.empty(len(bs.cubes))
    for i, Q in enumerate(bs.cubes):
        s = bs.grid.cell_slice(Q)
        t1[i] = _mean_power(fwd(bs.b1[i])[s], qd)
        t2[i] = _mean_power(adj(bs.b2[i])[s], pd)
    return t1, t2


def check_image(bs: BSystem, T, adjointT=None) -> np.ndarray:
    """``(int_Q |T b1|^q' + |T* b2|^p') / |Q|`` per cube."""
    t1, t2 = image_terms(bs, T, adjointT)
    return t1 + t2


def check_t1_dyadic(dyadic, grid: GridSpec | None = None, levels=None, adjoint=None):
    """``(int_Q |T 1_Q| + |T* 1_Q|) / |Q|`` for the cubes at ``levels``.

    ``dyadic`` is a :class:`DiagonalForm` (adjoint derived) or any apply with
    ``adjoint`` given. Returns ``(cubes, constants)``.
    """
    if isinstance(dyadic, DiagonalForm):
        grid = dyadic.grid
    if grid is None:
        raise ValueError("grid is required for a plain apply")
    levels = default_levels(grid) if levels is None else levels
    fwd = _callable(dyadic)
    adj = _callable(adjoint) if adjoint is not None else _adjoint_of(dyadic)
    cubes = list(grid.cubes(levels))
    out = np.empty(len(cubes))
    one = np.zeros(grid.N)
    for i, Q in enumerate(cubes):
        s = grid.cell_slice(Q)
        one[:] = 0.0
        one[s] = 1.0
        out[i] = np.abs(fwd(one)[s]).mean() + np.abs(adj(one)[s]).mean()
    return cubes, out


# --- report -----------------------------------------------------------------------------

def _num(v):
    v = float(v)
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


@dataclass
class TbReport:
    grid: GridSpec
    p: float
    q: float
    C: float
    mode: str
    cubes: list = field(default_factory=list)
    normalization: np.ndarray | None = None
    size: np.ndarray | None = None
    image: np.ndarray | None = None
    t1_cubes: list = field(default_factory=list)
    t1: np.ndarray | None = None
    smooth_norm: float | None = None
    reduction: dict | None = None

    @property
    def exponent_ok(self) -> bool:
        return 1.0 / self.p + 1.0 / self.q <= 1.0 + 1e-15

    def sups(self) -> dict:
        def sup(a):
            return float(np.max(a)) if a is not None and a.size else 0.0
        out = {"normalization": sup(self.normalization), "size": sup(self.size),
               "image": sup(self.image), "t1": sup(self.t1)}
        if self.reduction is not None:
            out["reduction_margin"] = float(np.min(self.reduction["margin"]))
        return out

    def passes(self, tol: float = 1e-12) -> dict:
        s = self.sups()
        out = {"normalization": s["normalization"] <= tol, "size": s["size"] <= self.C,
               "image": s["image"] <= self.C, "t1": s["t1"] <= self.C,
               "exponents": self.exponent_ok}
        if self.reduction is not None:
            out["reduction"] = bool(np.all(self.reduction["holds"]))
        return out

    @property
    def passed(self) -> bool:
        return all(self.passes().values())

    def as_dict(self) -> dict:
        records = []
        for i, Q in enumerate(self.cubes):
            r = {"cube": str(Q), "j": Q.j, "k": Q.k,
                 "normalization": _num(self.normalization[i]), "size": _num(self.size[i]),
                 "image": _num(self.image[i])}
            if self.reduction is not None:
                for key in ("lhs", "rhs", "lhs_adj", "rhs_adj"):
                    r["reduction_" + key] = _num(self.reduction[key][i])
                r["reduction_holds"] = bool(self.reduction["holds"][i])
            records.append(r)
        t1 = [{"cube": str(Q), "value": _num(v)} for Q, v in zip(self.t1_cubes, self.t1)]
        return {"grid": {"M": self.grid.M, "J": self.grid.J}, "p": _num(self.p),
                "q": _num(self.q), "C": _num(self.C), "mode": self.mode,
                "exponent_constraint": {"value": _num(1 / self.p + 1 / self.q),
                                        "pass": self.exponent_ok},
                "smooth_norm": None if self.smooth_norm is None else _num(self.smooth_norm),
                "sup": {k: _num(v) for k, v in self.sups().items()},
                "pass": self.passes(), "cubes": records, "t1": t1}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        cols = ["cube", "j", "k", "normalization", "size", "image"]
        if self.reduction is not None:
            cols += ["reduction_lhs", "reduction_rhs", "reduction_lhs_adj", "reduction_rhs_adj",
                     "reduction_holds"]
        lines = [",".join(cols)]
        for r in self.as_dict()["cubes"]:
            lines.append(",".join(str(r[c]) for c in cols))
        return "\n".join(lines) + "\n"


def _check_grid(*grids):
    g0 = grids[0]
    for g in grids[1:]:
        if g != g0:
            raise ValueError(f"inconsistent grids: {g0} and {g}")


def run_tb_report(bs: BSystem, T, split: SplitForm, C: float = math.inf, seed: int = 0,
                  iters: int = 200, tol: float = 1e-9) -> TbReport:
    """All testing conditions on ``T`` plus the reduction to its dyadic part.

    ``T = S + D`` with ``S`` the smooth and coarse parts of ``split`` and ``D``
    the perfect dyadic part. Per cube the check is

        mean_q'(D b1)^(1/q') <= mean_q'(T b1)^(1/q') + ||S|| mean_p(b1)^(1/p)

    and the same for the adjoints with ``(b2, p', q)``. ``||S||`` is the
    power-iteration L2 norm, so the chain is a theorem for ``p = q = 2`` and a
    heuristic otherwise. ``tol`` is the relative slack for rounding.
    """
    grid = split.grid
    _check_grid(bs.grid, grid, getattr(T, "grid", grid))
    report = TbReport(grid, bs.p, bs.q, C, "general", list(bs.cubes))
    report.normalization = check_normalization(bs)
    report.size = check_size(bs)
    t1, t2 = image_terms(bs, T)
    report.image = t1 + t2
    dyadic = split.dyadic
    report.t1_cubes, report.t1 = check_t1_dyadic(dyadic)
    smooth = ApplyPlan.from_form(split, components=("smooth", "coarse"))
    norm = estimate_opnorm(smooth, grid, iters, seed)
    report.smooth_norm = norm
    d1, d2 = image_terms(bs, dyadic)
    qd, pd = dual(bs.q), dual(bs.p)

    def root(v, e):
        return v if math.isinf(e) else v ** (1.0 / e)

    n = len(bs.cubes)
    lhs, rhs, lhs_adj, rhs_adj = (np.empty(n) for _ in range(4))
    for i, Q in enumerate(bs.cubes):
        s = grid.cell_slice(Q)
        lhs[i] = root(d1[i], qd)
        rhs[i] = root(t1[i], qd) + norm * root(_mean_power(bs.b1[i][s], bs.p), bs.p)
        lhs_adj[i] = root(d2[i], pd)
        rhs_adj[i] = root(t2[i], pd) + norm * root(_mean_power(bs.b2[i][s], bs.q), bs.q)
    holds = (lhs <= rhs * (1 + tol)) & (lhs_adj <= rhs_adj * (1 + tol))
    margin = np.minimum(rhs - lhs, rhs_adj - lhs_adj)
    report.reduction = {"lhs": lhs, "rhs": rhs, "lhs_adj": lhs_adj, "rhs_adj": rhs_adj,
                        "holds": holds, "margin": margin}
    return report


def run_tb_report_dyadic(bs: BSystem, dyadic: DiagonalForm, C: float = math.inf) -> TbReport:
    """Testing conditions with ``T`` taken to be the perfect dyadic operator itself."""
    _check_grid(bs.grid, dyadic.grid)
    report = TbReport(dyadic.grid, bs.p, bs.q, C, "dyadic", list(bs.cubes))
    report.normalization = check_normalization(bs)
    report.size = check_size(bs)
    report.image = check_image(bs, dyadic)
    report.t1_cubes, report.t1 = check_t1_dyadic(dyadic)
    return report
