"""Quantitative checks on the modified form: shells, Schur constants, decay fits, atoms.

Shell ``R >= 1`` of a level array keeps the entries with
``2**(R-1) <= |k - l| < 2**R``. For ``gamma`` each shell carries its own
compensating diagonal (minus its column sums), for ``beta`` minus its row sums,
and for ``alpha`` none, so every shell is cancellative on its own.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import banded
from .dyadic import GridFunction, GridSpec, _values, cascade, fold_synthesis
from .fastapply import ApplyPlan, estimate_opnorm
from .nsform import ModifiedForm, NonStandardForm

FAMILIES = ("alpha", "beta", "gamma")


def _distance(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.abs(k[:, None] - k[None, :])


def shell_count(grid: GridSpec) -> int:
    """Shells needed to cover every off-diagonal distance on the grid."""
    top = grid.side(grid.J - 1) if grid.J else grid.M
    return max(1, math.ceil(math.log2(top))) if top > 1 else 0


@dataclass
class ShellCoeffs:
    R: int
    family: str
    levels: list

    def is_zero(self) -> bool:
        return all(not np.any(m) for m in self.levels)


def shell_of(m, R: int, family: str = "gamma") -> np.ndarray:
    m = banded.to_dense(m)
    d = _distance(m.shape[0])
    out = np.where((d >= 1 << (R - 1)) & (d < 1 << R), m, 0.0)
    if family == "gamma":
        np.fill_diagonal(out, -out.sum(axis=0))
    elif family == "beta":
        np.fill_diagonal(out, -out.sum(axis=1))
    elif family != "alpha":
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    return out


def shell_decompose(mf: ModifiedForm, family: str = "gamma", rmax: int | None = None):
    """Shells ``R = 1 .. rmax`` (default: all) of one family of ``mf``."""
    levels = getattr(mf, family) if family in FAMILIES else None
    if levels is None:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    rmax = shell_count(mf.grid) if rmax is None else rmax
    return [ShellCoeffs(R, family, [shell_of(m, R, family) for m in levels])
            for R in range(1, rmax + 1)]


@dataclass
class BlockStats:
    R: int
    Gamma: float
    normEstimate: float | None = None
    ratio: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _schur_sup(m) -> float:
    m = banded.to_dense(m)
    if m.size == 0:
        return 0.0
    a = np.abs(m)
    return float((a.sum(axis=1) + a.sum(axis=0)).max())


def gamma_of(shell: ShellCoeffs) -> float:
    """``sup_{j,k} sum_l |g_{k,l}| + |g_{l,k}|`` over the levels of one shell."""
    return max((_schur_sup(m) for m in shell.levels), default=0.0)


def compute_gamma_R(shells) -> list:
    return [BlockStats(s.R, gamma_of(s)) for s in shells]


def compute_schur_A(mf: ModifiedForm) -> float:
    """``sup_{j,k} sum_l |alpha_{k,l}| + |alpha_{l,k}|``."""
    return max((_schur_sup(a) for a in mf.alpha), default=0.0)


def schur_A_bound(mf: ModifiedForm) -> float:
    """Bound on :func:`compute_schur_A` from the alpha distance envelope.

    Each row and each column meets at most two entries per distance, so
    ``A <= 4 * sum_d env(d)``.
    """
    _, env = envelope_of([mf.alpha])
    return float(4.0 * env[1:].sum())


def shell_plan(grid: GridSpec, shell: ShellCoeffs) -> ApplyPlan:
    """Plan for ``W_R``: phi output from shell coefficients on the details."""
    J = grid.J
    empty = [[] for _ in range(J)]
    if shell.family == "gamma":
        return ApplyPlan(grid, empty, [[] for _ in range(J)], [[m] for m in shell.levels], [],
                         f"gamma[R={shell.R}]")
    if shell.family == "beta":
        return ApplyPlan(grid, empty, [[m] for m in shell.levels], [[] for _ in range(J)], [],
                         f"beta[R={shell.R}]")
    return ApplyPlan(grid, [[m] for m in shell.levels], empty, [[] for _ in range(J)], [],
                     f"alpha[R={shell.R}]")


def wr_norm_scan(shells, grid: GridSpec, iters: int = 200, seed: int = 0) -> list:
    """Power-iteration norms of ``W_R`` and the ratio ``norm / (sqrt(R) Gamma(R))``."""
    out = []
    for s in shells:
        g = gamma_of(s)
        norm = 0.0 if s.is_zero() else estimate_opnorm(shell_plan(grid, s), grid, iters, seed)
        ratio = norm / (math.sqrt(s.R) * g) if g > 0 else None
        out.append(BlockStats(s.R, g, norm, ratio))
    return out


def level_schur_check(shells) -> list:
    """Dense spectral norm of every single-level block against ``Gamma(R)``.

    One level maps orthonormal details to orthonormal scaling functions, so the
    block norm is the matrix 2-norm. Rows: ``(R, j, norm, Gamma)``.
    """
    rows = []
    for s in shells:
        g = gamma_of(s)
        for j, m in enumerate(s.levels):
            rows.append((s.R, j, float(np.linalg.norm(m, 2)) if m.size else 0.0, g))
    return rows


def ratio_variation(stats) -> float | None:
    """``max / min`` of the defined, positive ratios; None when there are none."""
    r = [s.ratio for s in stats if s.ratio is not None and s.ratio > 0]
    return max(r) / min(r) if r else None


# --- decay fits ---------------------------------------------------------------------

def envelope_of(families) -> tuple:
    """``max |coefficient|`` at each distance over levels and families."""
    top = max(banded.side(m) for levels in families for m in levels)
    env = np.zeros(top)
    for levels in families:
        for m in levels:
            a = np.abs(banded.to_dense(m))
            n = a.shape[0]
            for d in range(n):
                v = max(np.diagonal(a, d).max(), np.diagonal(a, -d).max())
                if v > env[d]:
                    env[d] = v
    return np.arange(top), env


@dataclass
class DecayFit:
    family: str
    distances: np.ndarray
    envelope: np.ndarray
    dmin: int
    dmax: int
    C_hat: float = math.nan
    s_hat: float = math.nan
    degenerate: bool = False
    slope_drift: float = math.nan
    power_law: bool = True
    log_theta: float = math.nan
    log_r2: float = math.nan
    log_variant_ok: bool = False

    def as_dict(self) -> dict:
        return {"family": self.family, "dmin": self.dmin, "dmax": self.dmax,
                "C_hat": self.C_hat, "s_hat": self.s_hat, "degenerate": self.degenerate,
                "slope_drift": self.slope_drift, "power_law": self.power_law,
                "log_theta": self.log_theta, "log_r2": self.log_r2,
                "log_variant_ok": self.log_variant_ok}

    def csv(self) -> str:
        rows = [f"{d},{e:.17g}" for d, e in zip(self.distances, self.envelope)]
        return "\n".join(["distance,envelope"] + rows) + "\n"


def _linfit(x, y):
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss if ss > 0 else 1.0
    return float(slope), float(icept), r2


def decay_fit_envelope(distances, envelope, dmin: int = 2, dmax: int = 64,
                       family: str = "", drift_tol: float = 0.25) -> DecayFit:
    """Least-squares fit of ``log env = log C - (1 + s) log(1 + d)`` on ``[dmin, dmax]``.

    Also fits the two halves of the range (split at the geometric midpoint)
    against both ``log d`` and ``log(1 + d)``; when the slope changes by more
    than ``drift_tol`` under both, the envelope is flagged as not a power law.
    The log variant fits ``env = C d**-1 ln(1 + d)**-theta`` and passes when
    ``theta > 2`` with ``r2 >= 0.99``.
    """
    distances = np.asarray(distances)
    envelope = np.asarray(envelope, dtype=float)
    sel = (distances >= dmin) & (distances <= dmax)
    if not np.any(sel):
        raise ValueError(f"empty distance range [{dmin}, {dmax}]")
    d, e = distances[sel].astype(float), envelope[sel]
    fit = DecayFit(family, distances[sel], e, dmin, dmax)
    if not np.all(e > 0) or d.size < 4:
        fit.degenerate = True
        return fit
    x, y = np.log1p(d), np.log(e)
    slope, icept, _ = _linfit(x, y)
    fit.C_hat, fit.s_hat = math.exp(icept), -slope - 1.0
    # Pure powers of d and of 1 + d share the tail exponent but bend differently
    # at small d, so the drift is the smaller of the two.
    mid = math.sqrt(d[0] * d[-1])
    lo, hi = d <= mid, d >= mid
    if lo.sum() >= 2 and hi.sum() >= 2:
        fit.slope_drift = min(abs(_linfit(t[lo], y[lo])[0] - _linfit(t[hi], y[hi])[0])
                              for t in (x, np.log(d)))
        fit.power_law = bool(fit.slope_drift <= drift_tol)
    slope, _, r2 = _linfit(np.log(np.log1p(d)), y + np.log(d))
    fit.log_theta, fit.log_r2 = -slope, r2
    fit.log_variant_ok = bool(fit.log_theta > 2 and r2 >= 0.99)
    return fit


def fit_range(grid: GridSpec, dmin: int = 2, dmax: int = 64) -> tuple:
    """Clip ``[dmin, dmax]`` to exclude distance <= 1 and the largest octave."""
    top = grid.side(grid.J - 1) if grid.J else grid.M
    octave = 1 << max(0, math.ceil(math.log2(max(top, 2))) - 1)
    return max(dmin, 2), min(dmax, octave - 1)


def decay_fit(nsf: NonStandardForm, family: str = "abc", dmin: int = 2, dmax: int = 64,
              drift_tol: float = 0.25) -> DecayFit:
    """Distance envelope of ``a``, ``b``, ``c`` (or any combination) and its fit."""
    pick = {"a": nsf.A, "b": nsf.B, "c": nsf.C}
    if not family or set(family) - set(pick):
        raise ValueError(f"family must combine 'a', 'b', 'c', got {family!r}")
    lo, hi = fit_range(nsf.grid, dmin, dmax)
    distances, env = envelope_of([pick[f] for f in family])
    return decay_fit_envelope(distances, env, lo, hi, family, drift_tol)


def toeplitz_nsform(grid: GridSpec, profile) -> NonStandardForm:
    """Synthetic form whose ``a, b, c`` all equal ``profile(|k - l|)`` at every level."""
    levels = []
    for j in range(grid.J):
        d = _distance(grid.side(j))
        levels.append(np.vectorize(profile, otypes=[float])(d))
    return NonStandardForm(grid, levels, [m.copy() for m in levels],
                           [m.copy() for m in levels], np.zeros((grid.M, grid.M)))


# --- atoms ---------------------------------------------------------------------------------

@dataclass
class AtomDecomposition:
    grid: GridSpec
    pieces: list
    perCell: np.ndarray
    B: float
    residual: float

    def slope(self) -> float:
        """Log-log slope of ``|a_m|`` against ``1 + m`` over cells with ``a_m != 0``."""
        m = np.arange(self.perCell.size)
        keep = self.perCell > 0
        if keep.sum() < 2:
            return math.nan
        return _linfit(np.log1p(m[keep]), np.log(self.perCell[keep]))[0]

    def dominant_cell(self) -> int:
        return int(np.argmax(self.perCell))

    def as_dict(self) -> dict:
        return {"perCell": self.perCell.tolist(), "B": self.B, "residual": self.residual,
                "slope": self.slope(), "dominant_cell": self.dominant_cell()}


def atom_decompose_U(mf: ModifiedForm, atom, tol: float = 1e-12) -> AtomDecomposition:
    """Split ``U a`` (the ``alpha`` part) into pieces ``a_m`` living on unit cells.

    ``a_m`` collects the psi output at cubes inside ``Q_{0,m}`` from the
    details of ``a`` at cubes inside ``Q_{0,0}``.
    """
    grid = mf.grid
    values = _values(atom)
    N, h = grid.N, grid.h
    cell = 1 << grid.J
    norm = math.sqrt(h * float(values @ values))
    if np.any(values[cell:]):
        raise ValueError("atom is not supported in Q[0,0]")
    if abs(h * values.sum()) > tol * max(norm, 1.0):
        raise ValueError(f"atom mean is {h * values.sum():.3e}, expected 0")
    if norm > 1 + tol:
        raise ValueError(f"atom L2 norm {norm:.6g} exceeds 1")
    details, _ = cascade(grid, values)
    outs = []
    for j in range(grid.J):
        width = 1 << j
        alpha = banded.to_dense(mf.alpha[j])
        outs.append(alpha[:, :width] @ details[j][:width])
    pieces, norms = [], np.zeros(grid.M)
    for m in range(grid.M):
        psi = []
        for j, u in enumerate(outs):
            v = np.zeros_like(u)
            width = 1 << j
            v[m * width:(m + 1) * width] = u[m * width:(m + 1) * width]
            psi.append(v)
        piece = fold_synthesis(grid, [None] * grid.J, psi) if grid.J else np.zeros(N)
        pieces.append(piece)
        norms[m] = math.sqrt(h * float(piece @ piece))
    U = ApplyPlan.from_form(mf, components=("alpha",))
    total = U.apply_values(values)
    scale = max(float(np.abs(total).max()), 1e-300)
    residual = float(np.abs(sum(pieces) - total).max()) / scale if np.any(total) else \
        float(np.abs(sum(pieces)).max())
    return AtomDecomposition(grid, pieces, norms, float(norms.sum()), residual)


def random_atom(grid: GridSpec, rng, level: int | None = None) -> np.ndarray:
    """Random mean-zero, unit-norm function on ``Q[0,0]`` built from details at ``level``+."""
    level = grid.J - 1 if level is None else level
    values = np.zeros(grid.N)
    cell = 1 << grid.J
    width = 1 << (grid.J - level)
    v = rng.standard_normal(cell).reshape(-1, width)
    v -= v.mean(axis=1, keepdims=True)
    values[:cell] = v.ravel()
    values /= math.sqrt(grid.h * float(values @ values))
    return values


# --- counterexample -------------------------------------------------------------------------

@dataclass
class CounterexampleRecord:
    values_on_cells: list
    expected: list
    exact: bool
    shells_nonzero: list
    integral: float
    right_half_integral: float
    passed: bool = field(default=False)

    def as_dict(self) -> dict:
        return asdict(self)


def counterexample_form(grid: GridSpec) -> ModifiedForm:
    """Rank-one ``W f = (phi_{0,1} - phi_{0,0}) <psi_{0,1}, f>``.

    This is the textbook example moved one unit cell right, so the cell to the
    left of the support is cell 0.
    """
    if grid.M < 2 or grid.J < 1:
        raise ValueError("counterexample needs M >= 2 and J >= 1")
    zero = [np.zeros((grid.side(j), grid.side(j))) for j in range(grid.J)]
    gamma = [z.copy() for z in zero]
    gamma[0][1, 1] = 1.0
    gamma[0][0, 1] = -1.0
    return ModifiedForm(grid, [z.copy() for z in zero], [z.copy() for z in zero], gamma)


def counterexample_w1(grid: GridSpec, tol: float = 1e-13) -> CounterexampleRecord:
    mf = counterexample_form(grid)
    shells = shell_decompose(mf, "gamma")
    nonzero = [s.R for s in shells if not s.is_zero()]
    w1 = shell_plan(grid, shells[0])
    psi = np.zeros(grid.N)
    cell = 1 << grid.J
    psi[cell:cell + cell // 2] = 1.0
    psi[cell + cell // 2:2 * cell] = -1.0
    out = w1.apply_values(psi)
    full = ApplyPlan.from_form(mf).apply_values(psi)
    expected = np.zeros(grid.N)
    expected[:cell] = -1.0
    expected[cell:2 * cell] = 1.0
    per_cell = out.reshape(grid.M, cell)
    values = [float(v) for v in per_cell[:, 0]]
    # Exact up to the rounding of the 1/sqrt(2) cascade factors.
    exact = bool(np.abs(out - expected).max() <= tol and np.abs(full - out).max() <= tol)
    integral = grid.h * float(out.sum())
    right = grid.h * float(out[cell:].sum())
    rec = CounterexampleRecord(values, [float(v) for v in expected[::cell]], exact, nonzero,
                               integral, right)
    rec.passed = bool(exact and nonzero == [1] and abs(integral) <= tol and abs(right) > 0.5)
    return rec


def gamma_csv(stats) -> str:
    def fmt(v):
        return "" if v is None else f"{v:.17g}"
    rows = [f"{s.R},{fmt(s.Gamma)},{fmt(s.normEstimate)},{fmt(s.ratio)}" for s in stats]
    return "\n".join(["R,Gamma,normEstimate,ratio"] + rows) + "\n"
