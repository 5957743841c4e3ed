"""Command-line front end: ``haarbcr {build,verify,apply,bench,tb}``.

Configuration is one flat JSON document (``--config``); flags override the
keys of the same name. Exit codes: 0 success, 1 check failure, 2 usage or
configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _backend, banded
from . import analysis as an
from . import tb
from .dyadic import DyadicCube, GridSpec, read_grid_values, write_grid_function
from .fastapply import ApplyPlan, DenseOperator, bench_apply, bench_csv, mean_doubling_ratio
from .kernels import (KernelError, Quadrature, check_kernel, kernel_registry_get,
                      local_boundedness_sweep, operator_matrix)
from .nsform import (DIRECT_MAX_N, FormError, NonStandardForm, SplitForm, compress,
                     load_form, nsform_from_matrix_direct, pyramid_from_matrix, save_form, split)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "kernel": "truncated-hilbert",
    "kernel_params": {},
    "M": 2,
    "J": 8,
    "quad_m": 1,
    "quad_cutoff": 0,
    "band": None,
    "p": 2.0,
    "q": 2.0,
    "C": 10.0,
    "seed": 0,
    "threads": 0,
    "out": None,
    "input": None,
    "mode": "full",
    "form": None,
    "bsystem": None,
    "tb_mode": "general",
    "backend": None,
    "sizes": [1024, 2048, 4096, 8192, 16384],
    "bands": [8],
    "repeats": 5,
    "cold_cache": True,
    "iters": 200,
    "n_random": 20,
    "n_support": 100,
    "oracle_J": 6,
    "atom_M": 16,
    "atom_J": 5,
    "tol_oracle": 1e-12,
    "tol_reconstruction": 1e-10,
    "tol_cancellation": 1e-12,
    "tol_support": 1e-10,
    "tol_adjoint": 1e-12,
    "decay_range": [2, 64],
    "decay_s": [0.8, 1.2],
    "gamma_R": [2, 5],
    "gamma_log2_ratio": [0.5, 1.5],
    "shell_R": 5,
    "shell_factor": 4.0,
    "schur_tol": 1e-12,
    "atom_slope_max": -1.7,
    "t1_stability": 0.10,
}

MODES = ("full", "smooth", "dyadic", "coarse", "dense")


class ConfigError(ValueError):
    pass


# --- configuration -------------------------------------------------------------------------

def load_config(path=None, overrides=None) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        unknown = sorted(set(doc) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {unknown}")
        cfg.update(doc)
    env = os.environ.get("HAARBCR_THREADS")
    if env is not None and env.strip():
        cfg["threads"] = env
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return validate(cfg)


def _exp(v, key):
    try:
        return tb._exponent(v)
    except (tb.BSystemError, ValueError):
        raise ConfigError(f"{key} must lie in (1, inf], got {v!r}") from None


def validate(cfg: dict) -> dict:
    def integer(key, lo):
        try:
            v = int(cfg[key])
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be an integer, got {cfg[key]!r}") from None
        if isinstance(cfg[key], bool) or (isinstance(cfg[key], float) and v != cfg[key]) or v < lo:
            raise ConfigError(f"{key} must be an integer >= {lo}, got {cfg[key]!r}")
        cfg[key] = v

    for key, lo in (("M", 1), ("J", 1), ("seed", 0), ("threads", 0), ("quad_m", 1),
                    ("quad_cutoff", 0), ("repeats", 1), ("iters", 1), ("n_random", 1),
                    ("n_support", 1), ("oracle_J", 1), ("atom_M", 2), ("atom_J", 1),
                    ("shell_R", 1)):
        integer(key, lo)
    if cfg["band"] is not None:
        integer("band", 1)
    cfg["p"], cfg["q"] = _exp(cfg["p"], "p"), _exp(cfg["q"], "q")
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    if cfg["tb_mode"] not in ("general", "dyadic"):
        raise ConfigError(f"tb_mode must be 'general' or 'dyadic', got {cfg['tb_mode']!r}")
    if cfg["backend"] is not None and cfg["backend"] not in _backend.available():
        raise ConfigError(f"backend {cfg['backend']!r} not available ({_backend.available()})")
    if not isinstance(cfg["kernel_params"], dict):
        raise ConfigError("kernel_params must be a JSON object")
    try:
        cfg["sizes"] = [int(n) for n in cfg["sizes"]]
        cfg["bands"] = [int(b) for b in cfg["bands"]]
    except (TypeError, ValueError):
        raise ConfigError("sizes and bands must be integer lists") from None
    if any(b < 1 for b in cfg["bands"]) or not cfg["bands"]:
        raise ConfigError("bands must be a non-empty list of integers >= 1")
    if any(b <= a for a, b in zip(cfg["sizes"], cfg["sizes"][1:])) or not cfg["sizes"]:
        raise ConfigError("sizes must be a non-empty increasing list")
    for n in cfg["sizes"]:
        J = round(math.log2(n / cfg["M"])) if n >= cfg["M"] else -1
        if J < 1 or cfg["M"] << J != n:
            raise ConfigError(f"size {n} is not M * 2**J with J >= 1 (M={cfg['M']})")
    return cfg


def grid_of(cfg) -> GridSpec:
    return GridSpec(cfg["M"], cfg["J"])


def quad_of(cfg) -> Quadrature:
    return Quadrature(cfg["quad_m"], cfg["quad_cutoff"])


def kernel_of(cfg, grid):
    return kernel_registry_get(cfg["kernel"], cfg["kernel_params"], grid)


@contextlib.contextmanager
def thread_limit(n: int):
    """Cap BLAS/OpenMP threads when ``n > 0``; 0 keeps the library default."""
    if n > 0:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=n):
            yield
    else:
        yield


# --- output helpers ----------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit(text: str, out) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def sidecar(out, timing: dict) -> None:
    """Timings go next to the report so the report itself stays deterministic."""
    if out is None or out == "-":
        return
    Path(str(out) + ".timing.json").write_text(dumps(timing))


def config_echo(cfg) -> dict:
    return {k: cfg[k] for k in sorted(cfg)}


# --- pipeline pieces -------------------------------------------------------------------------

def build_forms(cfg, grid=None, kernel=None):
    grid = grid or grid_of(cfg)
    kernel = kernel or kernel_of(cfg, grid)
    quad = quad_of(cfg)
    matrix = operator_matrix(kernel, grid, quad)
    meta = {"kernel": kernel.describe(), "quadrature": quad.describe(), "band": None}
    nsf = pyramid_from_matrix(grid, matrix, meta=meta)
    return kernel, matrix, nsf, split(nsf)


def _rel(a, b):
    scale = float(np.abs(b).max())
    return float(np.abs(a - b).max()) / scale if scale > 0 else float(np.abs(a).max())


def _check(name, value, threshold, passed, **detail):
    return {"name": name, "value": value, "threshold": threshold, "pass": bool(passed), **detail}


def run_checks(cfg, nsf: NonStandardForm, matrix, kernel):
    """The verification suite at the configured scale. Yields ``(check, seconds)``."""
    grid = nsf.grid
    rng = np.random.default_rng(cfg["seed"])
    sf = split(nsf)
    dense = DenseOperator(grid, matrix)
    t0 = time.perf_counter()

    def done(check):
        nonlocal t0
        t = time.perf_counter() - t0
        t0 = time.perf_counter()
        return check, t

    level = min(grid.J, 4)
    for r in check_kernel(kernel, grid, level).results():
        yield done(_check(r.name, r.value, r.threshold, r.passed,
                          **{k: v for k, v in r.detail.items()}))
    sup = local_boundedness_sweep(kernel, grid)
    yield done(_check("kernel_local_boundedness", sup, "finite", math.isfinite(sup)))

    # pyramid vs explicit inner products
    og = grid if kernel.table is not None else GridSpec(grid.M, min(grid.J, cfg["oracle_J"]))
    if og.N <= DIRECT_MAX_N:
        k2 = kernel if og == grid else kernel_of(cfg, og)
        T = matrix if og == grid else operator_matrix(k2, og, quad_of(cfg))
        a = pyramid_from_matrix(og, T)
        b = nsform_from_matrix_direct(og, T)
        scale = max(float(np.abs(m).max()) for fam in (b.A, b.B, b.C, [b.coarse]) for m in fam)
        err = max(float(np.abs(x - y).max()) for X, Y in ((a.A, b.A), (a.B, b.B), (a.C, b.C))
                  for x, y in zip(X, Y))
        err = max(err, float(np.abs(a.coarse - b.coarse).max()))
        value = err / scale if scale > 0 else err
        yield done(_check("oracle_equivalence", value, cfg["tol_oracle"],
                          value <= cfg["tol_oracle"], M=og.M, J=og.J))

    full = ApplyPlan.from_form(nsf)
    parts = [ApplyPlan.from_form(sf, components=(c,)) for c in ("smooth", "dyadic", "coarse")]
    e_full = e_split = 0.0
    for _ in range(cfg["n_random"]):
        f = rng.standard_normal(grid.N)
        ref = dense.apply_values(f)
        scale = np.linalg.norm(ref)
        e_full = max(e_full, np.linalg.norm(full.apply_values(f) - ref) / scale)
        e_split = max(e_split, np.linalg.norm(sum(p.apply_values(f) for p in parts) - ref) / scale)
    tol = cfg["tol_reconstruction"]
    yield done(_check("reconstruction_nsform", e_full, tol, e_full <= tol, inputs=cfg["n_random"]))
    yield done(_check("reconstruction_split", e_split, tol, e_split <= tol, inputs=cfg["n_random"]))

    big = max(max(float(np.abs(banded.to_dense(m)).max()) for m in fam)
              for fam in (nsf.A, nsf.B, nsf.C))
    worst = max(max(float(np.abs(banded.row_sums(b)).max()) for b in sf.smooth.beta),
                max(float(np.abs(banded.col_sums(g)).max()) for g in sf.smooth.gamma))
    bound = cfg["tol_cancellation"] * big
    yield done(_check("cancellation", worst, bound, worst <= bound, max_coefficient=big))

    dy = ApplyPlan.from_form(sf.dyadic)
    worst = 0.0
    for _ in range(cfg["n_support"]):
        j = int(rng.integers(0, grid.J))
        s = grid.cell_slice(DyadicCube(j, int(rng.integers(0, grid.side(j)))))
        v = rng.standard_normal(s.stop - s.start)
        f = np.zeros(grid.N)
        f[s] = v - v.mean()
        out = dy.apply_values(f)
        out[s] = 0.0
        worst = max(worst, float(np.abs(out).max()) / math.sqrt(grid.h * float(f @ f)))
    yield done(_check("dyadic_support", worst, cfg["tol_support"], worst <= cfg["tol_support"],
                      pairs=cfg["n_support"]))

    # <g, T f> against <T* g, f>, relative to |g| |T| |f| with |T| <= N max|h Kbar|
    f, g = rng.standard_normal(grid.N), rng.standard_normal(grid.N)
    lhs, rhs = g @ full.apply_values(f), full.adjoint().apply_values(g) @ f
    scale = np.linalg.norm(f) * np.linalg.norm(g) * grid.N * float(np.abs(matrix).max())
    err = abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)
    yield done(_check("adjoint_consistency", float(err), cfg["tol_adjoint"],
                      err <= cfg["tol_adjoint"]))

    lo, hi = cfg["decay_range"]
    smin, smax = cfg["decay_s"]
    try:
        fit = an.decay_fit(nsf, "abc", lo, hi)
        ok = fit.degenerate or smin <= fit.s_hat <= smax
        yield done(_check("decay_fit", fit.s_hat, [smin, smax], ok, **fit.as_dict()))
    except ValueError as exc:
        yield done(_check("decay_fit", None, [smin, smax], False, error=str(exc)))

    shells = an.shell_decompose(sf.smooth, "gamma")
    stats = an.compute_gamma_R(shells)
    gam = {s.R: s.Gamma for s in stats}
    r0, r1 = cfg["gamma_R"]
    glo, ghi = cfg["gamma_log2_ratio"]
    ratios = {}
    for R in range(r0, r1 + 1):
        if R + 1 in gam and gam[R] > 0 and gam[R + 1] > 0:
            ratios[R] = math.log2(gam[R] / gam[R + 1])
    zero = all(gam.get(R, 0.0) == 0.0 for R in range(r0, r1 + 2))
    ok = zero or (len(ratios) == r1 - r0 + 1 and all(glo <= v <= ghi for v in ratios.values()))
    yield done(_check("gamma_decay", list(ratios.values()), [glo, ghi], ok,
                      Gamma=[s.Gamma for s in stats], R_range=[r0, r1]))

    scan = an.wr_norm_scan(shells[:cfg["shell_R"]], grid, cfg["iters"], cfg["seed"])
    var = an.ratio_variation(scan)
    ok = var is None or var <= cfg["shell_factor"]
    yield done(_check("shell_norms", var, cfg["shell_factor"], ok,
                      scan=[s.as_dict() for s in scan]))
    if grid.N <= 512:
        rows = an.level_schur_check(shells)
        excess = max((n - g for _, _, n, g in rows), default=-math.inf)
        yield done(_check("level_schur_bound", excess, cfg["schur_tol"],
                          excess <= cfg["schur_tol"], blocks=len(rows)))
    A = an.compute_schur_A(sf.smooth)
    bound = an.schur_A_bound(sf.smooth)
    yield done(_check("schur_A", A, bound, math.isfinite(A) and A <= bound * (1 + 1e-12)))

    if kernel.table is None:
        ag = GridSpec(cfg["atom_M"], cfg["atom_J"])
        _, _, ansf, asf = build_forms(cfg, ag)
        atom = np.zeros(ag.N)
        cell = 1 << ag.J
        atom[:cell // 2], atom[cell // 2:cell] = 1.0, -1.0
        dec = an.atom_decompose_U(asf.smooth, atom)
        slope = dec.slope()
        ok = (math.isnan(slope) and not np.any(dec.perCell)) or slope <= cfg["atom_slope_max"]
        yield done(_check("atom_bound", slope, cfg["atom_slope_max"], ok and dec.residual <= 1e-12,
                          B=dec.B, residual=dec.residual, M=ag.M, J=ag.J))

    rec = an.counterexample_w1(GridSpec(max(grid.M, 2), grid.J))
    yield done(_check("counterexample", rec.exact, True, rec.passed, record=rec.as_dict()))

    c_now = float(tb.check_t1_dyadic(sf.dyadic)[1].max())
    if kernel.table is None and grid.J >= 2:
        _, _, _, prev = build_forms(cfg, GridSpec(grid.M, grid.J - 1))
        c_prev = float(tb.check_t1_dyadic(prev.dyadic)[1].max())
        change = abs(c_now - c_prev) / max(c_now, c_prev) if max(c_now, c_prev) > 0 else 0.0
        yield done(_check("t1_stability", change, cfg["t1_stability"],
                          math.isfinite(c_now) and change <= cfg["t1_stability"],
                          constant=c_now, previous=c_prev))

    bs = tb.make_bsystem_indicator(grid, p=cfg["p"], q=cfg["q"])
    rep = tb.run_tb_report(bs, dense, sf, cfg["C"], cfg["seed"], cfg["iters"])
    ok = bool(np.all(rep.reduction["holds"]))
    yield done(_check("tb_reduction", float(np.min(rep.reduction["margin"])), 0.0, ok,
                      exponent_ok=rep.exponent_ok, smooth_norm=rep.smooth_norm))


# --- commands ------------------------------------------------------------------------------

def cmd_build(cfg) -> int:
    out = Path(cfg["out"] or "haarbcr-out")
    out.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    _, _, nsf, sf = build_forms(cfg)
    if cfg["band"] is not None:
        nsf, sf = compress(nsf, cfg["band"]), compress(sf, cfg["band"])
    built = time.perf_counter() - t
    headers = {}
    for name, form in (("nsform.hbf", nsf), ("split.hbf", sf)):
        h = save_form(out / name, form)
        headers[name] = {"sha256": h["sha256"], "kind": h["kind"], "bytes": (out / name).stat().st_size}
    summary = {"config": config_echo(cfg), "files": headers}
    (out / "build.json").write_text(dumps(summary))
    sidecar(out / "build.json", {"build_seconds": built})
    for name, h in headers.items():
        print(f"{h['sha256']}  {out / name}")
    return EXIT_OK


def _load_or_build(cfg):
    if cfg["form"] is None:
        kernel, matrix, nsf, _ = build_forms(cfg)
        return kernel, matrix, nsf
    form = load_form(cfg["form"])
    if isinstance(form, SplitForm):
        raise ConfigError("verify needs a non-standard form file (nsform), got a split form")
    desc = form.meta.get("kernel") or {}
    grid = form.grid
    kernel = kernel_registry_get(desc.get("name", cfg["kernel"]),
                                 desc.get("params", cfg["kernel_params"]), grid)
    return kernel, operator_matrix(kernel, grid, quad_of(cfg)), form.dense()


def cmd_verify(cfg) -> int:
    kernel, matrix, nsf = _load_or_build(cfg)
    checks, timing = [], {}
    for check, seconds in run_checks(cfg, nsf, matrix, kernel):
        checks.append(check)
        timing[check["name"]] = seconds
    passed = all(c["pass"] for c in checks)
    report = {"config": config_echo(cfg), "grid": {"M": nsf.grid.M, "J": nsf.grid.J},
              "checks": checks, "pass": passed,
              "artifacts": [] if cfg["out"] in (None, "-") else [str(cfg["out"])]}
    emit(dumps(report), cfg["out"])
    sidecar(cfg["out"], timing)
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}", file=sys.stderr)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_apply(cfg) -> int:
    if cfg["input"] is None:
        raise ConfigError("apply needs --input")
    if cfg["out"] is None:
        raise ConfigError("apply needs --out")
    grid = grid_of(cfg)
    try:
        values = read_grid_values(cfg["input"])
    except ValueError as exc:
        raise OSError(f"unreadable input: {exc}") from None
    if values.shape != (grid.N,):
        raise ConfigError(f"input has {values.size} values, grid needs N={grid.N}")
    kernel, matrix, nsf, sf = build_forms(cfg)
    mode = cfg["mode"]
    if mode == "dense":
        out = DenseOperator(grid, matrix).apply_values(values)
    elif mode == "full":
        out = ApplyPlan.from_form(nsf, band=cfg["band"]).apply_values(values)
    else:
        out = ApplyPlan.from_form(sf, components=(mode,), band=cfg["band"]).apply_values(values)
    write_grid_function(cfg["out"], out)
    return EXIT_OK


def cmd_bench(cfg) -> int:
    backends = [cfg["backend"]] if cfg["backend"] else _backend.available()
    rows = bench_apply(cfg["sizes"], cfg["bands"], cfg["kernel"], cfg["M"], backends,
                       cfg["repeats"], cfg["cold_cache"], cfg["seed"])
    emit(bench_csv(rows), cfg["out"])
    dense = mean_doubling_ratio(rows, "dense")
    print(f"dense mean doubling ratio {dense:.3f}", file=sys.stderr)
    for b in cfg["bands"]:
        for name in backends:
            r = mean_doubling_ratio(rows, f"full@{name}", b)
            print(f"band {b} {name} mean doubling ratio {r:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_tb(cfg) -> int:
    grid = grid_of(cfg)
    if cfg["bsystem"] is not None:
        bs = tb.load_bsystem(cfg["bsystem"], grid)
    else:
        bs = tb.make_bsystem_indicator(grid, p=cfg["p"], q=cfg["q"])
    t = time.perf_counter()
    _, matrix, _, sf = build_forms(cfg)
    if cfg["tb_mode"] == "dyadic":
        report = tb.run_tb_report_dyadic(bs, sf.dyadic, cfg["C"])
    else:
        report = tb.run_tb_report(bs, DenseOperator(grid, matrix), sf, cfg["C"], cfg["seed"],
                                  cfg["iters"])
    doc = report.as_dict()
    doc["config"] = config_echo(cfg)
    emit(dumps(doc), cfg["out"])
    sidecar(cfg["out"], {"tb_seconds": time.perf_counter() - t})
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {"build": cmd_build, "verify": cmd_verify, "apply": cmd_apply, "bench": cmd_bench,
            "tb": cmd_tb}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="haarbcr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--kernel")
        p.add_argument("--M", type=int)
        p.add_argument("--J", type=int)
        p.add_argument("--band", type=int, help="Rmax: keep shells R <= band")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if name == "apply":
            p.add_argument("--input")
            p.add_argument("--mode", choices=MODES)
        if name == "verify":
            p.add_argument("--form", help="verify a saved non-standard form file")
        if name == "tb":
            p.add_argument("--bsystem", help="b-system JSON file")
            p.add_argument("--p")
            p.add_argument("--q")
        if name == "bench":
            p.add_argument("--backend", choices=_backend.available())
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = load_config(args.config, overrides)
        with thread_limit(cfg["threads"]):
            return COMMANDS[args.command](cfg)
    except FormError as exc:
        print(f"haarbcr: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, KernelError, tb.BSystemError) as exc:
        print(f"haarbcr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"haarbcr: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
