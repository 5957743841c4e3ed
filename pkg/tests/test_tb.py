import json
import math

import numpy as np
import pytest

from haarbcr import tb
from haarbcr.dyadic import DyadicCube, GridSpec
from haarbcr.fastapply import ApplyPlan, DenseOperator
from haarbcr.kernels import kernel_registry_get, operator_matrix
from haarbcr.nsform import DiagonalForm, build_nsform_pyramid, split


def forms(name, grid):
    k = kernel_registry_get(name, grid=grid)
    return DenseOperator(grid, operator_matrix(k, grid)), split(build_nsform_pyramid(k, grid))


def left_half_system(grid, height):
    cubes = list(grid.cubes(range(grid.J)))
    bs = []
    for Q in cubes:
        v = np.zeros(grid.N)
        s = grid.cell_slice(Q)
        v[s.start:s.start + (s.stop - s.start) // 2] = height
        bs.append(v)
    return cubes, bs


@pytest.mark.parametrize("p,q", [(2, 2), (1.5, 3), (4, math.inf)])
def test_indicator_system_constants(p, q):
    grid = GridSpec(2, 4)
    bs = tb.make_bsystem_indicator(grid, p=p, q=q)
    assert len(bs.cubes) == 2 * 15
    assert not tb.check_normalization(bs).any()
    assert np.all(tb.check_size(bs) == 2.0)
    h = grid.h
    for Q, b in zip(bs.cubes, bs.b1):
        assert h * b.sum() == Q.size


def test_normalization_residuals_by_hand():
    grid = GridSpec(1, 3)
    cubes, b = left_half_system(grid, 2.0)
    bs = tb.BSystem(grid, cubes, b, b, 2, 2)
    assert not tb.check_normalization(bs).any()
    np.testing.assert_allclose(tb.check_size(bs), 4.0)  # 2 |Q| from each of b1, b2
    cubes, b = left_half_system(grid, 1.0)
    np.testing.assert_allclose(tb.check_normalization(tb.BSystem(grid, cubes, b, b, 2, 2)), 0.5)


def test_size_with_infinite_exponent_uses_sup_norm():
    grid = GridSpec(1, 2)
    cubes, b = left_half_system(grid, 2.0)
    bs = tb.BSystem(grid, cubes, b, b, math.inf, 2)
    np.testing.assert_allclose(tb.check_size(bs), 2.0 + 2.0)


def test_size_random_system_exact_sums(rng):
    grid = GridSpec(2, 3)
    cubes = list(grid.cubes())
    b1, b2 = [], []
    for Q in cubes:
        for out in (b1, b2):
            v = np.zeros(grid.N)
            v[grid.cell_slice(Q)] = rng.uniform(-2, 2, grid.cell_slice(Q).stop - grid.cell_slice(Q).start)
            out.append(v)
    bs = tb.BSystem(grid, cubes, b1, b2, 3, 1.5)
    got = tb.check_size(bs)
    for i, Q in enumerate(cubes):
        s = grid.cell_slice(Q)
        ref = (grid.h * (np.abs(b1[i][s]) ** 3).sum() + grid.h * (np.abs(b2[i][s]) ** 1.5).sum()) / Q.size
        assert got[i] == pytest.approx(ref, rel=1e-13)


def test_support_violation_names_cube():
    grid = GridSpec(1, 2)
    v = np.ones(grid.N)
    with pytest.raises(tb.BSystemError, match=r"Q\[1,0\]"):
        tb.BSystem(grid, [DyadicCube(1, 0)], [v], [v], 2, 2)


@pytest.mark.parametrize("p", [1, 0.5, "1"])
def test_exponents_must_exceed_one(p):
    with pytest.raises(tb.BSystemError):
        tb.make_bsystem_indicator(GridSpec(1, 2), p=p)


def test_exponent_constraint_flag():
    grid = GridSpec(1, 2)
    assert tb.make_bsystem_indicator(grid, p=4, q=4).exponent_ok
    assert tb.make_bsystem_indicator(grid, p=2, q=2).exponent_ok
    assert not tb.make_bsystem_indicator(grid, p=4 / 3, q=4 / 3).exponent_ok
    assert tb.make_bsystem_indicator(grid, p="inf", q=1.01).exponent_ok


def test_image_zero_operator():
    grid = GridSpec(2, 3)
    bs = tb.make_bsystem_indicator(grid)
    zero = DenseOperator(grid, np.zeros((grid.N, grid.N)))
    assert not tb.check_image(bs, zero).any()


def test_image_constant_kernel_closed_form():
    grid = GridSpec(2, 4)
    T, _ = forms("constant", grid)
    bs = tb.make_bsystem_indicator(grid)
    # T 1_Q = |Q| everywhere, so each term is |Q|^2
    sizes = np.array([Q.size for Q in bs.cubes])
    np.testing.assert_allclose(tb.check_image(bs, T), 2 * sizes ** 2, rtol=1e-13)


def test_image_hilbert_finite(hilbert_small):
    grid, _, matrix, *_ = hilbert_small
    bs = tb.make_bsystem_indicator(grid)
    img = tb.check_image(bs, DenseOperator(grid, matrix))
    assert np.all(np.isfinite(img)) and img.max() > 0


def test_image_dense_adjoint_consistency(hilbert_small, rng):
    grid, _, matrix, *_ = hilbert_small
    T = DenseOperator(grid, matrix)
    bs = tb.make_bsystem_indicator(grid)
    for b in bs.b1[:20]:
        g = rng.standard_normal(grid.N)
        lhs = g @ T.apply_values(b)
        rhs = T.adjoint().apply_values(g) @ b
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(g) * np.linalg.norm(b)


def test_t1_zero_for_constant_kernel():
    grid = GridSpec(2, 4)
    _, sf = forms("constant", grid)
    assert np.abs(tb.check_t1_dyadic(sf.dyadic)[1]).max() < 1e-12


def test_t1_single_level_closed_form():
    """b = 1 at level j0 only: the constant is 1 for cubes at levels <= j0 and
    2**(1 + j0 - j) below."""
    grid, j0 = GridSpec(2, 5), 2
    zeros = [np.zeros(grid.side(j)) for j in range(grid.J)]
    b = [z.copy() for z in zeros]
    b[j0][:] = 1.0
    df = DiagonalForm(grid, [z.copy() for z in zeros], b, [z.copy() for z in zeros])
    cubes, vals = tb.check_t1_dyadic(df)
    for Q, v in zip(cubes, vals):
        ref = 1.0 if Q.j <= j0 else 2.0 ** (1 + j0 - Q.j)
        assert v == pytest.approx(ref, rel=1e-13), Q


def test_t1_hilbert_stable():
    c = []
    for J in (7, 8):
        _, sf = forms("truncated-hilbert", GridSpec(2, J))
        c.append(tb.check_t1_dyadic(sf.dyadic)[1].max())
    assert math.isfinite(c[1]) and abs(c[1] - c[0]) / c[1] <= 0.10


def test_report_constant_kernel_passes():
    grid = GridSpec(2, 4)
    T, sf = forms("constant", grid)
    rep = tb.run_tb_report(tb.make_bsystem_indicator(grid), T, sf, C=2.0)
    assert rep.passed, rep.passes()
    assert rep.sups()["size"] == 2.0 and rep.sups()["image"] == pytest.approx(2.0)
    assert rep.sups()["t1"] < 1e-12


def test_report_hilbert_reduction_holds_every_cube(hilbert_small):
    grid, _, matrix, _, sf = hilbert_small
    rep = tb.run_tb_report(tb.make_bsystem_indicator(grid), DenseOperator(grid, matrix), sf, C=10)
    assert np.all(rep.reduction["holds"]) and len(rep.cubes) == 2 * 63
    # the dyadic image really differs from the full one, so the check is not vacuous
    assert np.abs(rep.reduction["lhs"] - np.sqrt(tb.image_terms(
        tb.make_bsystem_indicator(grid), DenseOperator(grid, matrix))[0])).max() > 1e-3
    doc = json.loads(rep.to_json())
    assert doc["pass"]["reduction"] and len(doc["cubes"]) == len(rep.cubes)
    assert rep.to_csv().startswith("cube,j,k,normalization")


def test_report_flags_exponents():
    grid = GridSpec(2, 3)
    T, sf = forms("truncated-hilbert", grid)
    bad = tb.run_tb_report(tb.make_bsystem_indicator(grid, p=4 / 3, q=4 / 3), T, sf, C=100)
    assert not bad.passes()["exponents"] and not bad.passed
    good = tb.run_tb_report(tb.make_bsystem_indicator(grid, p=4, q=4), T, sf, C=100)
    assert good.passes()["exponents"]


def test_report_dyadic_entry_point():
    grid = GridSpec(2, 4)
    _, sf = forms("truncated-hilbert", grid)
    rep = tb.run_tb_report_dyadic(tb.make_bsystem_indicator(grid), sf.dyadic, C=10)
    assert rep.mode == "dyadic" and rep.reduction is None
    direct = tb.check_image(tb.make_bsystem_indicator(grid), ApplyPlan.from_form(sf.dyadic),
                            ApplyPlan.from_form(sf.dyadic.adjoint()))
    np.testing.assert_allclose(rep.image, direct)


def test_report_grid_mismatch():
    T, sf = forms("constant", GridSpec(2, 3))
    with pytest.raises(ValueError, match="inconsistent"):
        tb.run_tb_report(tb.make_bsystem_indicator(GridSpec(2, 4)), T, sf)


def test_load_bsystem(tmp_path):
    grid = GridSpec(1, 2)
    good = {"M": 1, "J": 2, "p": 2, "q": "inf",
            "cubes": [{"j": 1, "k": 1, "b1": [0, 0, 2, 0]}]}
    path = tmp_path / "b.json"
    path.write_text(json.dumps(good))
    bs = tb.load_bsystem(path, grid)
    assert bs.q == math.inf and np.array_equal(bs.b2[0], [0, 0, 2, 0])
    good["cubes"][0]["b1"] = [1, 0, 2, 0]
    path.write_text(json.dumps(good))
    with pytest.raises(tb.BSystemError, match=r"Q\[1,1\]"):
        tb.load_bsystem(path)
    path.write_text(json.dumps({"M": 1}))
    with pytest.raises(tb.BSystemError, match="malformed"):
        tb.load_bsystem(path)
