import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from haarbcr.dyadic import (DyadicCube, GridFunction, GridSpec, cascade, cube_distance,
                            eval_phi, eval_psi, fold_synthesis, haar_analysis, haar_synthesis,
                            indicator, read_grid_function, read_grid_values, sample_phi,
                            sample_psi, write_grid_function)

grids = st.builds(GridSpec, M=st.integers(1, 5), J=st.integers(0, 6))


def explicit_coefficients(grid, values):
    """Inner products against sampled basis functions (independent of the cascade)."""
    x = grid.midpoints()
    details = [np.array([grid.h * values @ eval_psi(j, k, x) for k in range(grid.side(j))])
               for j in range(grid.J)]
    coarse = np.array([grid.h * values @ eval_phi(0, m, x) for m in range(grid.M)])
    return coarse, details


def test_grid_arithmetic():
    g = GridSpec(3, 4)
    assert g.N == 48 and g.h == 1 / 16 and g.side(2) == 12
    assert g.cell_slice(DyadicCube(2, 5)) == slice(20, 24)
    assert len(list(g.cubes())) == 3 * (2 ** 4 - 1)


@pytest.mark.parametrize("M,J", [(0, 1), (1, -1), (1.5, 2)])
def test_grid_rejects_bad_parameters(M, J):
    with pytest.raises(ValueError):
        GridSpec(M, J)


def test_cube_relations():
    Q = DyadicCube(1, 3)
    assert Q.left == 1.5 and Q.right == 2.0 and str(Q) == "Q[1,3]"
    assert Q.parent() == DyadicCube(0, 1)
    assert DyadicCube(0, 1).contains(Q) and not DyadicCube(0, 0).contains(Q)
    assert cube_distance(DyadicCube(2, 1), DyadicCube(2, 4)) == 0.5
    assert cube_distance(DyadicCube(2, 1), DyadicCube(2, 2)) == 0.0
    with pytest.raises(ValueError):
        cube_distance(DyadicCube(1, 0), DyadicCube(2, 0))


def test_basis_functions_orthonormal():
    g = GridSpec(2, 4)
    psis = [sample_psi(g, j, k) for j in range(g.J) for k in range(g.side(j))]
    phis = [sample_phi(g, 0, m) for m in range(g.M)]
    basis = np.array([f.values for f in psis + phis])
    gram = g.h * basis @ basis.T
    np.testing.assert_allclose(gram, np.eye(g.N), atol=1e-14)


def test_psi_values():
    assert eval_psi(0, 0, 0.25) == 1.0 and eval_psi(0, 0, 0.75) == -1.0
    assert eval_psi(2, 1, 0.3) == 2.0 and eval_psi(2, 1, 0.4) == -2.0
    assert eval_phi(2, 1, 0.3) == 2.0 and eval_phi(2, 1, 0.6) == 0.0


@given(grids, st.integers(0, 2 ** 32 - 1))
def test_cascade_matches_explicit_inner_products(grid, seed):
    values = np.random.default_rng(seed).standard_normal(grid.N)
    details, scalings = cascade(grid, values)
    coarse, ref = explicit_coefficients(grid, values)
    np.testing.assert_allclose(scalings[0], coarse, atol=1e-12)
    for d, r in zip(details, ref):
        np.testing.assert_allclose(d, r, atol=1e-12)


@given(grids, st.integers(0, 2 ** 32 - 1))
def test_analysis_synthesis_roundtrip_and_parseval(grid, seed):
    f = GridFunction(grid, np.random.default_rng(seed).standard_normal(grid.N))
    c = haar_analysis(f)
    assert math.isclose(c.energy(), f.norm() ** 2, rel_tol=1e-12)
    np.testing.assert_allclose(haar_synthesis(c).values, f.values, atol=1e-12)


def test_fold_synthesis_sums_scaling_functions_across_levels(rng):
    g = GridSpec(2, 3)
    phi = [rng.standard_normal(g.side(j)) for j in range(g.J)]
    psi = [rng.standard_normal(g.side(j)) for j in range(g.J)]
    x = g.midpoints()
    ref = np.zeros(g.N)
    for j in range(g.J):
        for k in range(g.side(j)):
            ref += phi[j][k] * eval_phi(j, k, x) + psi[j][k] * eval_psi(j, k, x)
    np.testing.assert_allclose(fold_synthesis(g, phi, psi), ref, atol=1e-13)


def test_grid_function_algebra_and_immutability():
    g = GridSpec(1, 2)
    raw = np.arange(4.0)
    f = GridFunction(g, raw)
    raw[0] = 99.0
    assert f.values[0] == 0.0
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    assert f.integral() == 1.5
    assert (2 * f - f).inner(f) == f.inner(f)
    assert indicator(g, DyadicCube(1, 1)).integral() == 0.5
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(3))


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_grid_function_io_roundtrip(tmp_path, rng, suffix):
    g = GridSpec(2, 3)
    f = GridFunction(g, rng.standard_normal(g.N))
    path = tmp_path / ("f" + suffix)
    write_grid_function(path, f)
    assert np.array_equal(read_grid_function(path, g).values, f.values)
    with pytest.raises(ValueError):
        read_grid_function(path, GridSpec(2, 2))


def test_truncated_binary_rejected(tmp_path):
    path = tmp_path / "f.bin"
    write_grid_function(path, np.ones(4))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ValueError):
        read_grid_values(path)
