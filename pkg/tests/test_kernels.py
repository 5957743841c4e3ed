import math

import numpy as np
import pytest

from haarbcr.dyadic import GridSpec
from haarbcr.kernels import (KernelError, KernelSpec, Quadrature, cell_averages, center_pairs,
                             check_kernel, check_regularity, check_size, check_weak_integral,
                             kernel_names, kernel_registry_get, local_boundedness_sweep,
                             operator_matrix, read_kernel_table, regularity_triples,
                             write_kernel_table)

G = GridSpec(2, 5)


def test_registry_lists_builtins():
    assert kernel_names() == ["constant", "separable", "tabulated", "truncated-abs",
                              "truncated-hilbert"]
    with pytest.raises(KernelError, match="unknown kernel"):
        kernel_registry_get("gauss")


def test_truncated_hilbert_values():
    k = kernel_registry_get("truncated-hilbert", {"delta": 0.5})
    assert k(1.0, 0.0) == pytest.approx(1 / 1.25)
    assert k(0.0, 0.0) == 0.0
    assert k(0.0, 1.0) == -k(1.0, 0.0)


def test_truncated_abs_values():
    k = kernel_registry_get("truncated-abs", grid=G)
    assert k(0.0, 0.0) == 1 / G.h
    assert k(2.0, 0.0) == 0.5


@pytest.mark.parametrize("params", [{"delta": 0}, {"delta": -1.0}])
def test_bad_delta_rejected(params):
    with pytest.raises(KernelError):
        kernel_registry_get("truncated-hilbert", params)


def test_holder_exponent_validated():
    with pytest.raises(KernelError):
        KernelSpec("x", lambda x, y: x, C0=1.0, s=1.5)


def test_separable_kernel_and_bound():
    k = kernel_registry_get("separable", {"u": [1.0, 2.0], "v": [0.0, 1.0]}, grid=G)
    assert k(1.0, 3.0) == 9.0
    assert k.C0 == pytest.approx(5.0 * 2.0 * 2.0)


def test_midpoint_averages_match_direct_evaluation():
    k = kernel_registry_get("truncated-hilbert", grid=G)
    x = G.midpoints()
    ref = np.array([[k(a, b) for b in x] for a in x])
    np.testing.assert_allclose(cell_averages(k, G, rows_per_block=7), ref, rtol=0, atol=0)
    np.testing.assert_allclose(operator_matrix(k, G), G.h * ref, rtol=1e-15)


def test_refined_quadrature_only_touches_near_diagonal():
    k = kernel_registry_get("truncated-abs", grid=G)
    plain = cell_averages(k, G)
    fine = cell_averages(k, G, Quadrature(m=4, cutoff=1))
    p = np.arange(G.N)
    far = np.abs(p[:, None] - p[None, :]) > 1
    assert np.array_equal(plain[far], fine[far])
    # the m x m rule on the diagonal cell averages 1/max(|t|, h) over the cell
    offs = ((np.arange(4) + 0.5) / 4 - 0.5) * G.h
    ref = np.mean(1 / np.maximum(np.abs(offs[:, None] - offs[None, :]), G.h))
    assert fine[3, 3] == pytest.approx(ref)


def test_tabulated_roundtrip(tmp_path):
    table = np.arange(16.0).reshape(4, 4)
    path = tmp_path / "k.txt"
    write_kernel_table(path, table, C0=3.0)
    got, c0 = read_kernel_table(path)
    assert np.array_equal(got, table) and c0 == 3.0
    g = GridSpec(1, 2)
    k = kernel_registry_get("tabulated", {"path": str(path)}, grid=g)
    assert k(0.3, 0.9) == table[1, 3]
    assert np.array_equal(cell_averages(k, g), table)
    with pytest.raises(KernelError):
        cell_averages(k, GridSpec(1, 3))


def test_tabulated_header_mismatch(tmp_path):
    path = tmp_path / "k.txt"
    path.write_text("3\n1 2 3\n")
    with pytest.raises(KernelError, match="N=3"):
        read_kernel_table(path)


def test_size_check_on_hilbert():
    k = kernel_registry_get("truncated-hilbert", grid=G)
    r = check_size(k, center_pairs(G, 3))
    assert r.passed and r.value <= 1.0
    # the sup is approached at the largest separations, where delta is negligible
    assert r.value > 0.99


def test_size_check_detects_violation():
    k = KernelSpec("big", lambda x, y: 5.0 / np.abs(np.subtract(x, y)), C0=1.0, s=1.0)
    assert not check_size(k, center_pairs(G, 2)).passed


def test_regularity_of_exact_hilbert_brute_force():
    """For 1/(x-y) the ratio has a closed form; compare with the sampled sup."""
    k = KernelSpec("hilbert", lambda x, y: 1.0 / np.subtract(x, y), C0=1.0, s=1.0,
                   reg_constant=8.0)
    triples = regularity_triples(G, 3, steps=1)
    r = check_regularity(k, triples)
    x, xp, y = triples
    ok = np.abs(x - xp) <= 0.5 * np.abs(x - y)
    d, e = np.abs(x - y)[ok], np.abs(x - xp)[ok]
    # |x'-y| = d - e or d + e depending on side; the sup over both sides is at d - e
    ref = np.max(2 * d ** 2 / (d * (d - e)))
    assert r.value == pytest.approx(ref, rel=1e-12)
    assert r.passed


def test_regularity_rejects_all_inadmissible():
    k = kernel_registry_get("truncated-hilbert", grid=G)
    with pytest.raises(ValueError):
        check_regularity(k, (np.zeros(2), np.ones(2), np.zeros(2) + 1.5))


def test_weak_integral_constants_are_finite():
    k = kernel_registry_get("truncated-hilbert", grid=G)
    adj, sep = check_weak_integral(k, G, 2)
    assert adj.passed and sep.passed
    assert 0 < adj.value < 3 and 0 < sep.value < math.inf


def test_weak_adjacent_constant_for_constant_kernel():
    k = kernel_registry_get("constant", {"c": 2.0}, grid=G)
    adj, sep = check_weak_integral(k, G, 1)
    # int_Q int_R 2 / |Q| = 2 |Q|
    assert adj.value == pytest.approx(2 * 0.5)
    assert sep.value == 0.0


def test_local_boundedness_sweep():
    assert local_boundedness_sweep(kernel_registry_get("truncated-abs", grid=G), G) == 1 / G.h
    bad = KernelSpec("bad", lambda x, y: 1.0 / np.subtract(x, y), C0=1.0, s=1.0)
    with np.errstate(divide="ignore"), pytest.raises(KernelError):
        local_boundedness_sweep(bad, G)


@pytest.mark.parametrize("name", ["constant", "separable", "truncated-hilbert", "truncated-abs"])
def test_check_kernel_passes_on_builtins(name):
    rep = check_kernel(kernel_registry_get(name, grid=G), G)
    assert rep.passed, [r.as_dict() for r in rep.results()]
