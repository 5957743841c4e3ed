import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from haarbcr import banded
from haarbcr.banded import BandMatrix
from haarbcr.dyadic import GridSpec
from haarbcr.kernels import kernel_registry_get, operator_matrix
from haarbcr.nsform import (FormError, ModifiedForm, NonStandardForm, SplitForm, band_truncate,
                            build_nsform_direct, build_nsform_pyramid, compress, diagonal_part,
                            embed, load_form, modify, nsform_from_matrix_direct,
                            pyramid_from_matrix, read_header, save_form, split)


def max_rel(a: NonStandardForm, b: NonStandardForm) -> float:
    d = banded.to_dense
    scale = max(np.abs(d(m)).max() for fam in (b.A, b.B, b.C, [b.coarse]) for m in fam)
    err = max(np.abs(d(x) - d(y)).max() for X, Y in ((a.A, b.A), (a.B, b.B), (a.C, b.C))
              for x, y in zip(X, Y))
    return max(err, np.abs(a.coarse - b.coarse).max()) / scale


@pytest.mark.parametrize("name", ["constant", "separable", "truncated-hilbert", "truncated-abs"])
@pytest.mark.parametrize("J", [1, 3, 6])
def test_pyramid_equals_direct_oracle(name, J):
    grid = GridSpec(2, J)
    k = kernel_registry_get(name, grid=grid)
    assert max_rel(build_nsform_pyramid(k, grid), build_nsform_direct(k, grid)) <= 1e-12


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
def test_pyramid_equals_direct_on_random_matrices(M, J, seed):
    grid = GridSpec(M, J)
    T = np.random.default_rng(seed).standard_normal((grid.N, grid.N))
    assert max_rel(pyramid_from_matrix(grid, T), nsform_from_matrix_direct(grid, T)) <= 1e-12


def test_two_cell_hand_example():
    """M=1, J=1: the single wavelet level of a 2x2 matrix by hand."""
    T = np.array([[1.0, 2.0], [3.0, 4.0]])
    f = pyramid_from_matrix(GridSpec(1, 1), T)
    assert f.A[0][0, 0] == pytest.approx((1 - 2 - 3 + 4) / 2)
    assert f.B[0][0, 0] == pytest.approx((1 + 2 - 3 - 4) / 2)
    assert f.C[0][0, 0] == pytest.approx((1 - 2 + 3 - 4) / 2)
    assert f.coarse[0, 0] == pytest.approx(10 / 2)


def test_direct_builder_refuses_large_grids():
    grid = GridSpec(2, 12)
    with pytest.raises(MemoryError):
        build_nsform_direct(kernel_registry_get("constant", grid=grid), grid)


def test_constant_kernel_has_only_coarse_block():
    grid = GridSpec(2, 3)
    f = build_nsform_pyramid(kernel_registry_get("constant", grid=grid), grid)
    assert all(np.abs(m).max() < 1e-15 for fam in (f.A, f.B, f.C) for m in fam)
    np.testing.assert_allclose(f.coarse, np.ones((2, 2)))


def test_banded_pyramid_equals_truncated_dense(hilbert_small):
    grid, _, matrix, nsf, _ = hilbert_small
    b = pyramid_from_matrix(grid, matrix, band=3)
    ref = band_truncate(nsf, 3)
    assert any(isinstance(m, BandMatrix) for m in b.A)
    assert max_rel(b, ref) == 0.0


def test_modified_form_cancellation(hilbert_small):
    *_, nsf, sf = hilbert_small
    big = max(np.abs(m).max() for fam in (nsf.A, nsf.B, nsf.C) for m in fam)
    for a, b, c in zip(sf.smooth.alpha, sf.smooth.beta, sf.smooth.gamma):
        assert not np.diag(a).any()
        assert np.abs(b.sum(axis=1)).max() <= 1e-12 * big
        assert np.abs(c.sum(axis=0)).max() <= 1e-12 * big


def test_split_reassembles_form(hilbert_small):
    *_, nsf, sf = hilbert_small
    ea, eb, ec = embed(sf.dyadic)
    for j in range(nsf.grid.J):
        np.testing.assert_allclose(sf.smooth.alpha[j] + ea[j], nsf.A[j], atol=1e-15)
        # diagonal of beta plus the row sum of B give back the diagonal of B
        db = np.diag(sf.smooth.beta[j]) + sf.dyadic.b[j]
        np.testing.assert_allclose(db, np.diag(nsf.B[j]), atol=1e-14)
        dc = np.diag(sf.smooth.gamma[j]) + sf.dyadic.c[j]
        np.testing.assert_allclose(dc, np.diag(nsf.C[j]), atol=1e-14)


def test_diagonal_part_by_hand():
    grid = GridSpec(1, 2)
    A = [np.array([[1.0]]), np.arange(4.0).reshape(2, 2)]
    B = [np.array([[2.0]]), np.array([[1.0, 2.0], [3.0, 4.0]])]
    C = [np.array([[3.0]]), np.array([[1.0, 2.0], [3.0, 4.0]])]
    df = diagonal_part(NonStandardForm(grid, A, B, C, np.zeros((1, 1))))
    assert np.array_equal(df.a[1], [0.0, 3.0])
    assert np.array_equal(df.b[1], [3.0, 7.0])
    assert np.array_equal(df.c[1], [4.0, 6.0])


def test_adjoints_swap_b_and_c(hilbert_small):
    *_, nsf, sf = hilbert_small
    adj = nsf.adjoint()
    assert np.array_equal(adj.B[2], nsf.C[2].T) and np.array_equal(adj.C[2], nsf.B[2].T)
    sadj = sf.adjoint()
    assert np.array_equal(sadj.dyadic.b[1], sf.dyadic.c[1])
    assert np.array_equal(sadj.smooth.beta[1], sf.smooth.gamma[1].T)


def test_band_truncate_rebalances_modified_form(hilbert_small):
    *_, sf = hilbert_small
    t = band_truncate(sf.smooth, 2)
    k = np.arange(t.beta[-1].shape[0])
    assert not t.beta[-1][np.abs(k[:, None] - k[None, :]) >= 4].any()
    assert np.abs(t.beta[-1].sum(axis=1)).max() < 1e-15
    assert np.abs(t.gamma[-1].sum(axis=0)).max() < 1e-15


def test_compress_uses_band_storage_and_keeps_values(hilbert_small):
    *_, sf = hilbert_small
    c = compress(sf, 2)
    ref = band_truncate(sf, 2)
    assert isinstance(c.smooth.beta[-1], BandMatrix)
    assert isinstance(c.smooth.beta[0], np.ndarray)
    np.testing.assert_allclose(c.smooth.gamma[-1].todense(), ref.smooth.gamma[-1], atol=1e-16)
    with pytest.raises(TypeError):
        band_truncate(sf.dyadic, 2)


@pytest.mark.parametrize("band", [None, 3])
@pytest.mark.parametrize("kind", ["nsform", "split"])
def test_serialization_roundtrip(tmp_path, hilbert_small, band, kind):
    *_, nsf, sf = hilbert_small
    form = nsf if kind == "nsform" else sf
    if band is not None:
        form = compress(form, band)
    header = save_form(tmp_path / "f.hbf", form)
    assert read_header(tmp_path / "f.hbf")[0] == header
    back = load_form(tmp_path / "f.hbf")
    assert type(back) is type(form)
    if kind == "nsform":
        assert max_rel(back, form) == 0.0
    else:
        for x, y in zip(back.smooth.gamma + back.dyadic.b, form.smooth.gamma + form.dyadic.b):
            assert np.array_equal(banded.to_dense(x), banded.to_dense(y))


def test_band_layout_file_size(tmp_path):
    grid = GridSpec(2, 8)
    form = compress(build_nsform_pyramid(kernel_registry_get("truncated-hilbert", grid=grid),
                                         grid), 4)
    header = save_form(tmp_path / "f.hbf", form)
    # levels with side > 16 are bands of width 31, the rest are dense
    expected = sum(3 * (n * 31 if n - 1 > 15 else n * n) for n in (2 << j for j in range(8)))
    _, offset = read_header(tmp_path / "f.hbf")
    assert (tmp_path / "f.hbf").stat().st_size == offset + 8 * (expected + 4)
    assert header["band"] == 4


def test_corrupted_file_detected(tmp_path, hilbert_small):
    *_, nsf, _ = hilbert_small
    path = tmp_path / "f.hbf"
    save_form(path, nsf)
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormError, match="checksum"):
        load_form(path)
    path.write_bytes(b"NOTAFORM" + bytes(raw[8:]))
    with pytest.raises(FormError, match="not a form"):
        load_form(path)


def test_shape_mismatch_rejected():
    with pytest.raises(FormError):
        pyramid_from_matrix(GridSpec(2, 2), np.zeros((4, 4)))
