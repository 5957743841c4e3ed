import numpy as np
import pytest
from hypothesis import settings

from haarbcr import GridSpec, build_nsform_pyramid, kernel_registry_get, split
from haarbcr.kernels import operator_matrix

settings.register_profile("ci", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def hilbert_small():
    """Truncated Hilbert kernel on M=2, J=6 (N=128): grid, kernel, matrix, nsf, split."""
    grid = GridSpec(2, 6)
    kernel = kernel_registry_get("truncated-hilbert", grid=grid)
    nsf = build_nsform_pyramid(kernel, grid)
    return grid, kernel, operator_matrix(kernel, grid), nsf, split(nsf)


@pytest.fixture(scope="session")
def hilbert_desk():
    """Desk scale M=2, J=8 (N=512)."""
    grid = GridSpec(2, 8)
    kernel = kernel_registry_get("truncated-hilbert", grid=grid)
    nsf = build_nsform_pyramid(kernel, grid)
    return grid, kernel, operator_matrix(kernel, grid), nsf, split(nsf)
