"""Haar non-standard forms of kernel operators, their dyadic split, and T(b) checks."""
from . import _backend
from .dyadic import (DyadicCube, GridFunction, GridSpec, WaveletCoeffs, haar_analysis,
                     haar_synthesis, indicator, sample_phi, sample_psi)
from .kernels import (MIDPOINT, KernelError, KernelSpec, Quadrature, check_kernel,
                      kernel_names, kernel_registry_get, operator_matrix)
from .nsform import (DiagonalForm, FormError, ModifiedForm, NonStandardForm, SplitForm,
                     band_truncate, build_nsform_direct, build_nsform_pyramid, compress,
                     load_form, modify, save_form, split)
from .fastapply import (ApplyPlan, DenseOperator, apply_dense, apply_dyadic, apply_nsform,
                        bench_apply, estimate_opnorm)

__version__ = "0.1.0"

backend = _backend.active

__all__ = [
    "ApplyPlan", "DenseOperator", "DiagonalForm", "DyadicCube", "FormError", "GridFunction",
    "GridSpec", "KernelError", "KernelSpec", "MIDPOINT", "ModifiedForm", "NonStandardForm",
    "Quadrature", "SplitForm", "WaveletCoeffs", "apply_dense", "apply_dyadic", "apply_nsform",
    "band_truncate", "bench_apply", "build_nsform_direct", "build_nsform_pyramid",
    "check_kernel", "compress", "estimate_opnorm", "haar_analysis", "haar_synthesis",
    "indicator", "kernel_names", "kernel_registry_get", "load_form", "modify",
    "operator_matrix", "sample_phi", "sample_psi", "save_form", "split", "backend",
]
