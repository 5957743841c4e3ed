"""Pure numpy versions of the compiled kernels in ``_ckernels``.

Signatures and in-place semantics match the compiled module exactly so the
two can be swapped at import time.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_R = np.sqrt(0.5)


def band_matvec(data, w, x, out):
    n, width = data.shape
    xpad = np.zeros(n + 2 * w)
    xpad[w:w + n] = x
    windows = sliding_window_view(xpad, width)[:n]
    out += np.einsum("kd,kd->k", data, windows)


def haar_split(s, coarse, detail):
    even, odd = s[0::2], s[1::2]
    np.add(even, odd, out=coarse)
    coarse *= _R
    np.subtract(even, odd, out=detail)
    detail *= _R


def haar_merge(coarse, detail, s):
    np.add(coarse, detail, out=s[0::2])
    np.subtract(coarse, detail, out=s[1::2])
    s *= _R
