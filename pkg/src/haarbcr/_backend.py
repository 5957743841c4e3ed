"""Kernel backend selection.

The compiled extension is used when it imports and ``HAARBCR_BACKEND`` is not
set to ``python``. :func:`use` switches at runtime (the benchmark runs both).
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_MODULES = {"python": _pykernels}
if _ckernels is not None:
    _MODULES["compiled"] = _ckernels


def available():
    return sorted(_MODULES)


def _default():
    requested = os.environ.get("HAARBCR_BACKEND", "").strip().lower()
    if requested in _MODULES:
        return requested
    return "compiled" if "compiled" in _MODULES else "python"


_active = _default()


def active():
    return _active


def use(name):
    """Select the kernel backend; returns the previously active name."""
    global _active
    if name not in _MODULES:
        raise ValueError(f"backend {name!r} not available (have {available()})")
    previous, _active = _active, name
    return previous


def band_matvec(data, w, x, out):
    _MODULES[_active].band_matvec(data, w, x, out)


def haar_split(s, coarse, detail):
    _MODULES[_active].haar_split(s, coarse, detail)


def haar_merge(coarse, detail, s):
    _MODULES[_active].haar_merge(coarse, detail, s)
