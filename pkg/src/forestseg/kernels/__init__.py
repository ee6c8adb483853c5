"""Kernel backend selection.

The compiled Cython extension is preferred; the pure-NumPy implementation is
the fallback. Selection happens once at import and can be overridden with the
``FORESTSEG_KERNELS`` environment variable (``cython`` | ``numpy``) or at
runtime with :func:`set_backend` (used by the kernel benchmark and the
equivalence tests).
"""

import os

import numpy as np

from . import numpy_backend

try:
    from . import _core
except ImportError:
    _core = None

HAVE_EXTENSION = _core is not None

_BACKENDS = {"numpy": numpy_backend}
if HAVE_EXTENSION:
    _BACKENDS["cython"] = _core

_env = os.environ.get("FORESTSEG_KERNELS", "").strip().lower()
if _env and _env not in _BACKENDS:
    if _env == "cython":
        raise ImportError(
            "FORESTSEG_KERNELS=cython requested but the compiled extension "
            "is not importable; build it with `pip install -e .`"
        )
    raise ImportError(f"unknown FORESTSEG_KERNELS backend {_env!r}")

_active_name = _env or ("cython" if HAVE_EXTENSION else "numpy")
_active = _BACKENDS[_active_name]


def backend_name() -> str:
    return _active_name


def set_backend(name: str) -> None:
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]
    _active_name = name


def _as4d(x):
    return np.ascontiguousarray(x)


def im2col(x, kh: int, kw: int, stride: int = 1, pad: int = 0):
    return _active.im2col(_as4d(x), kh, kw, stride, pad)


def col2im(cols, h: int, w: int, kh: int, kw: int, stride: int = 1, pad: int = 0):
    return _active.col2im(np.ascontiguousarray(cols), h, w, kh, kw, stride, pad)


def maxpool2x2(x):
    return _active.maxpool2x2(_as4d(x))


def maxpool2x2_backward(dout, arg, h: int, w: int):
    return _active.maxpool2x2_backward(
        np.ascontiguousarray(dout), np.ascontiguousarray(arg), h, w
    )
