"""Anisotropic total-variation prox with a selectable compute backend.

The compiled ``_tvcore`` extension is used when it imports; otherwise the
numpy fallback ``_tvpy`` takes over. Set ``PICONOISE_PURE=1`` to force the
fallback. Both produce bitwise-identical results.

TV acts separately on the real and imaginary parts with periodic forward
differences, so the prox ``argmin_x 1/2 |x - z|^2 + t |D x|_1`` is evaluated
by a projected gradient loop on the dual variable ``q`` constrained to
``|q| <= t``; the primal answer is ``z - D^T q``.
"""

from __future__ import annotations

import os

import numpy as np

from . import _tvpy

TAU = 0.125

if os.environ.get("PICONOISE_PURE", "") not in ("", "0"):
    _core = _tvpy
    BACKEND = "python"
else:
    try:
        from . import _tvcore as _core

        BACKEND = "cython"
    except ImportError:  # extension not built
        _core = _tvpy
        BACKEND = "python"


def backend(name: str | None = None):
    """Module implementing the kernels: ``"cython"``, ``"python"`` or the active one."""
    if name is None:
        return _core
    if name == "python":
        return _tvpy
    if name == "cython":
        from . import _tvcore

        return _tvcore
    raise ValueError(f"unknown TV backend {name!r}")


def real_view(x: np.ndarray) -> np.ndarray:
    """``(B, rows, cols)`` complex -> contiguous ``(B, rows, cols, 2)`` float64."""
    return np.ascontiguousarray(x, dtype=np.complex128).view(np.float64).reshape(*x.shape, 2)


def complex_view(r: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(r).view(np.complex128)[..., 0]


def tv_norm(x: np.ndarray) -> np.ndarray:
    """Anisotropic TV of each image in a batch (real and imaginary parts summed)."""
    r = real_view(x[None] if x.ndim == 2 else x)
    gr = np.roll(r, -1, axis=1) - r
    gc = np.roll(r, -1, axis=2) - r
    return np.abs(gr).sum(axis=(1, 2, 3)) + np.abs(gc).sum(axis=(1, 2, 3))


def empty_dual(batch: int, shape) -> np.ndarray:
    return np.zeros((batch, 2, *shape, 2), dtype=np.float64)


def prox(z, q, thresh: float, n_inner: int, masks=None, impl=None):
    """Batched TV prox on complex images ``z`` ``(B, rows, cols)``.

    ``q`` is the warm-started dual, updated in place. When ``masks`` is a
    uint8 array of shape ``(B, n_inner, 2, rows, cols, 2)`` the active-set
    indicators are recorded for later linearization.
    """
    core = impl or _core
    out = core.prox_forward(real_view(z), q, float(thresh), int(n_inner), TAU, masks)
    return complex_view(np.asarray(out))


def prox_tangent(dz, dq, masks, impl=None):
    """Linearized prox applied to tangents ``dz`` (B, rows, cols) with recorded ``masks``."""
    core = impl or _core
    out = core.prox_tangent(real_view(dz), dq, masks, TAU)
    return complex_view(np.asarray(out))
