"""Encoding operator ``A``, its adjoint, and the regularized normal operator.

Cartesian sampling uses a unitary 2-D FFT (``norm="ortho"``, DC at index 0)
followed by selection of the kept locations in row-major order.
Non-Cartesian sampling is an exact non-uniform DFT,
``sum_r x_r s_c(r) exp(-2 pi i (k_y row / rows + k_x col / cols))``, without
the ``1/sqrt(N)`` factor. Both paths then apply the optional coil whitener and
divide by ``norm_scale``.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .errors import ShapeMismatch, TooLarge
from .numerics import SeedSpec, draw_complex_gaussian
from .synthetic import SamplingPattern

MAX_MATERIALIZE_DIM = 1024
POWER_STREAM = 1 << 63
# dense Gram path for the normal operator stays below this image size
GRAM_DIM = 1024


class EncodingOperator:
    """Multi-coil forward model ``x -> W (P F (S_c x)) / norm_scale``."""

    def __init__(self, coils, pattern: SamplingPattern, whitener=None, norm_scale: float = 1.0):
        coils = np.asarray(coils, dtype=np.complex128)
        if coils.ndim == 2:
            coils = coils[None]
        if coils.shape[1:] != tuple(pattern.shape):
            raise ShapeMismatch(f"coil maps {coils.shape[1:]} do not match pattern {pattern.shape}")
        if whitener is not None:
            whitener = np.asarray(whitener, dtype=np.complex128)
            if whitener.shape != (coils.shape[0], coils.shape[0]):
                raise ShapeMismatch("whitener must be n_coils x n_coils")
        if not norm_scale > 0:
            raise ValueError("norm_scale must be positive")
        self.coils = coils
        self.pattern = pattern
        self.whitener = whitener
        self.norm_scale = float(norm_scale)

    @property
    def shape(self):
        return tuple(self.pattern.shape)

    @property
    def n_coils(self):
        return self.coils.shape[0]

    @property
    def n_samples(self):
        return self.pattern.n_samples

    @property
    def kspace_shape(self):
        return (self.n_coils, self.n_samples)

    @property
    def image_dim(self):
        return self.shape[0] * self.shape[1]

    @property
    def kspace_dim(self):
        return self.n_coils * self.n_samples

    def with_norm_scale(self, norm_scale: float) -> "EncodingOperator":
        return EncodingOperator(self.coils, self.pattern, self.whitener, norm_scale)

    def scaled(self, factor: float) -> "EncodingOperator":
        """Operator equal to ``factor * A``."""
        return self.with_norm_scale(self.norm_scale / factor)

    def normalized(self, steps: int = 15, margin: float = 1.01) -> "EncodingOperator":
        """Copy whose ``A^H A`` has spectral norm just below 1."""
        estimate = power_method_norm(self, steps=steps, margin=margin)
        return self.with_norm_scale(self.norm_scale * np.sqrt(estimate))

    @cached_property
    def _sample_index(self):
        return np.flatnonzero(self.pattern.mask.ravel())

    @cached_property
    def _ndft(self):
        rows, cols = self.shape
        ky, kx = self.pattern.coords[:, 0], self.pattern.coords[:, 1]
        rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        phase = np.outer(ky, rr.ravel() / rows) + np.outer(kx, cc.ravel() / cols)
        return np.exp(-2j * np.pi * phase)

    def _check_image(self, x):
        x = np.asarray(x, dtype=np.complex128)
        if x.shape[-2:] != self.shape:
            raise ShapeMismatch(f"image shape {x.shape[-2:]} does not match operator {self.shape}")
        return x

    def _check_kspace(self, y):
        y = np.asarray(y, dtype=np.complex128)
        if y.shape[-2:] != self.kspace_shape:
            raise ShapeMismatch(f"k-space shape {y.shape[-2:]} does not match {self.kspace_shape}")
        return y

    def forward(self, x) -> np.ndarray:
        x = self._check_image(x)
        lead = x.shape[:-2]
        coil_images = x[..., None, :, :] * self.coils
        if self.pattern.is_cartesian:
            k = np.fft.fft2(coil_images, norm="ortho")
            y = k.reshape(*lead, self.n_coils, -1)[..., self._sample_index]
        else:
            y = coil_images.reshape(*lead, self.n_coils, -1) @ self._ndft.T
        if self.whitener is not None:
            y = np.einsum("cd,...dn->...cn", self.whitener, y)
        return y / self.norm_scale

    def adjoint(self, y) -> np.ndarray:
        y = self._check_kspace(y)
        lead = y.shape[:-2]
        rows, cols = self.shape
        if self.whitener is not None:
            y = np.einsum("dc,...dn->...cn", self.whitener.conj(), y)
        if self.pattern.is_cartesian:
            grid = np.zeros((*lead, self.n_coils, rows * cols), dtype=np.complex128)
            grid[..., self._sample_index] = y
            coil_images = np.fft.ifft2(grid.reshape(*lead, self.n_coils, rows, cols), norm="ortho")
        else:
            coil_images = (y @ self._ndft.conj()).reshape(*lead, self.n_coils, rows, cols)
        return (coil_images * self.coils.conj()).sum(axis=-3) / self.norm_scale


def zero_operator(coils_shape, pattern: SamplingPattern) -> EncodingOperator:
    """An operator with all-zero coil maps (``A = 0``)."""
    return EncodingOperator(np.zeros(coils_shape, dtype=np.complex128), pattern)


def power_method_norm(op: EncodingOperator, steps: int = 15, margin: float = 1.01) -> float:
    """``margin`` times a power-iteration estimate of ``lambda_max(A^H A)``.

    The start vector comes from the fixed stream ``2**63`` so the estimate is
    reproducible and independent of any probe stream.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = draw_complex_gaussian(SeedSpec(0, POWER_STREAM), op.image_dim).reshape(op.shape)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(steps):
        y = op.adjoint(op.forward(x))
        estimate = float(np.vdot(x, y).real)
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        x = y / nrm
    return margin * estimate


class NormalOperator:
    """``A^H A + lam I``.

    :meth:`apply` composes forward and adjoint. :meth:`matvec` is the
    solver-facing entry point; for desk-scale images it multiplies by the
    exact dense Gram matrix ``A^H A`` (materialized once through
    :meth:`apply`), which is far cheaper per probe than two transforms.
    """

    def __init__(self, base: EncodingOperator, lam: float = 0.0, use_gram: bool | None = None):
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        self.base = base
        self.lam = float(lam)
        self.use_gram = base.image_dim <= GRAM_DIM if use_gram is None else use_gram

    @property
    def shape(self):
        return self.base.shape

    def apply(self, x) -> np.ndarray:
        x = self.base._check_image(x)
        return self.base.adjoint(self.base.forward(x)) + self.lam * x

    def apply_gram(self, x) -> np.ndarray:
        """``A^H A x`` without the regularizer."""
        x = self.base._check_image(x)
        if not self.use_gram:
            return self.base.adjoint(self.base.forward(x))
        flat = x.reshape(*x.shape[:-2], -1)
        return (flat @ self._gram_t).reshape(x.shape)

    def matvec(self, x) -> np.ndarray:
        x = self.base._check_image(x)
        return self.apply_gram(x) + self.lam * x

    @cached_property
    def _gram_t(self):
        n = self.base.image_dim
        if n > GRAM_DIM:
            raise TooLarge(f"image dimension {n} exceeds dense Gram limit {GRAM_DIM}")
        cols = self.base.adjoint(self.base.forward(_basis_images(self.shape)))
        gram = cols.reshape(n, n).T
        gram = 0.5 * (gram + gram.conj().T)
        return np.ascontiguousarray(gram.T)


def _basis_images(shape):
    n = shape[0] * shape[1]
    return np.eye(n, dtype=np.complex128).reshape(n, *shape)


def _basis_kspace(kshape):
    n = kshape[0] * kshape[1]
    return np.eye(n, dtype=np.complex128).reshape(n, *kshape)


def materialize_dense(op, max_dim: int = MAX_MATERIALIZE_DIM) -> np.ndarray:
    """Dense matrix whose column ``j`` is the operator applied to basis vector ``e_j``.

    Accepts an :class:`EncodingOperator` (``n_k x n_x``), a
    :class:`NormalOperator` (``n_x x n_x``, via :meth:`NormalOperator.apply`),
    or any callable image -> image together with its shape via a
    ``(callable, shape)`` tuple.
    """
    if isinstance(op, tuple):
        fn, shape = op
        n = shape[0] * shape[1]
        if n > max_dim:
            raise TooLarge(f"dimension {n} exceeds {max_dim}")
        return fn(_basis_images(shape)).reshape(n, -1).T
    n = op.base.image_dim if isinstance(op, NormalOperator) else op.image_dim
    if n > max_dim:
        raise TooLarge(f"image dimension {n} exceeds {max_dim}")
    basis = _basis_images(op.shape)
    if isinstance(op, NormalOperator):
        return op.apply(basis).reshape(n, n).T
    return op.forward(basis).reshape(n, -1).T


def check_adjoint(op: EncodingOperator, seed: SeedSpec, trials: int = 20) -> float:
    """Largest relative adjointness defect ``|<Ax,y> - <x,A^H y>| / (|x||y|)``."""
    worst = 0.0
    for t in range(trials):
        x = draw_complex_gaussian(seed.child(2 * t), op.image_dim).reshape(op.shape)
        y = draw_complex_gaussian(seed.child(2 * t + 1), op.kspace_dim).reshape(op.kspace_shape)
        lhs = np.vdot(y, op.forward(x))
        rhs = np.vdot(op.adjoint(y), x)
        scale = np.linalg.norm(x) * np.linalg.norm(y)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst

