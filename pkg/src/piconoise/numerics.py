"""Numerical primitives shared by every other module.

Conventions
-----------
Images ("ComplexImage") are complex128 arrays of shape ``(rows, cols)``,
optionally with leading batch axes. Multi-coil k-space ("KSpaceData") is a
complex128 array of shape ``(n_coils, n_samples)``, again with optional
leading batch axes. Dense Hermitian matrices are plain 2-D complex arrays.

Randomness is counter based: a :class:`SeedSpec` keys a Philox stream, so a
draw depends only on ``(master_seed, stream_index, counter)`` and never on
which worker produced it or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NotPositiveDefinite, ShapeMismatch

MAX_DENSE_DIM = 4096
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class SeedSpec:
    """Key of one independent random stream."""

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_index"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _U64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def generator(self) -> np.random.Generator:
        key = int(self.master_seed) | (int(self.stream_index) << 64)
        return np.random.Generator(np.random.Philox(key=key, counter=0))

    def child(self, stream_index: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, stream_index)


def derive_seed(master_seed: int, *tags: int) -> int:
    """Deterministically derive an independent 64-bit master seed."""
    seq = np.random.SeedSequence([int(master_seed), *[int(t) for t in tags]])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def draw_complex_gaussian(seed: SeedSpec, n: int) -> np.ndarray:
    """``n`` i.i.d. CN(0, 1) samples (real and imaginary parts each N(0, 1/2))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    parts = seed.generator().standard_normal((n, 2))
    return (parts[:, 0] + 1j * parts[:, 1]) * np.sqrt(0.5)


def as_hermitian(m, rtol: float = 1e-12) -> np.ndarray:
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] > MAX_DENSE_DIM:
        raise ShapeMismatch(f"dense dimension {m.shape[0]} exceeds {MAX_DENSE_DIM}")
    scale = max(np.abs(m).max(), 1e-300)
    if np.abs(m - m.conj().T).max() > rtol * scale:
        raise ValueError("matrix is not Hermitian")
    return m


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L^H == m``.

    Raises
    ------
    NotPositiveDefinite
        If any pivot falls below ``1e-14 * max(diag(m))``.
    """
    m = as_hermitian(m, rtol=1e-10)
    diag = m.diagonal().real
    floor = 1e-14 * max(diag.max(initial=0.0), 0.0)
    if diag.size and diag.max() <= 0:
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = low.diagonal().real ** 2
    if np.any(pivots <= floor):
        raise NotPositiveDefinite(f"pivot {pivots.min():.3e} below {floor:.3e}")
    return low


def hermitian_eig(m) -> tuple[np.ndarray, np.ndarray]:
    """Ascending real eigenvalues and unitary eigenvector columns."""
    m = as_hermitian(m, rtol=1e-10)
    try:
        vals, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from None
    return vals, vecs


def vdot_batch(a: np.ndarray, b: np.ndarray, ndim: int) -> np.ndarray:
    """Inner products ``<a, b>`` (conjugating ``a``) over the trailing ``ndim`` axes."""
    lead = a.shape[: a.ndim - ndim]
    prod = (a.conj() * b).reshape(*lead, -1)
    return prod.sum(axis=-1)


def norm_batch(a: np.ndarray, ndim: int) -> np.ndarray:
    lead = a.shape[: a.ndim - ndim]
    flat = a.reshape(*lead, -1)
    return np.sqrt((flat.real**2 + flat.imag**2).sum(axis=-1))
