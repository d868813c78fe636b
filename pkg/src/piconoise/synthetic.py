"""Synthetic ground truth: phantoms, coil maps, sampling patterns, noise models.

k-space indices follow the unshifted FFT layout (DC at index ``(0, 0)``), so
"central" calibration rows wrap around index 0. Non-Cartesian coordinates are
``(k_y, k_x)`` pairs in cycles per field of view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch
from .numerics import SeedSpec, as_hermitian, cholesky, draw_complex_gaussian

# Modified Shepp-Logan: (intensity, semi-axis x, semi-axis y, centre x, centre y, angle deg)
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def _pixel_grid(rows, cols):
    x = (2.0 * np.arange(cols) + 1.0) / cols - 1.0
    y = 1.0 - (2.0 * np.arange(rows) + 1.0) / rows
    return np.meshgrid(x, y)


def _ellipse_inside(xx, yy, a, b, x0, y0, phi_deg):
    phi = np.deg2rad(phi_deg)
    c, s = np.cos(phi), np.sin(phi)
    xr = (xx - x0) * c + (yy - y0) * s
    yr = -(xx - x0) * s + (yy - y0) * c
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def shepp_logan(rows: int, cols: int) -> np.ndarray:
    """Modified Shepp-Logan phantom sampled at pixel centres, peak value 1."""
    if rows < 8 or cols < 8:
        raise ValueError("phantom needs at least 8x8 pixels")
    xx, yy = _pixel_grid(rows, cols)
    img = np.zeros((rows, cols))
    for amp, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
        img[_ellipse_inside(xx, yy, a, b, x0, y0, phi)] += amp
    img = np.clip(img, 0.0, None)
    return (img / img.max()).astype(np.complex128)


def phantom_support(rows: int, cols: int) -> np.ndarray:
    """Boolean mask of the outer phantom ellipse."""
    xx, yy = _pixel_grid(rows, cols)
    _, a, b, x0, y0, phi = SHEPP_LOGAN_ELLIPSES[0]
    return _ellipse_inside(xx, yy, a, b, x0, y0, phi)


def erode(mask: np.ndarray, pixels: int) -> np.ndarray:
    """Binary erosion with a 4-neighbour structuring element (non-periodic)."""
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(pixels):
        padded = np.pad(out, 1, constant_values=False)
        out = (
            padded[1:-1, 1:-1]
            & padded[:-2, 1:-1]
            & padded[2:, 1:-1]
            & padded[1:-1, :-2]
            & padded[1:-1, 2:]
        )
    return out


def synth_coils(shape, n_coils: int, profile_width: float = 0.6) -> np.ndarray:
    """Ring of Gaussian-lobe receive coils with a linear phase ramp each.

    Coil ``c`` peaks at angle ``2*pi*c/n_coils`` on the unit circle of the
    normalised field of view. Returns an array of shape ``(n_coils, rows, cols)``.
    """
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    if profile_width <= 0:
        raise ValueError("profile_width must be positive")
    rows, cols = shape
    u = (np.arange(cols) - (cols - 1) / 2.0) / (cols / 2.0)
    v = (np.arange(rows) - (rows - 1) / 2.0) / (rows / 2.0)
    uu, vv = np.meshgrid(u, v)
    maps = np.empty((n_coils, rows, cols), dtype=np.complex128)
    for c in range(n_coils):
        theta = 2.0 * np.pi * c / n_coils
        cu, cv = np.cos(theta), np.sin(theta)
        mag = np.exp(-((uu - cu) ** 2 + (vv - cv) ** 2) / (2.0 * profile_width**2))
        phase = 0.25 * np.pi * (cu * uu + cv * vv) / profile_width
        maps[c] = mag * np.exp(1j * phase)
    return maps


def rss(coils: np.ndarray) -> np.ndarray:
    return np.sqrt((np.abs(coils) ** 2).sum(axis=0))


@dataclass(frozen=True, eq=False)
class SamplingPattern:
    """Cartesian keep-mask or list of non-Cartesian k-space coordinates."""

    kind: str
    shape: tuple
    R: int = 1
    calib: int = 0
    mask: np.ndarray | None = None
    coords: np.ndarray | None = None
    interleave: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "cartesian":
            if self.mask is None or self.mask.shape != tuple(self.shape):
                raise ShapeMismatch("Cartesian pattern needs a mask of the image shape")
            if not self.mask.any():
                raise ValueError("Cartesian mask is empty")
        elif self.kind == "noncartesian":
            if self.coords is None or self.coords.ndim != 2 or self.coords.shape[1] != 2:
                raise ShapeMismatch("non-Cartesian pattern needs (n, 2) coordinates")
            band = min(self.shape) / 2.0
            if np.any(np.hypot(self.coords[:, 0], self.coords[:, 1]) > band + 1e-9):
                raise ValueError(f"coordinates exceed the Nyquist band |k| <= {band}")
        else:
            raise ValueError(f"unknown pattern kind {self.kind!r}")

    @property
    def n_samples(self) -> int:
        if self.kind == "cartesian":
            return int(self.mask.sum())
        return int(self.coords.shape[0])

    @property
    def is_cartesian(self) -> bool:
        return self.kind == "cartesian"


def _calib_rows(n, calib):
    return np.arange(-(calib // 2), calib - calib // 2) % n


def make_pattern_cartesian(shape, R: int, calib: int = 0) -> SamplingPattern:
    """Keep every ``R``-th phase-encode row (axis 0) plus ``calib`` central rows."""
    rows, cols = shape
    if R < 1:
        raise ValueError("R must be >= 1")
    if not 0 <= calib <= rows:
        raise ValueError("calib must lie in [0, rows]")
    keep = np.arange(rows) % R == 0
    if calib:
        keep[_calib_rows(rows, calib)] = True
    mask = np.repeat(keep[:, None], cols, axis=1)
    return SamplingPattern("cartesian", (rows, cols), R=R, calib=calib, mask=mask)


def make_pattern_variable_density(shape, R: int, calib: int, seed: SeedSpec, power: float = 2.0):
    """Random 2-D variable-density mask with a fully sampled central square.

    Exactly ``round(rows*cols/R)`` locations are kept (calibration included);
    the remainder is drawn by weighted sampling without replacement, weights
    decaying as ``(1 - 0.9*r/r_max)**power`` from the k-space centre.
    """
    rows, cols = shape
    ky = np.fft.fftfreq(rows) * rows
    kx = np.fft.fftfreq(cols) * cols
    kyy, kxx = np.meshgrid(ky, kx, indexing="ij")
    r = np.hypot(kyy / (rows / 2), kxx / (cols / 2))
    weight = (1.0 - 0.9 * r / r.max()) ** power
    mask = np.zeros((rows, cols), dtype=bool)
    if calib:
        mask[np.ix_(_calib_rows(rows, calib), _calib_rows(cols, calib))] = True
    n_keep = int(round(rows * cols / R))
    remaining = n_keep - int(mask.sum())
    if remaining > 0:
        u = seed.generator().random(rows * cols)
        # Efraimidis-Spirakis keys: largest u**(1/w) wins
        keys = np.log(u) / weight.ravel()
        keys[mask.ravel()] = -np.inf
        chosen = np.argsort(-keys, kind="stable")[:remaining]
        mask.ravel()[chosen] = True
    return SamplingPattern(
        "cartesian", (rows, cols), R=R, calib=calib, mask=mask, meta={"density": "variable"}
    )


def make_pattern_radial(shape, n_spokes: int, samples_per_spoke: int, R: int = 1) -> SamplingPattern:
    """Equiangular spokes through the k-space centre; every ``R``-th spoke kept."""
    if R < 1 or n_spokes < 1 or samples_per_spoke < 1:
        raise ValueError("n_spokes, samples_per_spoke and R must be >= 1")
    n = min(shape)
    radii = (np.arange(samples_per_spoke) - (samples_per_spoke - 1) / 2.0) * (n / samples_per_spoke)
    spokes = np.arange(0, n_spokes, R)
    angles = np.pi * spokes / n_spokes
    ky = np.sin(angles)[:, None] * radii[None, :]
    kx = np.cos(angles)[:, None] * radii[None, :]
    coords = np.stack([ky.ravel(), kx.ravel()], axis=1)
    interleave = np.repeat(spokes, samples_per_spoke)
    return SamplingPattern(
        "noncartesian", tuple(shape), R=R, coords=coords, interleave=interleave,
        meta={"n_spokes": n_spokes, "samples_per_spoke": samples_per_spoke},
    )


def pattern_from_trajectory(shape, coords, interleave, R: int = 1) -> SamplingPattern:
    """Non-Cartesian pattern from explicit coordinates, keeping every ``R``-th interleave."""
    coords = np.asarray(coords, dtype=np.float64)
    interleave = np.asarray(interleave, dtype=np.int64)
    ids = np.unique(interleave)
    keep = np.isin(interleave, ids[::R])
    return SamplingPattern(
        "noncartesian", tuple(shape), R=R, coords=coords[keep], interleave=interleave[keep]
    )


@dataclass(frozen=True, eq=False)
class NoiseModel:
    covariance: np.ndarray
    kspace_sigma: float = 1.0

    def __post_init__(self):
        as_hermitian(self.covariance, rtol=1e-10)
        if not (np.isfinite(self.kspace_sigma) and self.kspace_sigma > 0):
            raise ValueError("kspace_sigma must be finite and positive")

    @classmethod
    def identity(cls, n_coils, kspace_sigma=1.0):
        return cls(np.eye(n_coils, dtype=np.complex128), kspace_sigma)

    def whitener(self) -> np.ndarray:
        """``L^{-1}`` for the Cholesky factor ``L`` of the coil covariance."""
        low = cholesky(self.covariance)
        return np.linalg.solve(low, np.eye(low.shape[0], dtype=np.complex128))

    def sample(self, seed: SeedSpec, n_samples: int) -> np.ndarray:
        """Correlated coil noise of shape ``(n_coils, n_samples)``."""
        n_coils = self.covariance.shape[0]
        white = draw_complex_gaussian(seed, n_coils * n_samples).reshape(n_coils, n_samples)
        return cholesky(self.covariance) @ white


def random_coil_covariance(n_coils: int, seed: SeedSpec, eps: float = 0.1) -> np.ndarray:
    g = seed.generator()
    b = g.standard_normal((n_coils, n_coils)) + 1j * g.standard_normal((n_coils, n_coils))
    m = b @ b.conj().T / n_coils + eps * np.eye(n_coils)
    return 0.5 * (m + m.conj().T)


def prewhiten(data: np.ndarray, model: NoiseModel) -> np.ndarray:
    """Apply ``L^{-1}`` across the coil axis (second to last) of k-space data."""
    data = np.asarray(data, dtype=np.complex128)
    n_coils = model.covariance.shape[0]
    if data.ndim < 2 or data.shape[-2] != n_coils:
        raise ShapeMismatch(f"data coil axis {data.shape[-2:]} does not match {n_coils} coils")
    return np.einsum("cd,...dn->...cn", model.whitener(), data)
