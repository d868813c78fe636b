"""Derived metrics and protocols on variance maps.

g-factor maps, NRMSE, convergence curves with efficiency crossings, the
replica-doubling certification rule, the Tikhonov shrinkage verifier and
the input-noise robustness sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotCertifiable, NotReached, ShapeMismatch, ZeroReference
from .estimators import EstimatorRun, ProbeFamily, VarianceMap, pico_jacobian, pmr
from .numerics import SeedSpec, derive_seed, draw_complex_gaussian, hermitian_eig
from .operators import NormalOperator, materialize_dense
from .solvers import ReconSpec

NOISE_TAG = 2


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, VarianceMap) else np.asarray(m, dtype=float)


def _mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise ShapeMismatch(f"mask shape {mask.shape} does not match map {shape}")
    return mask


@dataclass
class GFactorMap:
    values: np.ndarray
    R: int
    support_mask: np.ndarray

    def inverse(self) -> np.ndarray:
        """``1/g`` on the support, 0 elsewhere."""
        out = np.zeros_like(self.values)
        np.divide(1.0, self.values, out=out, where=self.support_mask & (self.values > 0))
        return out


def g_factor(acc, ref, R: int, mask=None, acc_norm_scale: float = 1.0, ref_norm_scale: float = 1.0) -> GFactorMap:
    """``sqrt(acc) / (sqrt(R) sqrt(ref))`` on the mask, 0 elsewhere.

    Variance maps from spectrally normalized operators are in units of
    ``norm_scale**2``; both are converted back before taking the ratio.
    """
    a = _values(acc) / acc_norm_scale**2
    r = _values(ref) / ref_norm_scale**2
    if a.shape != r.shape:
        raise ShapeMismatch(f"map shapes differ: {a.shape} vs {r.shape}")
    if R < 1:
        raise ValueError("R must be >= 1")
    m = _mask(mask, a.shape)
    if np.any(r[m] <= 0):
        raise ZeroReference("reference variance must be positive on the mask")
    g = np.zeros(a.shape)
    g[m] = np.sqrt(np.clip(a[m], 0.0, None)) / (np.sqrt(R) * np.sqrt(r[m]))
    return GFactorMap(g, R, m)


def nrmse(est, ref, mask=None) -> float:
    """``|est - ref|_2 / |ref|_2`` over the masked voxels."""
    e, r = _values(est), _values(ref)
    if e.shape != r.shape:
        raise ShapeMismatch(f"map shapes differ: {e.shape} vs {r.shape}")
    m = _mask(mask, r.shape)
    denom = np.linalg.norm(r[m])
    if denom == 0:
        raise ZeroReference("reference map is zero on the mask")
    return float(np.linalg.norm(e[m] - r[m]) / denom)


@dataclass
class ConvergenceCurve:
    n: np.ndarray
    nrmse: np.ndarray
    operator_applications: np.ndarray
    reference: str = ""

    def __post_init__(self):
        if len(self.n) == 0:
            raise ValueError("empty convergence curve")
        if np.any(np.diff(self.n) <= 0):
            raise ValueError("sample counts must be strictly increasing")

    def rows(self):
        return zip(self.n.tolist(), self.nrmse.tolist(), self.operator_applications.tolist())


def convergence_curve(run: EstimatorRun | dict, ref, mask=None, on_sigma: bool = False, reference: str = "") -> ConvergenceCurve:
    """NRMSE of every snapshot against ``ref`` (variance maps, or sigma maps with ``on_sigma``)."""
    snaps = run.snapshots if isinstance(run, EstimatorRun) else run
    if not snaps:
        raise ValueError("run has no checkpoints")
    ns = sorted(snaps)
    ref_v = _values(ref)
    if on_sigma:
        ref_v = np.sqrt(np.clip(ref_v, 0.0, None))
    errs = [nrmse(snaps[n].sigma() if on_sigma else snaps[n].values, ref_v, mask) for n in ns]
    ops = [snaps[n].operator_applications for n in ns]
    return ConvergenceCurve(np.array(ns), np.array(errs), np.array(ops), reference)


def efficiency_crossing(curve: ConvergenceCurve, threshold: float) -> tuple[int, int]:
    """First ``(N, operator_applications)`` whose NRMSE is at or below ``threshold``."""
    hit = np.flatnonzero(curve.nrmse <= threshold)
    if hit.size == 0:
        raise NotReached(f"NRMSE never reached {threshold}")
    i = hit[0]
    return int(curve.n[i]), int(curve.operator_applications[i])


@dataclass
class CertificationReport:
    certified_N: int
    nrmse_at_N: float
    delta_roi_at_N: float
    gold_N: int
    nrmse_gain_at_N: float = 0.0

    def __post_init__(self):
        if self.certified_N > self.gold_N:
            raise ValueError("certified N exceeds the gold budget")


def certify_sequence(ns, nrmses, roi_means, gold_n: int, nrmse_tol: float = 0.005, roi_tol: float = 0.002):
    """Smallest ``N`` whose doubling improves NRMSE by ``< nrmse_tol`` and moves the ROI mean by ``< roi_tol``.

    ``nrmses`` are fractions (0.02 is 2 %). Only ``N`` with ``2N`` also in ``ns`` are eligible.
    """
    ns = [int(n) for n in ns]
    idx = {n: i for i, n in enumerate(ns)}
    for n in sorted(ns):
        j = idx.get(2 * n)
        if j is None:
            continue
        i = idx[n]
        gain = nrmses[i] - nrmses[j]
        droi = abs(roi_means[i] - roi_means[j]) / abs(roi_means[j])
        if gain < nrmse_tol and droi < roi_tol:
            return CertificationReport(n, float(nrmses[i]), float(droi), int(gold_n), float(gain))
    raise NotCertifiable("no checkpoint pair satisfies the doubling rule")


def certify_pmr(run: EstimatorRun | dict, gold, roi_mask, mask=None, gold_n: int | None = None, **tols) -> CertificationReport:
    """Apply the doubling rule to a checkpointed run against a gold-standard map."""
    snaps = run.snapshots if isinstance(run, EstimatorRun) else run
    ns = sorted(snaps)
    roi = _mask(roi_mask, _values(gold).shape)
    errs = [nrmse(snaps[n], gold, mask) for n in ns]
    rois = [float(snaps[n].values[roi].mean()) for n in ns]
    if gold_n is None:
        gold_n = gold.n_samples if isinstance(gold, VarianceMap) and gold.n_samples else max(ns)
    return certify_sequence(ns, errs, rois, gold_n, **tols)


@dataclass
class ShrinkageReport:
    lam: float
    min_eig_gap: float
    trace_gap: float
    diag_dominated: bool
    modewise_error: float
    sigma_lam: np.ndarray = field(repr=False)
    sigma_ls: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return (
            self.lam > 0
            and self.min_eig_gap > -1e-10
            and self.trace_gap > 0
            and self.diag_dominated
            and self.modewise_error <= 1e-8
        )


def shrinkage_check(m, lam: float, max_dim: int = 256) -> ShrinkageReport:
    """Compare ``Sigma_lam = (M + lam)^-1 M (M + lam)^-1`` with ``Sigma_LS = M^-1``.

    ``m`` is a dense positive-definite ``M = A^H A`` or a :class:`ReconSpec`
    (whose own ``lam`` is ignored). Reports the smallest eigenvalue of the
    gap, the trace gap, elementwise diagonal dominance and the largest
    relative deviation of the modewise factors from ``(m_i / (m_i + lam))^2``.
    """
    if isinstance(m, ReconSpec):
        m = materialize_dense(NormalOperator(m.operator, 0.0), max_dim=max_dim)
    m = np.asarray(m, dtype=np.complex128)
    if m.shape[0] > max_dim:
        raise ValueError(f"dimension {m.shape[0]} exceeds {max_dim}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    eye = np.eye(len(m))
    m = 0.5 * (m + m.conj().T)
    sigma_ls = np.linalg.inv(m)
    sigma_ls = 0.5 * (sigma_ls + sigma_ls.conj().T)
    k = np.linalg.solve(m + lam * eye, m)
    sigma_lam = np.linalg.solve(m + lam * eye, k.conj().T)
    sigma_lam = 0.5 * (sigma_lam + sigma_lam.conj().T)
    gap = sigma_ls - sigma_lam
    min_gap = float(hermitian_eig(gap)[0][0])
    trace_gap = float(np.trace(gap).real)
    diag_ok = bool(np.all(sigma_lam.diagonal().real < sigma_ls.diagonal().real))
    vals, vecs = hermitian_eig(m)
    mode_lam = np.einsum("ki,kl,li->i", vecs.conj(), sigma_lam, vecs).real
    mode_ls = np.einsum("ki,kl,li->i", vecs.conj(), sigma_ls, vecs).real
    factor = (vals / (vals + lam)) ** 2
    err = float(np.max(np.abs(mode_lam / mode_ls - factor) / factor))
    return ShrinkageReport(float(lam), min_gap, trace_gap, diag_ok, err, sigma_lam, sigma_ls)


@dataclass
class SweepLevel:
    scale: float
    sigma: float
    pico: VarianceMap
    pmr: VarianceMap
    nrmse: float


def robustness_sweep(
    spec: ReconSpec,
    x_true,
    scales,
    sigma0: float,
    n: int,
    seed: int,
    n_pmr: int | None = None,
    family=ProbeFamily.RANDOM_PHASE,
    mask=None,
    workers: int | None = None,
) -> list[SweepLevel]:
    """PICO-Jacobian vs PMR agreement as the input noise grows.

    At level ``s`` the data are ``b = A x_true + s sigma0 n0`` with one fixed
    noise draw ``n0``; PICO linearizes at ``b`` and PMR injects noise of the
    same level around ``b``. Both maps are per unit input variance; their
    difference is the NRMSE of the PMR sigma map against the PICO one.
    """
    scales = [float(s) for s in scales]
    if not scales or any(s <= 0 for s in scales) or any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("noise levels must be positive and ascending")
    op = spec.operator
    k0 = op.forward(np.asarray(x_true, dtype=np.complex128))
    n0 = draw_complex_gaussian(SeedSpec(derive_seed(seed, NOISE_TAG), 0), op.kspace_dim).reshape(op.kspace_shape)
    out = []
    for s in scales:
        sigma = s * sigma0
        b = k0 + sigma * n0
        pico_map = pico_jacobian(spec, b, family, n, seed, workers=workers).final
        pmr_map = pmr(spec, b, sigma, n_pmr or n, seed, workers=workers).final
        err = nrmse(pmr_map.sigma(), pico_map.sigma(), mask)
        out.append(SweepLevel(s, sigma, pico_map, pmr_map, err))
    return out


def target_sigma(k0, snr_db: float) -> float:
    """Noise level giving ``snr_db`` relative to the RMS of ``k0``."""
    rms = np.sqrt(np.mean(np.abs(k0) ** 2))
    return float(rms * 10 ** (-snr_db / 20))
