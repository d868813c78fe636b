"""Voxelwise noise-variance estimators.

* PICO: ``Re mean_i conj(v_i) * Sigma v_i`` over random probes (linear), or
  ``mean_i |J w_i|^2`` over k-space probes (Jacobian of a nonlinear recon).
* PMR: sample variance of reconstructions of ``b + sigma_k * eta_i``.
* Closed-form Cartesian SENSE variance and brute-force dense oracles.

Determinism: probe ``i`` is drawn from stream ``i`` of the master seed.
Probes are evaluated in fixed-size chunks (the last chunk is padded and the
surplus discarded) and accumulated strictly in ascending probe index, so a
map never depends on the worker count and the snapshot at ``N`` equals a
fresh run of ``N`` probes bit for bit.
"""

from __future__ import annotations

import enum
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonLinearSpec, ShapeMismatch, SingularAliasSet, TooLarge
from .numerics import SeedSpec, derive_seed, draw_complex_gaussian
from .operators import MAX_MATERIALIZE_DIM, NormalOperator, _basis_kspace, materialize_dense
from .solvers import ReconSpec, _solve, apply_covariance, apply_R, fista_batch, fista_jvp, fista_tv
from .synthetic import SamplingPattern, make_pattern_cartesian

CHUNK = 128
PMR_TAG = 1


class ProbeFamily(enum.Enum):
    RANDOM_PHASE = "random-phase"
    RADEMACHER = "rademacher"
    GAUSSIAN = "gaussian"

    @property
    def kappa(self) -> float:
        """Fourth moment ``E|v|^4``."""
        return 2.0 if self is ProbeFamily.GAUSSIAN else 1.0

    @classmethod
    def parse(cls, name) -> "ProbeFamily":
        if isinstance(name, cls):
            return name
        return cls(str(name).strip().lower().replace("_", "-"))


def draw_probe(family: ProbeFamily, seed: SeedSpec, n: int) -> np.ndarray:
    """``n`` probe entries with zero mean and unit second moment."""
    if n < 1:
        raise ValueError("n must be >= 1")
    family = ProbeFamily.parse(family)
    if family is ProbeFamily.GAUSSIAN:
        return draw_complex_gaussian(seed, n)
    gen = seed.generator()
    if family is ProbeFamily.RANDOM_PHASE:
        return np.exp(2j * np.pi * gen.random(n))
    return (2.0 * gen.integers(0, 2, n) - 1.0).astype(np.complex128)


def draw_probes(family, master_seed: int, start: int, stop: int, shape) -> np.ndarray:
    n = int(np.prod(shape))
    return np.stack([draw_probe(family, SeedSpec(master_seed, i), n).reshape(shape) for i in range(start, stop)])


def default_workers() -> int:
    env = os.environ.get("PICO_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class VarianceMap:
    """Per-voxel variance per unit whitened input noise, with provenance."""

    values: np.ndarray
    method: str
    family: ProbeFamily | None = None
    n_samples: int = 0
    seed: int | None = None
    operator_applications: int = 0
    clamped: int = 0
    stderr: np.ndarray | None = None
    imag_mean: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(self.values, 0.0, None))

    def scaled(self, factor: float) -> "VarianceMap":
        return replace(self, values=self.values * factor, stderr=None if self.stderr is None else self.stderr * factor)


def _finish(values: np.ndarray, **kw) -> VarianceMap:
    neg = values < 0
    out = np.where(neg, 0.0, values)
    return VarianceMap(out, clamped=int(neg.sum()), **kw)


@dataclass
class EstimatorRun:
    """Final map plus snapshots keyed by sample count."""

    final: VarianceMap
    snapshots: dict[int, VarianceMap]

    @property
    def checkpoints(self) -> list[int]:
        return sorted(self.snapshots)


def _checkpoints(n: int, checkpoints, minimum: int = 1) -> list[int]:
    cps = sorted({int(c) for c in (checkpoints or ())} | {int(n)})
    if cps[0] < minimum or cps[-1] > n:
        raise ValueError(f"checkpoints must lie in [{minimum}, {n}]")
    return cps


def _chunks(n: int, chunk: int):
    for start in range(0, n, chunk):
        yield start, start + chunk


def _ordered_map(fn, items, workers: int):
    """``map`` with a bounded look-ahead; results come back in input order."""
    items = list(items)
    if workers <= 1:
        for it in items:
            yield fn(it)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        it = iter(items)
        for x in it:
            pending.append(pool.submit(fn, x))
            if len(pending) >= 2 * workers:
                break
        while pending:
            yield pending.popleft().result()
            nxt = next(it, None)
            if nxt is not None:
                pending.append(pool.submit(fn, nxt))


def _sum_run(evaluate, n: int, shape, checkpoints, workers, chunk: int):
    """Sequentially accumulate per-probe contributions ``(B, rows, cols)``.

    ``evaluate(start, stop)`` returns ``(contrib, cost)`` for probes
    ``start..stop-1``. Yields ``(N, sum, sum_sq_real, cost)`` at each checkpoint.
    """
    cps = deque(_checkpoints(n, checkpoints))
    s = np.zeros(shape, dtype=np.complex128)
    s2 = np.zeros(shape)
    cost = 0
    out = []
    for start, (contrib, c) in zip(range(0, n, chunk), _ordered_map(lambda se: evaluate(*se), _chunks(n, chunk), workers)):
        keep = min(chunk, n - start)
        contrib = contrib[:keep]
        c = np.asarray(c)[:keep]
        # running sums in ascending probe order: cumsum of [s, c0, c1, ...]
        ps = np.cumsum(np.concatenate([s[None], contrib]), axis=0)
        ps2 = np.cumsum(np.concatenate([s2[None], contrib.real**2]), axis=0)
        pc = cost + np.cumsum(c)
        while cps and cps[0] <= start + keep:
            k = cps.popleft() - start
            out.append((start + k, ps[k].copy(), ps2[k].copy(), int(pc[k - 1])))
        s, s2, cost = ps[-1], ps2[-1], int(pc[-1])
    return out


def _pico_maps(records, family, seed, method):
    snaps = {}
    for n, s, s2, cost in records:
        mean = s / n
        var = (s2 - n * mean.real**2) / (n - 1) if n > 1 else np.full(mean.shape, np.inf)
        stderr = np.sqrt(np.clip(var, 0.0, None) / n)
        snaps[n] = _finish(
            mean.real.copy(),
            method=method,
            family=family,
            n_samples=n,
            seed=seed,
            operator_applications=cost,
            stderr=stderr,
            imag_mean=mean.imag.copy(),
        )
    return snaps


def pico_linear(
    spec: ReconSpec,
    family,
    n: int,
    seed: int,
    checkpoints=(),
    workers: int | None = None,
    probe_domain: str = "image",
    chunk: int = CHUNK,
) -> EstimatorRun:
    """PICO for a linear reconstruction.

    ``probe_domain="image"`` averages ``conj(v) * Sigma v`` over image-space
    probes. ``"kspace"`` instead averages ``|R w|^2`` over k-space probes,
    the linear counterpart of :func:`pico_jacobian` with identical probes.
    """
    if not spec.is_linear:
        raise NonLinearSpec("pico_linear needs a Tikhonov spec; use pico_jacobian")
    if n < 1:
        raise ValueError("n must be >= 1")
    family = ProbeFamily.parse(family)
    op = spec.operator

    if probe_domain == "image":

        def evaluate(start, stop):
            v = draw_probes(family, seed, start, stop, op.shape)
            u, cost = apply_covariance(spec, v, return_cost=True)
            return v.conj() * u, cost

    elif probe_domain == "kspace":

        def evaluate(start, stop):
            w = draw_probes(family, seed, start, stop, op.kspace_shape)
            u, cost = apply_R(spec, w)
            return (u.real**2 + u.imag**2).astype(np.complex128), cost

    else:
        raise ValueError(f"unknown probe domain {probe_domain!r}")
    records = _sum_run(evaluate, n, op.shape, checkpoints, workers or default_workers(), chunk)
    snaps = _pico_maps(records, family, seed, "PICO")
    return EstimatorRun(snaps[n], snaps)


def pico_jacobian(
    spec: ReconSpec,
    b,
    family,
    n: int,
    seed: int,
    checkpoints=(),
    workers: int | None = None,
    trace=None,
    chunk: int = CHUNK,
) -> EstimatorRun:
    """PICO for the TV reconstruction: ``mean_i |J w_i|^2`` with ``J`` taken at ``b``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    family = ProbeFamily.parse(family)
    op = spec.operator
    if trace is None:
        _, trace = fista_tv(spec, b)
    per_probe = trace.iterations + 1

    def evaluate(start, stop):
        w = draw_probes(family, seed, start, stop, op.kspace_shape)
        u = fista_jvp(trace, spec, w)
        return (u.real**2 + u.imag**2).astype(np.complex128), np.full(stop - start, per_probe)

    records = _sum_run(evaluate, n, op.shape, checkpoints, workers or default_workers(), chunk)
    snaps = _pico_maps(records, family, seed, "PICO-J")
    return EstimatorRun(snaps[n], snaps)


def reconstruct_batch(spec: ReconSpec, b) -> tuple[np.ndarray, np.ndarray]:
    """Reconstructions of a batch of data and per-entry operator-pair costs."""
    if spec.is_linear:
        res = _solve(spec, spec.operator.adjoint(b))
        return res.x, res.iterations + 1
    return fista_batch(spec, b), np.full(len(b), spec.solver.max_iters + 1)


def pmr(
    spec: ReconSpec,
    b,
    sigma_k: float,
    n: int,
    seed: int,
    checkpoints=(),
    workers: int | None = None,
    chunk: int = CHUNK,
) -> EstimatorRun:
    """Pseudo multiple replica baseline.

    Replica ``i`` reconstructs ``b + sigma_k * eta_i`` with ``eta_i`` from
    stream ``i`` of a master seed derived from ``seed``. The map is the
    total complex sample variance (``1/(N-1)``) divided by ``sigma_k**2``.
    """
    if n < 2:
        raise ValueError("PMR needs at least 2 replicas")
    if not sigma_k > 0:
        raise ValueError("sigma_k must be positive")
    op = spec.operator
    b = np.asarray(b, dtype=np.complex128)
    if b.shape != op.kspace_shape:
        raise ShapeMismatch(f"data shape {b.shape} does not match {op.kspace_shape}")
    master = derive_seed(seed, PMR_TAG)
    workers = workers or default_workers()

    def evaluate(start, stop):
        eta = draw_probes(ProbeFamily.GAUSSIAN, master, start, stop, op.kspace_shape)
        return reconstruct_batch(spec, b + sigma_k * eta)

    cps = deque(_checkpoints(n, checkpoints, minimum=2))
    mean = np.zeros(op.shape, dtype=np.complex128)
    m2 = np.zeros(op.shape)
    cost = 0
    snaps = {}
    count = 0
    for x, c in _ordered_map(lambda se: evaluate(*se), _chunks(n, chunk), workers):
        for xi, ci in zip(x[: n - count], c):
            # Welford update of the complex mean and total squared deviation
            count += 1
            delta = xi - mean
            mean = mean + delta / count
            m2 = m2 + (delta * (xi - mean).conj()).real
            cost += int(ci)
            if cps and cps[0] == count:
                cps.popleft()
                snaps[count] = _finish(
                    m2 / (count - 1) / sigma_k**2,
                    method="PMR",
                    n_samples=count,
                    seed=seed,
                    operator_applications=cost,
                    meta={"sigma_k": sigma_k},
                )
    return EstimatorRun(snaps[n], snaps)


def _is_uniform_cartesian(pattern: SamplingPattern) -> bool:
    if not pattern.is_cartesian or pattern.R < 1 or pattern.shape[0] % pattern.R:
        return False
    return np.array_equal(pattern.mask, make_pattern_cartesian(pattern.shape, pattern.R, 0).mask)


def analytical_sense(coils, pattern: SamplingPattern, norm_scale: float = 1.0, whitener=None) -> VarianceMap:
    """Closed-form variance of unregularized Cartesian SENSE.

    Uniform row subsampling by ``R`` folds voxel ``r`` onto the set
    ``{r + m rows / R}``. Per set, ``Sigma = R norm_scale^2 (S^H S)^-1`` with
    ``S`` the ``n_coils x R`` matrix of (whitened) coil values.
    """
    if not _is_uniform_cartesian(pattern):
        raise ValueError("analytical SENSE needs uniform Cartesian undersampling without calibration")
    coils = np.asarray(coils, dtype=np.complex128)
    if coils.ndim == 2:
        coils = coils[None]
    if whitener is not None:
        coils = np.einsum("cd,dxy->cxy", np.asarray(whitener), coils)
    rows, cols = pattern.shape
    R = pattern.R
    step = rows // R
    # S[r, col, coil, m] = coil value at row r + m*step
    s = coils.reshape(coils.shape[0], R, step, cols).transpose(2, 3, 0, 1)
    gram = np.einsum("xycm,xycn->xymn", s.conj(), s)
    eig = np.linalg.eigvalsh(gram)
    top = eig[..., -1:]
    if np.any(eig[..., 0] <= 1e-12 * np.maximum(top[..., 0], 1e-300)) or np.any(top <= 0):
        raise SingularAliasSet("coil matrix of an alias set is rank deficient")
    inv_diag = np.linalg.inv(gram).diagonal(axis1=-2, axis2=-1).real
    var = (R * norm_scale**2) * inv_diag  # (step, cols, R)
    values = var.transpose(2, 0, 1).reshape(rows, cols)
    return VarianceMap(values, method="AnalyticalSENSE", meta={"R": R})


def _kspace_columns(fn, kshape, chunk: int = CHUNK):
    """Apply ``fn`` to every k-space basis vector in fixed-size batches."""
    basis = _basis_kspace(kshape)
    outs = []
    for start in range(0, len(basis), chunk):
        block = basis[start : start + chunk]
        pad = chunk - len(block)
        if pad:
            block = np.concatenate([block, np.zeros((pad, *kshape), dtype=block.dtype)])
        outs.append(fn(block)[: chunk - pad])
    return np.concatenate(outs)


def reconstruction_matrix(spec: ReconSpec, b=None, max_dim: int = MAX_MATERIALIZE_DIM) -> np.ndarray:
    """Dense ``R`` (linear) or the Jacobian columns ``J e_j`` at ``b`` (TV), shape ``(n_x, n_k)``.

    The TV Jacobian is only real-linear, so ``J (i e_j)`` is not ``i J e_j``
    and these columns alone do not determine the noise covariance; use
    :func:`covariance_factor` for that.
    """
    op = spec.operator
    if op.image_dim > max_dim:
        raise TooLarge(f"image dimension {op.image_dim} exceeds {max_dim}")
    if spec.is_linear:
        m = materialize_dense(NormalOperator(op, spec.lam), max_dim=max_dim)
        a = materialize_dense(op, max_dim=max_dim)
        return np.linalg.solve(m, a.conj().T)
    return _jacobian_columns(spec, b, 1.0)


def _jacobian_columns(spec: ReconSpec, b, direction: complex) -> np.ndarray:
    if b is None:
        raise ValueError("the Jacobian needs the linearization data b")
    _, trace = fista_tv(spec, b)
    cols = _kspace_columns(lambda w: fista_jvp(trace, spec, direction * w), spec.operator.kspace_shape)
    return cols.reshape(len(cols), -1).T


def covariance_factor(spec: ReconSpec, b=None, max_dim: int = MAX_MATERIALIZE_DIM) -> np.ndarray:
    """``F`` with ``F F^H`` the image covariance per unit circular k-space noise.

    Linear: ``F = R``. TV: circular noise ``w`` enters a real-linear ``J``
    through both ``Re w`` and ``Im w``, each with variance 1/2, so
    ``F = [J e_j, J (i e_j)] / sqrt(2)``.
    """
    if spec.is_linear:
        return reconstruction_matrix(spec, b, max_dim)
    op = spec.operator
    if op.image_dim > max_dim:
        raise TooLarge(f"image dimension {op.image_dim} exceeds {max_dim}")
    re = _jacobian_columns(spec, b, 1.0)
    im = _jacobian_columns(spec, b, 1j)
    return np.concatenate([re, im], axis=1) / np.sqrt(2.0)


def oracle_covariance(spec: ReconSpec, b=None, max_dim: int = MAX_MATERIALIZE_DIM) -> np.ndarray:
    f = covariance_factor(spec, b, max_dim)
    return f @ f.conj().T


def oracle_diag(spec: ReconSpec, b=None, max_dim: int = MAX_MATERIALIZE_DIM) -> VarianceMap:
    """Exact diagonal of the image noise covariance by dense materialization."""
    f = covariance_factor(spec, b, max_dim)
    values = (f.real**2 + f.imag**2).sum(axis=1).reshape(spec.operator.shape)
    return VarianceMap(values, method="Oracle")
