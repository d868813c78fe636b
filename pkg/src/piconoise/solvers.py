"""Reconstruction solvers.

* CG on the regularized normal equations, giving the linear map
  ``R_lam = (A^H A + lam I)^-1 A^H``.
* FISTA with anisotropic TV for the nonlinear reconstruction, recording a
  trace of active-set masks and momentum coefficients.
* Forward tangent propagation through the recorded FISTA iteration, which
  applies the Jacobian of the reconstruction at the recorded data point.

Every solver is batched over leading axes so many probes share one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import tv
from .errors import NonLinearSpec, ShapeMismatch, TraceMismatch
from .numerics import norm_batch, vdot_batch
from .operators import EncodingOperator, NormalOperator

CG_CONVERGED, CG_MAX_ITERS, CG_BREAKDOWN = 0, 1, 2


@dataclass(frozen=True)
class CGConfig:
    max_iters: int = 100
    tol: float = 1e-10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class FistaConfig:
    max_iters: int = 100
    step: float = 0.99
    tv_inner_iters: int = 20

    def __post_init__(self):
        if self.max_iters < 1 or self.tv_inner_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.step > 0:
            raise ValueError("step must be positive")


@dataclass(frozen=True)
class ReconSpec:
    """Everything that defines a reconstruction map.

    Exactly one of ``lam`` (Tikhonov, solved by CG) and ``lam_tv``
    (TV, solved by FISTA) is set, and ``solver`` must match it.
    """

    operator: EncodingOperator
    lam: float | None = None
    lam_tv: float | None = None
    solver: CGConfig | FistaConfig = field(default_factory=CGConfig)

    def __post_init__(self):
        if (self.lam is None) == (self.lam_tv is None):
            raise ValueError("set exactly one of lam and lam_tv")
        weight = self.lam if self.lam is not None else self.lam_tv
        if weight < 0:
            raise ValueError("regularization weight must be >= 0")
        want = CGConfig if self.lam is not None else FistaConfig
        if not isinstance(self.solver, want):
            raise ValueError(f"{'Tikhonov' if self.lam is not None else 'TV'} mode needs {want.__name__}")

    @property
    def is_linear(self) -> bool:
        return self.lam is not None

    @cached_property
    def normal(self) -> NormalOperator:
        return NormalOperator(self.operator, self.lam if self.is_linear else 0.0)

    @classmethod
    def tikhonov(cls, op, lam=0.0, max_iters=100, tol=1e-10):
        return cls(op, lam=lam, solver=CGConfig(max_iters, tol))

    @classmethod
    def total_variation(cls, op, lam_tv=1e-2, max_iters=100, step=0.99, tv_inner_iters=20):
        return cls(op, lam_tv=lam_tv, solver=FistaConfig(max_iters, step, tv_inner_iters))


@dataclass
class CGResult:
    x: np.ndarray
    iterations: np.ndarray  # per batch entry
    status: np.ndarray  # CG_CONVERGED, CG_MAX_ITERS or CG_BREAKDOWN per entry

    @property
    def converged(self) -> bool:
        return bool(np.all(self.status == CG_CONVERGED))


def cg_solve(nop, rhs, max_iters: int = 100, tol: float = 1e-10) -> CGResult:
    """Solve ``nop x = rhs`` by conjugate gradients from ``x = 0``.

    ``nop`` is a :class:`NormalOperator` or any object with ``matvec`` and a
    2-D ``shape``. Leading axes of ``rhs`` are independent systems; each
    stops on its own once ``|r| <= tol |rhs|`` and is then frozen.
    """
    rhs = np.asarray(rhs, dtype=np.complex128)
    if rhs.shape[-2:] != tuple(nop.shape):
        raise ShapeMismatch(f"rhs shape {rhs.shape[-2:]} does not match {nop.shape}")
    single = rhs.ndim == 2
    b = rhs[None] if single else rhs.reshape(-1, *rhs.shape[-2:])
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = vdot_batch(r, r, 2).real
    goal = tol * norm_batch(b, 2)
    iters = np.zeros(len(b), dtype=np.int64)
    status = np.full(len(b), CG_MAX_ITERS, dtype=np.int64)
    active = np.sqrt(rr) > goal
    status[~active] = CG_CONVERGED
    for _ in range(max_iters):
        if not active.any():
            break
        ap = nop.matvec(p)
        pap = vdot_batch(p, ap, 2).real
        broke = active & ~(pap > 0)
        status[broke] = CG_BREAKDOWN
        active &= ~broke
        alpha = np.where(active, rr / np.where(active, pap, 1.0), 0.0)[:, None, None]
        x += alpha * p
        r -= alpha * ap
        rr_new = vdot_batch(r, r, 2).real
        iters[active] += 1
        done = active & (np.sqrt(rr_new) <= goal)
        status[done] = CG_CONVERGED
        beta = np.where(active, rr_new / np.where(rr > 0, rr, 1.0), 0.0)[:, None, None]
        p = np.where(active[:, None, None], r + beta * p, p)
        rr = np.where(active, rr_new, rr)
        active &= ~done
    if single:
        return CGResult(x[0], iters, status)
    return CGResult(x.reshape(rhs.shape), iters, status)


def _require_linear(spec: ReconSpec):
    if not spec.is_linear:
        raise NonLinearSpec("operation needs a Tikhonov (CG) reconstruction spec")


def _solve(spec: ReconSpec, rhs) -> CGResult:
    return cg_solve(spec.normal, rhs, spec.solver.max_iters, spec.solver.tol)


def reconstruct_linear(spec: ReconSpec, b) -> np.ndarray:
    """``R_lam b = (A^H A + lam I)^-1 A^H b``."""
    _require_linear(spec)
    return _solve(spec, spec.operator.adjoint(b)).x


def apply_R(spec: ReconSpec, w) -> tuple[np.ndarray, np.ndarray]:
    """``R w`` plus the per-entry count of forward+adjoint pairs spent."""
    _require_linear(spec)
    res = _solve(spec, spec.operator.adjoint(w))
    return res.x, res.iterations + 1


def apply_R_adjoint(spec: ReconSpec, v) -> np.ndarray:
    """``R^H v = A (A^H A + lam I)^-1 v``."""
    _require_linear(spec)
    return spec.operator.forward(_solve(spec, v).x)


def apply_covariance(spec: ReconSpec, v, return_cost: bool = False):
    """``Sigma v = R R^H v`` evaluated with two CG solves and one ``A^H A``.

    With ``return_cost`` also returns forward+adjoint pair counts per entry.
    """
    _require_linear(spec)
    first = _solve(spec, v)
    second = _solve(spec, spec.normal.apply_gram(first.x))
    if return_cost:
        return second.x, first.iterations + second.iterations + 1
    return second.x


# ---------------------------------------------------------------- FISTA + TV


@dataclass(frozen=True)
class FistaTrace:
    """Record of one FISTA run sufficient to replay it and its linearization.

    ``masks[k]`` holds the inner-loop active sets of the TV prox at outer
    iteration ``k``. ``accepted[k]`` says whether the prox output replaced
    the current iterate, and ``(a[k], c[k])`` are the momentum weights in
    ``y = x_k + a (z_k - x_k) + c (x_k - x_{k-1})``.
    """

    b: np.ndarray
    x_hat: np.ndarray
    masks: np.ndarray  # uint8, (iters, inner, 2, rows, cols, 2)
    accepted: np.ndarray
    a: np.ndarray
    c: np.ndarray
    step: float
    threshold: float
    objective: np.ndarray

    @property
    def iterations(self) -> int:
        return len(self.a)


def objective(spec: ReconSpec, x, b) -> np.ndarray:
    """``1/2 |A x - b|^2 + lam_tv TV(x)`` for an image or a batch."""
    res = spec.operator.forward(x) - b
    data = 0.5 * (res.real**2 + res.imag**2).reshape(*res.shape[:-2], -1).sum(axis=-1)
    return data + spec.lam_tv * tv.tv_norm(x)


def _fista(spec: ReconSpec, b, record: bool):
    """Monotone FISTA on a batch of data ``(B, n_coils, n_samples)``.

    The data term is tracked through ``M x`` products, so each iteration
    costs one Gram application; ``M y`` follows from the same linear
    combination that forms ``y``.
    """
    if spec.is_linear:
        raise ValueError("FISTA needs a TV reconstruction spec")
    cfg: FistaConfig = spec.solver
    op = spec.operator
    b = np.asarray(b, dtype=np.complex128)
    batch = len(b)
    ahb = op.adjoint(b)
    half_bb = 0.5 * norm_batch(b, 2) ** 2
    step = cfg.step
    thresh = step * spec.lam_tv
    x = np.zeros((batch, *op.shape), dtype=np.complex128)
    mx = x.copy()
    y = x.copy()
    my = x.copy()
    fx = half_bb.copy()
    q = tv.empty_dual(batch, op.shape)
    t = 1.0
    n = cfg.max_iters
    masks = np.zeros((n, cfg.tv_inner_iters, 2, *op.shape, 2), dtype=np.uint8) if record else None
    accepted = np.zeros((n, batch), dtype=bool)
    a_hist, c_hist, f_hist = np.empty(n), np.empty(n), np.empty((n, batch))
    for k in range(n):
        z = tv.prox(y - step * (my - ahb), q, thresh, cfg.tv_inner_iters, masks[k : k + 1] if record else None)
        mz = spec.normal.apply_gram(z)
        fz = (0.5 * vdot_batch(z, mz, 2).real - vdot_batch(z, ahb, 2).real + half_bb) + spec.lam_tv * tv.tv_norm(z)
        take = fz <= fx
        sel = take[:, None, None]
        x_new = np.where(sel, z, x)
        mx_new = np.where(sel, mz, mx)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        a, c = t / t_new, (t - 1.0) / t_new
        y = x_new + a * (z - x_new) + c * (x_new - x)
        my = mx_new + a * (mz - mx_new) + c * (mx_new - mx)
        x, mx, t = x_new, mx_new, t_new
        fx = np.where(take, fz, fx)
        accepted[k], a_hist[k], c_hist[k], f_hist[k] = take, a, c, fx
    return x, masks, accepted, a_hist, c_hist, step, thresh, f_hist


def fista_tv(spec: ReconSpec, b) -> tuple[np.ndarray, FistaTrace]:
    """Minimize ``1/2 |A x - b|^2 + lam_tv |D x|_1`` from ``x = 0``.

    Returns the final iterate and a trace for :func:`fista_jvp`. The trace
    also carries the (non-increasing) objective after each iteration.
    """
    b = np.asarray(b, dtype=np.complex128)
    if b.shape != spec.operator.kspace_shape:
        raise ShapeMismatch(f"data shape {b.shape} does not match {spec.operator.kspace_shape}")
    x, masks, acc, a, c, step, thresh, hist = _fista(spec, b[None], True)
    trace = FistaTrace(b.copy(), x[0].copy(), masks, acc[:, 0].copy(), a, c, step, thresh, hist[:, 0].copy())
    return x[0], trace


def fista_batch(spec: ReconSpec, b) -> np.ndarray:
    """FISTA reconstructions of a batch of k-space data ``(B, n_coils, n_samples)``."""
    return _fista(spec, b, False)[0]


def replay(trace: FistaTrace, spec: ReconSpec) -> np.ndarray:
    """Rerun the recorded reconstruction; the result equals ``trace.x_hat`` bitwise."""
    _check_trace(trace, spec)
    x, masks, acc = _fista(spec, trace.b[None], True)[:3]
    if not (np.array_equal(masks, trace.masks) and np.array_equal(acc[:, 0], trace.accepted)):
        raise TraceMismatch("replayed active sets differ from the trace")
    return x[0]


def _check_trace(trace: FistaTrace, spec: ReconSpec):
    cfg = spec.solver
    if spec.is_linear:
        raise TraceMismatch("trace belongs to a TV spec")
    expect = (cfg.max_iters, cfg.tv_inner_iters, 2, *spec.operator.shape, 2)
    if trace.masks.shape != expect:
        raise TraceMismatch(f"trace masks {trace.masks.shape} do not match spec {expect}")
    if trace.step != cfg.step or trace.threshold != cfg.step * spec.lam_tv:
        raise TraceMismatch("trace step or threshold differs from spec")
    if trace.b.shape != spec.operator.kspace_shape:
        raise TraceMismatch("trace data shape differs from operator")


def fista_jvp(trace: FistaTrace, spec: ReconSpec, tangent) -> np.ndarray:
    """Jacobian of the FISTA reconstruction at ``trace.b`` applied to k-space tangents.

    The recursion mirrors FISTA with every prox replaced by its frozen
    derivative, so the result is exactly linear in ``tangent``. Accepts a
    single ``(n_coils, n_samples)`` tangent or a batch.
    """
    _check_trace(trace, spec)
    tangent = np.asarray(tangent, dtype=np.complex128)
    if tangent.shape[-2:] != spec.operator.kspace_shape:
        raise ShapeMismatch("tangent shape does not match operator")
    single = tangent.ndim == 2
    db = tangent[None] if single else tangent
    op = spec.operator
    ahdb = op.adjoint(db)
    step = trace.step
    dx = np.zeros((len(db), *op.shape), dtype=np.complex128)
    dy = dx.copy()
    dq = tv.empty_dual(len(db), op.shape)
    for k in range(trace.iterations):
        dz = tv.prox_tangent(dy - step * (spec.normal.apply_gram(dy) - ahdb), dq, trace.masks[k])
        dx_new = dz if trace.accepted[k] else dx
        a, c = trace.a[k], trace.c[k]
        dy = dx_new + a * (dz - dx_new) + c * (dx_new - dx)
        dx = dx_new
    return dx[0] if single else dx
