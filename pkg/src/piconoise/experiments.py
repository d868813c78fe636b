"""Experiment configuration, synthetic system builders and runners.

A run is a pure function of its resolved configuration: every random draw
is keyed by ``seed`` and the worker count never changes the outputs.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, tv
from .analysis import convergence_curve, g_factor, robustness_sweep, shrinkage_check, target_sigma
from .errors import ConfigError
from .estimators import (
    ProbeFamily,
    VarianceMap,
    analytical_sense,
    oracle_diag,
    pico_jacobian,
    pico_linear,
    pmr,
)
from .fileio import format_config, read_csv, write_array, write_csv, write_curve, write_pgm
from .numerics import SeedSpec, derive_seed
from .operators import EncodingOperator
from .solvers import ReconSpec
from .synthetic import (
    erode,
    make_pattern_cartesian,
    make_pattern_radial,
    make_pattern_variable_density,
    pattern_from_trajectory,
    phantom_support,
    shepp_logan,
    synth_coils,
)

KINDS = ("cartesian-linear", "noncartesian-linear", "cs-nonlinear", "ablation", "shrinkage", "robustness")
TRAJECTORIES = ("cartesian", "radial", "variable-density", "file")
DEFAULT_TRAJECTORY = {
    "cartesian-linear": "cartesian",
    "noncartesian-linear": "radial",
    "cs-nonlinear": "variable-density",
    "ablation": "radial",
    "shrinkage": "cartesian",
    "robustness": "variable-density",
}
ORACLE_DIM = 1024
ROI_ERODE = 2
PATTERN_TAG = 3


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    rows: int = 16
    cols: int = 16
    coils: int = 4
    coil_width: float = 0.6
    R: int = 2
    calib: int = 0
    trajectory: str = ""
    trajectory_file: str = ""
    spokes: int = 32
    samples_per_spoke: int = 16
    lam: float = 0.0
    lam_tv: float = 0.01
    family: str = "random-phase"
    n: int = 2000
    pmr_n: int = 0
    sigma_k: float = 0.01
    checkpoints: str = "geometric"
    seed: int = 7
    cg_iters: int = 100
    cg_tol: float = 1e-8
    fista_iters: int = 100
    tv_inner: int = 20
    step: float = 0.99
    reference: str = "auto"
    gfactor: bool = True
    lams: str = "0.01,0.1,1"
    levels: str = "1,5,10,50,100,200"
    sigma0: float = 0.0
    snr_db: float = 45.0

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(key, "unknown key")
            typ = known[key].type
            try:
                if typ in ("int", int):
                    kw[key] = int(raw)
                elif typ in ("float", float):
                    kw[key] = float(raw)
                elif typ in ("bool", bool):
                    low = str(raw).strip().lower()
                    if low not in ("1", "0", "true", "false", "yes", "no"):
                        raise ValueError(raw)
                    kw[key] = low in ("1", "true", "yes")
                else:
                    kw[key] = str(raw).strip()
            except ValueError:
                raise ConfigError(key, f"cannot parse {raw!r} as {typ}") from None
        if "kind" not in kw:
            raise ConfigError("kind", "missing experiment kind")
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def with_overrides(self, values: dict) -> "ExperimentConfig":
        return ExperimentConfig.from_mapping({**self.as_mapping(), **values})

    def as_mapping(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ("true" if v else "false") if isinstance(v, bool) else (repr(v) if isinstance(v, float) else str(v))
        return out

    @property
    def traj(self) -> str:
        return self.trajectory or DEFAULT_TRAJECTORY[self.kind]

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def linear(self) -> bool:
        return self.kind in ("cartesian-linear", "noncartesian-linear", "ablation", "shrinkage")

    def checkpoint_list(self, n: int, minimum: int = 1) -> list[int]:
        text = self.checkpoints.strip().lower()
        if text == "geometric":
            cps, c = [], 25
            while c < n:
                cps.append(c)
                c *= 2
        elif text.startswith("step:"):
            stride = int(text[5:])
            cps = list(range(stride, n, stride))
        elif text in ("", "none"):
            cps = []
        else:
            cps = [int(v) for v in text.split(",") if v.strip()]
        return sorted({c for c in cps if minimum <= c <= n} | {n})

    def validate(self):
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(key, msg)

        need(self.kind in KINDS, "kind", f"must be one of {', '.join(KINDS)}")
        need(self.rows >= 8, "rows", "must be >= 8")
        need(self.cols >= 8, "cols", "must be >= 8")
        need(self.coils >= 1, "coils", "must be >= 1")
        need(self.coil_width > 0, "coil_width", "must be positive")
        need(self.R >= 1, "R", "must be >= 1")
        need(0 <= self.calib <= self.rows, "calib", "must lie in [0, rows]")
        need(self.traj in TRAJECTORIES, "trajectory", f"must be one of {', '.join(TRAJECTORIES)}")
        need(self.traj != "file" or self.trajectory_file, "trajectory_file", "required for trajectory = file")
        need(self.spokes >= 1, "spokes", "must be >= 1")
        need(self.samples_per_spoke >= 1, "samples_per_spoke", "must be >= 1")
        need(self.lam >= 0, "lam", "must be >= 0")
        need(self.lam_tv >= 0, "lam_tv", "must be >= 0")
        try:
            ProbeFamily.parse(self.family)
        except ValueError:
            raise ConfigError("family", "must be random-phase, rademacher or gaussian") from None
        need(self.n >= 2, "n", "must be >= 2")
        need(self.pmr_n == 0 or self.pmr_n >= 2, "pmr_n", "must be 0 (off) or >= 2")
        need(self.sigma_k > 0, "sigma_k", "must be positive")
        need(0 <= self.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
        need(self.cg_iters >= 1, "cg_iters", "must be >= 1")
        need(self.cg_tol > 0, "cg_tol", "must be positive")
        need(self.fista_iters >= 1, "fista_iters", "must be >= 1")
        need(self.tv_inner >= 1, "tv_inner", "must be >= 1")
        need(0 < self.step <= 1, "step", "must lie in (0, 1]")
        need(self.reference in ("auto", "oracle", "analytical", "none"), "reference", "must be auto, oracle, analytical or none")
        need(self.sigma0 >= 0, "sigma0", "must be >= 0")
        try:
            self.checkpoint_list(self.n)
            lams, levels = _floats(self.lams), _floats(self.levels)
        except ValueError:
            raise ConfigError("checkpoints", "malformed list") from None
        need(all(v >= 0 for v in lams), "lams", "must be >= 0")
        need(levels and all(v > 0 for v in levels) and list(levels) == sorted(set(levels)), "levels", "must be positive and ascending")
        need(not (self.kind in ("cs-nonlinear", "robustness") and self.rows * self.cols > 4096), "rows", "TV experiments are limited to 4096 voxels")


# ------------------------------------------------------------------ systems


def build_pattern(cfg: ExperimentConfig):
    shape = cfg.shape
    if cfg.traj == "cartesian":
        return make_pattern_cartesian(shape, cfg.R, cfg.calib)
    if cfg.traj == "radial":
        return make_pattern_radial(shape, cfg.spokes, cfg.samples_per_spoke, cfg.R)
    if cfg.traj == "variable-density":
        return make_pattern_variable_density(shape, cfg.R, cfg.calib, SeedSpec(derive_seed(cfg.seed, PATTERN_TAG)))
    _, rows = read_csv(cfg.trajectory_file)
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ConfigError("trajectory_file", "expected columns k_x, k_y[, interleave]")
    coords = np.stack([arr[:, 1], arr[:, 0]], axis=1)
    inter = arr[:, 2].astype(int) if arr.shape[1] > 2 else np.zeros(len(arr), dtype=int)
    return pattern_from_trajectory(shape, coords, inter, cfg.R)


def build_operator(cfg: ExperimentConfig, pattern=None) -> EncodingOperator:
    pattern = pattern or build_pattern(cfg)
    coils = synth_coils(cfg.shape, cfg.coils, cfg.coil_width)
    return EncodingOperator(coils, pattern).normalized()


def build_spec(cfg: ExperimentConfig, op=None, lam=None) -> ReconSpec:
    op = op or build_operator(cfg)
    if cfg.linear:
        return ReconSpec.tikhonov(op, cfg.lam if lam is None else lam, cfg.cg_iters, cfg.cg_tol)
    return ReconSpec.total_variation(op, cfg.lam_tv, cfg.fista_iters, cfg.step, cfg.tv_inner)


def reference_operator(cfg: ExperimentConfig) -> EncodingOperator:
    """Fully sampled Cartesian operator with the same coils, for g-factors."""
    return build_operator(cfg, make_pattern_cartesian(cfg.shape, 1, 0))


def masks(cfg: ExperimentConfig):
    support = phantom_support(*cfg.shape)
    return support, erode(support, ROI_ERODE)


def reference_map(cfg: ExperimentConfig, spec: ReconSpec, b=None) -> VarianceMap | None:
    mode = cfg.reference
    op = spec.operator
    uniform = op.pattern.is_cartesian and cfg.calib == 0 and spec.is_linear and spec.lam == 0
    if mode == "auto":
        if uniform and op.shape[0] % op.pattern.R == 0:
            mode = "analytical"
        elif op.image_dim <= ORACLE_DIM:
            mode = "oracle"
        else:
            return None
    if mode == "none":
        return None
    if mode == "analytical":
        return analytical_sense(op.coils, op.pattern, op.norm_scale, op.whitener)
    return oracle_diag(spec, b)


# ------------------------------------------------------------------ running


class Outputs:
    """Collects files written by a run."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.notes: list[str] = []

    def array(self, name, x):
        write_array(self.dir / name, x)
        self.files.append(name)

    def map(self, stem, vm: VarianceMap, sigma_preview=True):
        self.array(f"{stem}_var.picv", vm.values)
        self.array(f"{stem}_sigma.picv", vm.sigma())
        if sigma_preview:
            write_pgm(self.dir / f"{stem}_sigma.pgm", vm.sigma())
            self.files.append(f"{stem}_sigma.pgm")
        if vm.clamped:
            self.notes.append(f"{stem}: clamped {vm.clamped} negative voxels")

    def snapshots(self, stem, run):
        ns = run.checkpoints
        self.array(f"{stem}_snapshots.picv", np.stack([run.snapshots[n].values for n in ns]))
        write_csv(self.dir / f"{stem}_snapshots.csv", ["N", "operator_applications"], [(n, run.snapshots[n].operator_applications) for n in ns])
        self.files.append(f"{stem}_snapshots.csv")

    def curve(self, name, curve):
        write_curve(self.dir / name, curve)
        self.files.append(name)


def _linear_run(cfg, out: Outputs, workers, family=None, stem="pico"):
    spec = build_spec(cfg)
    support, roi = masks(cfg)
    out.array("support.picv", support.astype(np.float32))
    out.array("roi.picv", roi.astype(np.float32))
    ref = reference_map(cfg, spec)
    if ref is not None:
        out.map("reference", ref)
    families = [family] if family else [cfg.family]
    for fam in families:
        run = pico_linear(spec, fam, cfg.n, cfg.seed, cfg.checkpoint_list(cfg.n), workers)
        out.map(stem, run.final)
        out.snapshots(stem, run)
        if ref is not None:
            out.curve(f"curve_{stem}.csv", convergence_curve(run, ref, support))
    if cfg.pmr_n:
        b = spec.operator.forward(shepp_logan(*cfg.shape))
        prun = pmr(spec, b, cfg.sigma_k, cfg.pmr_n, cfg.seed, cfg.checkpoint_list(cfg.pmr_n, 2), workers)
        out.map("pmr", prun.final)
        out.snapshots("pmr", prun)
        if ref is not None:
            out.curve("curve_pmr.csv", convergence_curve(prun, ref, support))
    if cfg.gfactor and ref is not None:
        full = ReconSpec.tikhonov(reference_operator(cfg), 0.0, cfg.cg_iters, cfg.cg_tol)
        full_ref = analytical_sense(full.operator.coils, full.operator.pattern, full.operator.norm_scale)
        op = spec.operator
        g = g_factor(ref, full_ref, op.pattern.R, support, op.norm_scale, full.operator.norm_scale)
        out.array("g_reference.picv", g.values)
        write_pgm(out.dir / "g_reference.pgm", g.values)
        out.files.append("g_reference.pgm")


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int | None = None) -> Outputs:
    """Execute one configured experiment and write its artifacts plus a manifest."""
    out = Outputs(out_dir)
    t0 = time.perf_counter()
    if cfg.kind in ("cartesian-linear", "noncartesian-linear"):
        _linear_run(cfg, out, workers)
    elif cfg.kind == "ablation":
        spec = build_spec(cfg)
        support, _ = masks(cfg)
        ref = reference_map(cfg, spec)
        if ref is not None:
            out.map("reference", ref)
        for fam in ProbeFamily:
            run = pico_linear(spec, fam, cfg.n, cfg.seed, cfg.checkpoint_list(cfg.n), workers)
            stem = f"pico_{fam.value}"
            out.map(stem, run.final, sigma_preview=False)
            if ref is not None:
                out.curve(f"curve_{fam.value}.csv", convergence_curve(run, ref, support))
    elif cfg.kind == "cs-nonlinear":
        _cs_run(cfg, out, workers)
    elif cfg.kind == "shrinkage":
        _shrinkage_run(cfg, out)
    elif cfg.kind == "robustness":
        _robustness_run(cfg, out, workers)
    elapsed = time.perf_counter() - t0
    comments = [f"piconoise {__version__}", f"kind {cfg.kind}", *out.notes]
    (out.dir / "manifest.txt").write_text(format_config(cfg.as_mapping(), comments))
    (out.dir / "timing.txt").write_text(f"seconds = {elapsed!r}\nworkers = {workers}\nbackend = {tv.BACKEND}\n")
    return out


def _cs_run(cfg, out: Outputs, workers):
    spec = build_spec(cfg)
    support, roi = masks(cfg)
    out.array("support.picv", support.astype(np.float32))
    out.array("roi.picv", roi.astype(np.float32))
    x_true = shepp_logan(*cfg.shape)
    k0 = spec.operator.forward(x_true)
    run = pico_jacobian(spec, k0, cfg.family, cfg.n, cfg.seed, cfg.checkpoint_list(cfg.n), workers)
    out.map("pico", run.final)
    out.snapshots("pico", run)
    ref = None if cfg.reference == "none" or spec.operator.image_dim > ORACLE_DIM else oracle_diag(spec, k0)
    if ref is not None:
        out.map("reference", ref)
        out.curve("curve_pico.csv", convergence_curve(run, ref, support, on_sigma=True))
    if cfg.pmr_n:
        prun = pmr(spec, k0, cfg.sigma_k, cfg.pmr_n, cfg.seed, cfg.checkpoint_list(cfg.pmr_n, 2), workers)
        out.map("pmr", prun.final)
        out.snapshots("pmr", prun)
        if ref is not None:
            out.curve("curve_pmr.csv", convergence_curve(prun, ref, support, on_sigma=True))


def _shrinkage_run(cfg, out: Outputs):
    op = build_operator(cfg)
    support, _ = masks(cfg)
    rows = []
    base = oracle_diag(ReconSpec.tikhonov(op, 0.0, cfg.cg_iters, cfg.cg_tol))
    full_op = reference_operator(cfg)
    full = analytical_sense(full_op.coils, full_op.pattern, full_op.norm_scale)
    for lam in _floats(cfg.lams):
        rep = shrinkage_check(ReconSpec.tikhonov(op, lam), lam)
        vm = oracle_diag(ReconSpec.tikhonov(op, lam, cfg.cg_iters, cfg.cg_tol))
        g = g_factor(vm, full, op.pattern.R, support, op.norm_scale, full_op.norm_scale)
        out.array(f"g_lam{lam!r}.picv", g.values)
        gmin = float(g.values[support].min())
        rows.append((lam, rep.min_eig_gap, rep.trace_gap, int(rep.diag_dominated), rep.modewise_error, gmin, int(rep.passed)))
    g0 = g_factor(base, full, op.pattern.R, support, op.norm_scale, full_op.norm_scale)
    out.array("g_lam0.picv", g0.values)
    write_csv(
        out.dir / "shrinkage.csv",
        ["lam", "min_eig_gap", "trace_gap", "diag_dominated", "modewise_error", "g_min", "passed"],
        rows,
    )
    out.files.append("shrinkage.csv")


def _robustness_run(cfg, out: Outputs, workers):
    spec = build_spec(cfg)
    support, _ = masks(cfg)
    x_true = shepp_logan(*cfg.shape)
    sigma0 = cfg.sigma0 or target_sigma(spec.operator.forward(x_true), cfg.snr_db)
    levels = robustness_sweep(spec, x_true, _floats(cfg.levels), sigma0, cfg.n, cfg.seed, cfg.pmr_n or cfg.n, cfg.family, support, workers)
    for lv in levels:
        out.array(f"pico_sigma_x{lv.scale!r}.picv", lv.pico.sigma())
        out.array(f"pmr_sigma_x{lv.scale!r}.picv", lv.pmr.sigma())
    write_csv(out.dir / "robustness.csv", ["scale", "sigma", "nrmse"], [(lv.scale, lv.sigma, lv.nrmse) for lv in levels])
    out.files.append("robustness.csv")


def replace_config(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    new = dataclasses.replace(cfg, **kw)
    new.validate()
    return new
