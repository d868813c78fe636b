"""Acceptance criteria 1-11, each reported as one PASS/FAIL line.

Runs take about half an hour on a single core. Every estimator run uses a
fixed seed chosen before looking at results; nothing here is tuned to pass.
Select with ``pytest -m acceptance``; run directly with
``python tests/test_acceptance.py``.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

from piconoise.analysis import (
    certify_pmr,
    certify_sequence,
    convergence_curve,
    efficiency_crossing,
    g_factor,
    nrmse,
    robustness_sweep,
    shrinkage_check,
    target_sigma,
)
from piconoise.cli import main as cli_main
from piconoise.errors import NotCertifiable, NotReached
from piconoise.estimators import (
    ProbeFamily,
    analytical_sense,
    draw_probes,
    oracle_diag,
    pico_jacobian,
    pico_linear,
    pmr,
)
from piconoise.experiments import ExperimentConfig, build_spec
from piconoise.operators import EncodingOperator
from piconoise.solvers import ReconSpec
from piconoise.synthetic import (
    erode,
    make_pattern_cartesian,
    make_pattern_radial,
    phantom_support,
    shepp_logan,
    synth_coils,
)

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance

SEED = 7
SHAPE = (16, 16)
CG_TOL = 1e-8
SIGMA_K = 0.01
SUPPORT = phantom_support(*SHAPE)
ROI = erode(SUPPORT, 2)


def report(number: int, title: str, checks):
    """Record one line per criterion; fail the test if any sub-check fails."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{name}: {'ok' if good else 'FAIL'} ({info})" for name, good, info in checks)
    line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}  {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


# ------------------------------------------------------------------ systems


@pytest.fixture(scope="module")
def coils():
    return synth_coils(SHAPE, 4)


@pytest.fixture(scope="module")
def cart(coils):
    """Criterion-1 system: 16x16, 4 coils, uniform Cartesian R=2, lambda=0."""
    op = EncodingOperator(coils, make_pattern_cartesian(SHAPE, 2, 0)).normalized()
    spec = ReconSpec.tikhonov(op, 0.0, tol=CG_TOL)
    return op, spec, oracle_diag(spec)


@pytest.fixture(scope="module")
def full_ref(coils):
    """Fully sampled lambda=0 reference for g-factors, with its own normalization."""
    op = EncodingOperator(coils, make_pattern_cartesian(SHAPE, 1, 0)).normalized()
    return op, analytical_sense(op.coils, op.pattern, op.norm_scale)


def _radial(coils, R):
    op = EncodingOperator(coils, make_pattern_radial(SHAPE, 32, 16, R)).normalized()
    spec = ReconSpec.tikhonov(op, 0.1, tol=CG_TOL)
    return op, spec, oracle_diag(spec)


@pytest.fixture(scope="module")
def radial(coils):
    return {R: _radial(coils, R) for R in (2, 4)}


PICO_CPS = sorted(set(range(10, 2001, 10)) | {2500, 5000, 10000, 20000, 40000})
PMR_CPS = sorted(set(range(10, 10001, 10)) | {25 * 2**k for k in range(12)})


@pytest.fixture(scope="module")
def radial_runs(radial):
    """PICO (N=40000) and PMR (N=51200) runs on both radial systems, with timings."""
    out = {}
    for R, (op, spec, ref) in radial.items():
        pico_run, t_pico = timed(pico_linear, spec, "random-phase", 40000, SEED, PICO_CPS, workers=1)
        b = op.forward(shepp_logan(*SHAPE))
        pmr_run, t_pmr = timed(pmr, spec, b, SIGMA_K, max(PMR_CPS), SEED, PMR_CPS, workers=1)
        out[R] = dict(pico=pico_run, t_pico=t_pico, pmr=pmr_run, t_pmr=t_pmr, ref=ref)
    return out


@pytest.fixture(scope="module")
def cs_system():
    """TV system of the cs-nonlinear experiment with its default configuration."""
    cfg = ExperimentConfig.from_mapping({"kind": "cs-nonlinear", "seed": str(SEED)})
    spec = build_spec(cfg)
    x = shepp_logan(*SHAPE)
    return cfg, spec, x, spec.operator.forward(x)


# ------------------------------------------------------------------ criteria


def test_criterion_01_linear_oracle(cart, coils):
    op, spec, ora = cart
    ana = analytical_sense(coils, op.pattern, op.norm_scale)
    rel = float(np.abs(ana.values - ora.values).max() / np.abs(ora.values).max())
    run, secs = timed(pico_linear, spec, "random-phase", 20000, SEED, workers=1)
    e_ora = nrmse(run.final, ora, SUPPORT)
    e_ana = nrmse(run.final, ana, SUPPORT)
    report(1, "linear oracle agreement", [
        ("analytical vs oracle <= 1e-8 rel", rel <= 1e-8, f"{rel:.2e}"),
        ("PICO vs oracle NRMSE <= 1.5%", e_ora <= 0.015, f"{100 * e_ora:.3f}%"),
        ("PICO vs analytical NRMSE <= 1.5%", e_ana <= 0.015, f"{100 * e_ana:.3f}%"),
        ("runtime <= 60 s", secs <= 60, f"{secs:.1f} s"),
    ])


def test_criterion_02_noncartesian_oracle(radial_runs):
    checks = []
    for R, r in radial_runs.items():
        e = nrmse(r["pico"].final, r["ref"], SUPPORT)
        checks.append((f"R={R} NRMSE <= 2%", e <= 0.02, f"{100 * e:.3f}%"))
        checks.append((f"R={R} runtime <= 300 s", r["t_pico"] <= 300, f"{r['t_pico']:.1f} s"))
    report(2, "non-Cartesian oracle agreement", checks)


def _slope(ns, mse):
    return float(np.polyfit(np.log(ns), np.log(mse), 1)[0])


def test_criterion_03_unbiased_rate(cart):
    op, spec, ora = cart
    ns = [125, 250, 500, 1000, 2000, 4000]
    seeds = range(20)
    b = op.forward(shepp_logan(*SHAPE))
    sq = {"PICO": np.zeros(len(ns)), "PMR": np.zeros(len(ns))}
    means, var_of_mean = np.zeros(SHAPE), np.zeros(SHAPE)
    for s in seeds:
        run = pico_linear(spec, "random-phase", ns[-1], s, ns, workers=1)
        prun = pmr(spec, b, SIGMA_K, ns[-1], s, ns, workers=1)
        for i, n in enumerate(ns):
            sq["PICO"][i] += np.mean((run.snapshots[n].values - ora.values)[SUPPORT] ** 2)
            sq["PMR"][i] += np.mean((prun.snapshots[n].values - ora.values)[SUPPORT] ** 2)
        means += run.final.values
        var_of_mean += run.final.stderr**2
    k = len(seeds)
    means /= k
    # standard error of the 20-seed mean, pooled from the within-run sample variances
    se = np.sqrt(var_of_mean) / k
    z = np.abs(means - ora.values)[SUPPORT] / se[SUPPORT]
    slopes = {m: _slope(ns, v / k) for m, v in sq.items()}
    report(3, "unbiasedness and 1/N rate", [
        ("PICO slope -1 +- 0.15", abs(slopes["PICO"] + 1) <= 0.15, f"{slopes['PICO']:.3f}"),
        ("PMR slope -1 +- 0.15", abs(slopes["PMR"] + 1) <= 0.15, f"{slopes['PMR']:.3f}"),
        ("mean PICO within 3 SE per voxel", bool(np.all(z <= 3)),
         f"max |z| {z.max():.2f}, {int((z > 3).sum())}/{z.size} voxels above 3"),
    ])


def test_criterion_04_variance_law():
    rng = np.random.default_rng(SEED)
    dim = 64
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    sigma = g @ g.conj().T / dim
    assert np.abs(sigma.imag).max() > 0
    off = np.sum(np.abs(sigma) ** 2, axis=1) - np.abs(np.diag(sigma)) ** 2
    checks = []
    for fam in ProbeFamily:
        v = draw_probes(fam, SEED, 0, 100_000, (dim,))
        delta = v.conj() * (v @ sigma.T)
        emp = delta.var(axis=0)
        pred = (fam.kappa - 1) * np.abs(np.diag(sigma)) ** 2 + off
        worst = float(np.max(np.abs(emp / pred - 1)))
        checks.append((f"{fam.value} (kappa={fam.kappa:g}) within 3%", worst <= 0.03, f"worst {100 * worst:.2f}%"))
    report(4, "single-sample variance law", checks)


def test_criterion_05_probe_ordering(radial):
    _, spec, ref = radial[2]
    cps = [100, 400, 1600, 6400]
    med = {}
    for fam in ProbeFamily:
        errs = np.array([
            [nrmse(run.snapshots[n], ref, SUPPORT) for n in cps]
            for run in (pico_linear(spec, fam, cps[-1], s, cps, workers=1) for s in range(20))
        ])
        med[fam] = np.median(errs, axis=0)
    rp, rad, ga = med[ProbeFamily.RANDOM_PHASE], med[ProbeFamily.RADEMACHER], med[ProbeFamily.GAUSSIAN]
    ok = bool(np.all(rp <= rad) and np.all(rad <= ga))
    table = ", ".join(f"N={n}: {100 * a:.2f}/{100 * b:.2f}/{100 * c:.2f}%" for n, a, b, c in zip(cps, rp, rad, ga))
    report(5, "probe ordering", [("RP <= Rademacher <= Gaussian (median NRMSE)", ok, table)])


def _crossing(run, ref, thr=0.02):
    try:
        return efficiency_crossing(convergence_curve(run, ref, SUPPORT), thr)[0]
    except NotReached:
        return None


def test_criterion_06_sample_efficiency(radial_runs):
    cross = {R: (_crossing(r["pico"], r["ref"]), _crossing(r["pmr"], r["ref"])) for R, r in radial_runs.items()}
    ratio = {R: (p2 / p1 if p1 and p2 else float("nan")) for R, (p1, p2) in cross.items()}
    detail = ", ".join(f"R={R}: PICO {c[0]} PMR {c[1]} ratio {ratio[R]:.2f}" for R, c in cross.items())
    report(6, "sample efficiency", [
        ("N_PMR >= 2 N_PICO at R=2", ratio[2] >= 2, detail),
        ("ratio(R=4) >= ratio(R=2)", ratio[4] >= ratio[2], f"{ratio[4]:.2f} vs {ratio[2]:.2f}"),
    ])


def test_criterion_07_shrinkage(cart, full_ref):
    rng = np.random.default_rng(SEED)
    passed, total = 0, 0
    for _ in range(20):
        dim = int(rng.integers(4, 65))
        g = rng.standard_normal((dim, 2 * dim)) + 1j * rng.standard_normal((dim, 2 * dim))
        m = g @ g.conj().T / (2 * dim)
        for lam in (0.01, 0.1, 1.0):
            total += 1
            passed += shrinkage_check(m, lam).passed
    op, _, ora0 = cart
    fop, fmap = full_ref
    g0 = g_factor(ora0, fmap, 2, SUPPORT, op.norm_scale, fop.norm_scale)
    ora5 = oracle_diag(ReconSpec.tikhonov(op, 0.5))
    g5 = g_factor(ora5, fmap, 2, SUPPORT, op.norm_scale, fop.norm_scale)
    gmin0 = float(g0.values[SUPPORT].min())
    below = int((g5.values[SUPPORT] < 1).sum())
    report(7, "Tikhonov shrinkage", [
        ("20 PD systems x 3 lambdas", passed == total, f"{passed}/{total}"),
        ("lambda=0.5 has g < 1", below >= 1, f"{below} voxels, min {g5.values[SUPPORT].min():.4f}"),
        ("lambda=0 has g >= 1-1e-6", gmin0 >= 1 - 1e-6, f"min {gmin0:.8f}"),
    ])


def test_criterion_08_nonlinear(cart, cs_system):
    # lambda_TV = 0 equivalence on the well-conditioned criterion-1 system
    op, _, _ = cart
    b = op.forward(shepp_logan(*SHAPE))
    lin = pico_linear(ReconSpec.tikhonov(op, 0.0, max_iters=500, tol=1e-13), "random-phase", 2000, SEED,
                      workers=1, probe_domain="kspace").final
    jac0 = pico_jacobian(ReconSpec.total_variation(op, 0.0), b, "random-phase", 2000, SEED, workers=1).final
    e0 = nrmse(jac0, lin, SUPPORT)
    # lambda_TV = 1e-2 on the piecewise-constant phantom; sigma maps on the support
    _, spec, _, k0 = cs_system
    ref = oracle_diag(spec, k0)
    pj = pico_jacobian(spec, k0, "random-phase", 20000, SEED, workers=1).final
    e_ora = nrmse(pj.sigma(), ref.sigma(), SUPPORT)
    pm = pmr(spec, k0, 1e-5, 100_000, SEED, workers=1).final
    e_pmr = nrmse(pj.sigma(), pm.sigma(), SUPPORT)
    report(8, "nonlinear equivalence and accuracy", [
        ("lambda_TV=0 PICO-J vs PICO <= 1e-4", e0 <= 1e-4, f"{e0:.2e}"),
        ("PICO-J vs column oracle <= 2%", e_ora <= 0.02, f"{100 * e_ora:.3f}%"),
        ("PICO-J vs PMR(1e5) <= 5%", e_pmr <= 0.05, f"{100 * e_pmr:.3f}%"),
    ])


def test_criterion_09_robustness(cs_system):
    cfg, spec, x, k0 = cs_system
    levels = [1, 5, 10, 50, 100, 200]
    sigma0 = target_sigma(k0, cfg.snr_db)
    sweep = robustness_sweep(spec, x, levels, sigma0, 8000, SEED, 8000, "random-phase", SUPPORT, workers=1)
    errs = [lv.nrmse for lv in sweep]
    table = ", ".join(f"x{s}: {100 * e:.2f}%" for s, e in zip(levels, errs))
    report(9, "robustness sweep", [
        ("smallest level <= 5%", errs[0] <= 0.05, f"{100 * errs[0]:.2f}%"),
        ("non-decreasing over levels", all(b >= a for a, b in zip(errs, errs[1:])), table),
    ])


def test_criterion_10_certification(radial_runs):
    rep = certify_sequence([1000, 2000, 4000, 8000], [0.05, 0.02, 0.019, 0.0188], [1.0] * 4, 8000)
    worked = rep.certified_N == 2000 and rep.nrmse_at_N == 0.02
    r = radial_runs[2]
    doubling = {n: r["pmr"].snapshots[n] for n in (25 * 2**k for k in range(12))}
    try:
        cert = certify_pmr(doubling, r["ref"], ROI, SUPPORT, gold_n=max(doubling))
        ok = cert.nrmse_at_N < 0.01
        info = f"N={cert.certified_N}, NRMSE {100 * cert.nrmse_at_N:.3f}%, dROI {100 * cert.delta_roi_at_N:.3f}%"
    except NotCertifiable:
        ok, info = False, "no N certified up to 51200"
    report(10, "PMR certification protocol", [
        ("worked example certifies N=2000", worked, f"N={rep.certified_N}"),
        ("certified N has NRMSE < 1%", ok, info),
    ])


CLI_CONFIGS = {
    "cartesian-linear": "n = 300\npmr_n = 200\n",
    "noncartesian-linear": "n = 300\npmr_n = 200\n",
    "cs-nonlinear": "n = 200\npmr_n = 50\n",
    "ablation": "n = 200\n",
    "shrinkage": "lams = 0.01,0.5\n",
    "robustness": "n = 100\npmr_n = 50\nlevels = 1,10\n",
}


def _binaries(d: Path):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "timing.txt"}


def test_criterion_11_determinism(tmp_path):
    checks = []
    for kind, body in CLI_CONFIGS.items():
        cfg = tmp_path / f"{kind}.txt"
        cfg.write_text(f"kind = {kind}\nseed = {SEED}\n{body}")
        first = tmp_path / kind / "w1"
        codes = [cli_main(["run", str(cfg), "--out", str(first), "--workers", "1"])]
        outs = {}
        for w in (1, 8):
            d = tmp_path / kind / f"manifest_w{w}"
            codes.append(cli_main(["run", str(first / "manifest.txt"), "--out", str(d), "--workers", str(w)]))
            outs[w] = _binaries(d)
        ref = _binaries(first)
        same = codes == [0, 0, 0] and outs[1] == ref and outs[8] == ref
        checks.append((kind, same, f"{len(ref)} files"))
    report(11, "bitwise determinism from manifests (workers 1 and 8)", checks)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
