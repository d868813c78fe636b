"""Compare the compiled TV kernel with the numpy fallback.

Times the prox (with and without active-set recording), the linearized
prox, and the end-to-end solver paths that call them: one FISTA batch and
one batch of Jacobian-vector products on a 16x16 four-coil TV system.

    python benchmarks/bench_tv.py [--batch 128] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from piconoise import tv
from piconoise.numerics import SeedSpec
from piconoise.operators import EncodingOperator
from piconoise.solvers import ReconSpec, fista_batch, fista_jvp, fista_tv
from piconoise.synthetic import make_pattern_variable_density, shepp_logan, synth_coils


def _best(fn, repeat: int) -> float:
    fn()  # warm up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(batch: int, shape=(16, 16), n_inner: int = 20):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((batch, *shape)) + 1j * rng.standard_normal((batch, *shape))
    masks = np.zeros((batch, n_inner, 2, *shape, 2), np.uint8)
    one_mask = np.ascontiguousarray(masks[0])

    def prox(impl, record):
        q = tv.empty_dual(batch, shape)
        return lambda: tv.prox(z, q, 0.05, n_inner, masks if record else None, impl=impl)

    def tangent(impl):
        dq = tv.empty_dual(batch, shape)
        return lambda: tv.prox_tangent(z, dq, one_mask, impl=impl)

    return {
        "prox": lambda impl: prox(impl, False),
        "prox+record": lambda impl: prox(impl, True),
        "prox_tangent": tangent,
    }


def solver_cases(batch: int):
    shape = (16, 16)
    op = EncodingOperator(synth_coils(shape, 4), make_pattern_variable_density(shape, 2, 4, SeedSpec(3))).normalized()
    spec = ReconSpec.total_variation(op, 1e-2)
    k0 = op.forward(shepp_logan(*shape))
    _, trace = fista_tv(spec, k0)
    rng = np.random.default_rng(1)
    w = rng.standard_normal((batch, *op.kspace_shape)) + 1j * rng.standard_normal((batch, *op.kspace_shape))
    b = k0 + 1e-2 * w
    return {
        "fista batch": lambda: fista_batch(spec, b),
        "jvp batch": lambda: fista_jvp(trace, spec, w),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    try:
        impls = {"cython": tv.backend("cython"), "python": tv.backend("python")}
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    print(f"batch = {args.batch}, image 16x16, 20 inner iterations, best of {args.repeat}")
    print(f"{'case':<16}{'cython ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, make in kernel_cases(args.batch).items():
        t = {k: _best(make(impl), args.repeat) for k, impl in impls.items()}
        print(f"{name:<16}{1e3 * t['cython']:>12.2f}{1e3 * t['python']:>12.2f}{t['python'] / t['cython']:>10.1f}")

    # end to end: swap the active backend under the solvers
    cases = solver_cases(args.batch)
    active = tv._core
    try:
        for name, fn in cases.items():
            t = {}
            for k, impl in impls.items():
                tv._core = impl
                t[k] = _best(fn, max(1, args.repeat // 2))
            print(f"{name:<16}{1e3 * t['cython']:>12.1f}{1e3 * t['python']:>12.1f}{t['python'] / t['cython']:>10.1f}")
    finally:
        tv._core = active


if __name__ == "__main__":
    main()
