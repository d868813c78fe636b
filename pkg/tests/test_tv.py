import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piconoise import tv

from conftest import crandn

cy = pytest.importorskip("piconoise._tvcore")
py = tv.backend("python")


def _run(impl, z, thresh, n_inner, record=True):
    q = tv.empty_dual(len(z), z.shape[1:])
    masks = np.zeros((len(z), n_inner, 2, *z.shape[1:], 2), np.uint8) if record else None
    x = tv.prox(z, q, thresh, n_inner, masks, impl=impl)
    return x, q, masks


class TestBackends:
    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(1, 3),
        st.integers(2, 9),
        st.integers(2, 9),
        st.floats(0.0, 2.0),
        st.integers(1, 25),
        st.integers(0, 2**31),
    )
    def test_forward_bitwise(self, b, rows, cols, thresh, n_inner, seed):
        z = crandn(np.random.default_rng(seed), b, rows, cols)
        xc, qc, mc = _run(cy, z, thresh, n_inner)
        xp, qp, mp = _run(py, z, thresh, n_inner)
        assert np.array_equal(xc.view(np.uint64), xp.view(np.uint64))
        assert np.array_equal(qc.view(np.uint64), qp.view(np.uint64))
        assert np.array_equal(mc, mp)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 8), st.integers(2, 8), st.floats(0.01, 1.0), st.integers(1, 20), st.integers(0, 2**31))
    def test_tangent_bitwise(self, rows, cols, thresh, n_inner, seed):
        rng = np.random.default_rng(seed)
        z = crandn(rng, 1, rows, cols)
        _, _, masks = _run(py, z, thresh, n_inner)
        dz = crandn(rng, 3, rows, cols)
        outs = []
        for impl in (cy, py):
            dq = tv.empty_dual(3, (rows, cols))
            x = dz.copy()
            for it in range(2):  # warm-started dual across calls
                x = tv.prox_tangent(x, dq, np.ascontiguousarray(masks[0]), impl=impl)
            outs.append((x, dq))
        assert np.array_equal(outs[0][0], outs[1][0])
        assert np.array_equal(outs[0][1], outs[1][1])

    def test_unrecorded_matches_recorded(self, rng):
        z = crandn(rng, 2, 6, 7)
        a = _run(cy, z, 0.3, 10, record=False)[0]
        b = _run(cy, z, 0.3, 10, record=True)[0]
        assert np.array_equal(a, b)

    def test_active_backend(self):
        assert tv.BACKEND in ("cython", "python")
        with pytest.raises(ValueError):
            tv.backend("fortran")


class TestProx:
    def test_zero_threshold_identity(self, rng):
        z = crandn(rng, 2, 8, 8)
        assert np.array_equal(_run(None, z, 0.0, 20)[0], z)

    def test_constant_fixed_point(self):
        z = np.full((1, 8, 8), 2.0 - 1.0j)
        np.testing.assert_allclose(_run(None, z, 0.5, 20)[0], z, atol=1e-15)

    def test_preserves_mean(self, rng):
        # D^T q has zero mean under periodic boundaries
        z = crandn(rng, 3, 8, 8)
        x = _run(None, z, 0.4, 20)[0]
        np.testing.assert_allclose(x.mean(axis=(1, 2)), z.mean(axis=(1, 2)), atol=1e-13)

    def test_reduces_tv(self, rng):
        z = crandn(rng, 3, 8, 8)
        x = _run(None, z, 0.2, 20)[0]
        assert np.all(tv.tv_norm(x) < tv.tv_norm(z))

    def test_dual_feasible(self, rng):
        z = crandn(rng, 2, 8, 8)
        _, q, _ = _run(None, z, 0.3, 20)
        assert np.abs(q).max() <= 0.3

    def test_prox_objective_not_worse_than_input(self, rng):
        z = crandn(rng, 1, 8, 8)
        t = 0.25
        x = _run(None, z, t, 50)[0]
        fz = t * tv.tv_norm(z)[0]
        fx = 0.5 * np.sum(np.abs(x - z) ** 2) + t * tv.tv_norm(x)[0]
        assert fx < fz

    def test_tv_norm_example(self):
        x = np.zeros((4, 4), complex)
        x[1, 1] = 1 + 2j
        # single spike: 4 unit jumps in each of re (1) and im (2)
        assert tv.tv_norm(x)[0] == pytest.approx(4 * 1 + 4 * 2)


class TestTangent:
    def _setup(self, rng):
        z = crandn(rng, 1, 6, 6)
        _, _, masks = _run(None, z, 0.3, 15)
        return np.ascontiguousarray(masks[0])

    def test_zero_tangent(self, rng):
        m = self._setup(rng)
        dq = tv.empty_dual(1, (6, 6))
        assert not np.any(tv.prox_tangent(np.zeros((1, 6, 6), complex), dq, m))

    def test_linear(self, rng):
        m = self._setup(rng)
        u, v = crandn(rng, 1, 6, 6), crandn(rng, 1, 6, 6)
        def f(x):
            return tv.prox_tangent(x, tv.empty_dual(1, (6, 6)), m)
        lhs = f(2.0 * u - 0.5 * v)
        rhs = 2.0 * f(u) - 0.5 * f(v)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_matches_finite_difference(self, rng):
        z = crandn(rng, 1, 6, 6)
        _, _, masks = _run(None, z, 0.3, 15)
        dz = crandn(rng, 1, 6, 6)
        eps = 1e-7
        xp = _run(None, z + eps * dz, 0.3, 15, record=False)[0]
        xm = _run(None, z - eps * dz, 0.3, 15, record=False)[0]
        fd = (xp - xm) / (2 * eps)
        jv = tv.prox_tangent(dz, tv.empty_dual(1, (6, 6)), np.ascontiguousarray(masks[0]))
        np.testing.assert_allclose(jv, fd, atol=1e-5)


class TestSelection:
    def test_env_forces_fallback(self):
        import os
        import subprocess
        import sys

        env = {**os.environ, "PICONOISE_PURE": "1"}
        out = subprocess.run(
            [sys.executable, "-c", "from piconoise import tv; print(tv.BACKEND)"],
            env=env, capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == "python"

    def test_solver_paths_identical(self, cs_system, rng):
        from piconoise.solvers import fista_jvp, fista_tv

        spec, _, k0 = cs_system
        spec = type(spec).total_variation(spec.operator, 1e-2, max_iters=15)
        t = crandn(rng, 2, *k0.shape)
        results = []
        active = tv._core
        try:
            for impl in (cy, py):
                tv._core = impl
                x, trace = fista_tv(spec, k0)
                results.append((x, fista_jvp(trace, spec, t)))
        finally:
            tv._core = active
        assert np.array_equal(results[0][0], results[1][0])
        assert np.array_equal(results[0][1], results[1][1])
