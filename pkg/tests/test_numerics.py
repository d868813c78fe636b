import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piconoise.errors import NotPositiveDefinite, ShapeMismatch
from piconoise.numerics import (
    SeedSpec,
    cholesky,
    derive_seed,
    draw_complex_gaussian,
    hermitian_eig,
)


def random_pd(seed, n, eps=1e-6):
    g = np.random.default_rng(seed)
    b = g.standard_normal((n, n)) + 1j * g.standard_normal((n, n))
    return b @ b.conj().T + eps * np.eye(n)


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(cholesky(np.diag([4.0, 4.0])), np.diag([2.0, 2.0]))

    def test_random_reconstructs(self):
        m = random_pd(0, 4)
        low = cholesky(m)
        assert np.allclose(np.triu(low, 1), 0)
        assert np.linalg.norm(low @ low.conj().T - m) / np.linalg.norm(m) <= 1e-10

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.diag([1.0, -1.0]))

    def test_tiny_pivot_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.diag([1.0, 1e-15]))

    def test_non_square(self):
        with pytest.raises(ShapeMismatch):
            cholesky(np.ones((2, 3)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 64), st.integers(0, 2**32 - 1))
    def test_residual_property(self, n, seed):
        m = random_pd(seed, n)
        low = cholesky(m)
        assert np.linalg.norm(low @ low.conj().T - m) / np.linalg.norm(m) <= 1e-10


class TestEig:
    def test_diagonal(self):
        vals, _ = hermitian_eig(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(vals, [1, 2, 3])

    def test_classic_2x2(self):
        vals, _ = hermitian_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(vals, [1, 3])

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 64), st.integers(0, 2**32 - 1))
    def test_residuals(self, n, seed):
        m = random_pd(seed, n)
        vals, vecs = hermitian_eig(m)
        assert np.all(np.diff(vals) >= 0)
        scale = np.abs(vals).max()
        assert np.abs(m @ vecs - vecs * vals).max() <= 1e-9 * scale
        assert np.abs(vecs.conj().T @ vecs - np.eye(n)).max() <= 1e-9


class TestRng:
    def test_moments(self):
        v = draw_complex_gaussian(SeedSpec(11, 0), 10**6)
        p = np.abs(v) ** 2
        assert abs(p.mean() - 1.0) <= 0.005
        assert abs((p**2).mean() - 2.0) <= 0.02
        assert abs(v.real.var() - 0.5) < 0.005

    def test_deterministic(self):
        a = draw_complex_gaussian(SeedSpec(5, 9), 1000)
        b = draw_complex_gaussian(SeedSpec(5, 9), 1000)
        assert a.tobytes() == b.tobytes()

    def test_order_independent(self):
        # drawing other streams in between changes nothing
        first = draw_complex_gaussian(SeedSpec(5, 3), 100)
        for i in range(3):
            draw_complex_gaussian(SeedSpec(5, i), 100)
        assert np.array_equal(first, draw_complex_gaussian(SeedSpec(5, 3), 100))

    def test_streams_uncorrelated(self):
        n = 10**5
        draws = [draw_complex_gaussian(SeedSpec(42, i), n) for i in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                c = np.vdot(draws[i], draws[j]) / n
                assert abs(c) < 0.01

    def test_seed_validation(self):
        with pytest.raises(ValueError):
            SeedSpec(-1)
        with pytest.raises(ValueError):
            SeedSpec(0, 2**64)
        SeedSpec(2**64 - 1, 2**64 - 1).generator()

    def test_derive_seed(self):
        assert derive_seed(7, 1) == derive_seed(7, 1)
        assert derive_seed(7, 1) != derive_seed(7, 2)
        assert 0 <= derive_seed(7, 1) < 2**64

    def test_double_precision(self):
        assert draw_complex_gaussian(SeedSpec(1), 4).dtype == np.complex128
