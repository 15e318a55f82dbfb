import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foa_unet import IllConditionedError, NotPositiveDefiniteError
from foa_unet.foa import Direction, steering_vector
from foa_unet.linalg import (
    NotHermitianError,
    cholesky,
    condition_number,
    eigh,
    hermitian,
    pinv,
    solve_hermitian,
)

SQ3 = np.sqrt(3.0)


def random_hermitian(rng, n=4, batch=()):
    a = rng.standard_normal(batch + (n, n)) + 1j * rng.standard_normal(batch + (n, n))
    return 0.5 * (a + hermitian(a))


def random_pd(rng, n=4, batch=(), eps=1e-3):
    a = rng.standard_normal(batch + (n, n)) + 1j * rng.standard_normal(batch + (n, n))
    return a @ hermitian(a) + eps * np.eye(n)


class TestPinv:
    def test_single_column(self):
        d = np.array([[1.0], [SQ3], [0.0], [0.0]])
        np.testing.assert_allclose(pinv(d), d.T / 4, atol=1e-15)

    def test_identity(self):
        np.testing.assert_allclose(pinv(np.eye(3)), np.eye(3), atol=1e-15)

    def test_orthogonal_steering_pair(self):
        # d(0,0) . d(pi,0) = 1 - 3 != 0, so use (0,0) and (pi/2, 0): 1 + 0 = 1, not orthogonal either;
        # FOA steering vectors are orthogonal when 1 + 3 cos(gamma) = 0
        gamma = np.arccos(-1.0 / 3.0)
        m = np.stack(
            [steering_vector(Direction(0.0, 0.0)), steering_vector(Direction(gamma, 0.0))],
            axis=1,
        )
        assert abs(m[:, 0] @ m[:, 1]) < 1e-12
        np.testing.assert_allclose(pinv(m) @ m, np.eye(2), atol=1e-10)

    def test_moore_penrose_identities(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        p = pinv(m)
        np.testing.assert_allclose(m @ p @ m, m, atol=1e-10)
        np.testing.assert_allclose(p @ m @ p, p, atol=1e-10)
        np.testing.assert_allclose(hermitian(m @ p), m @ p, atol=1e-10)
        np.testing.assert_allclose(hermitian(p @ m), p @ m, atol=1e-10)
        np.testing.assert_allclose(p, np.linalg.pinv(m), atol=1e-10)

    def test_double_pinv(self):
        rng = np.random.default_rng(4)
        for shape in ((4, 1), (4, 2), (4, 3), (3, 3)):
            m = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            np.testing.assert_allclose(pinv(pinv(m)), m, atol=1e-8)

    def test_rank_deficient(self):
        d = steering_vector(Direction(0.3, 0.1))
        m = np.stack([d, d], axis=1)
        with pytest.raises(IllConditionedError) as info:
            pinv(m)
        assert info.value.condition > 1e6

    def test_condition_number(self):
        assert condition_number(np.diag([4.0, 1.0])) == pytest.approx(4.0)


class TestCholesky:
    def test_identity(self):
        np.testing.assert_allclose(cholesky(np.eye(4)), np.eye(4), atol=0)

    def test_diagonal(self):
        np.testing.assert_allclose(cholesky(np.diag([4.0, 1, 1, 1])), np.diag([2.0, 1, 1, 1]))

    def test_reconstruction(self):
        rng = np.random.default_rng(5)
        a = random_pd(rng, batch=(50,), eps=1e-6)
        low = cholesky(a)
        assert np.allclose(np.triu(low, 1), 0)
        err = np.linalg.norm(low @ hermitian(low) - a, axis=(-2, -1)) / np.linalg.norm(a, axis=(-2, -1))
        assert err.max() < 1e-10

    def test_not_pd_reports_pivot(self):
        a = np.eye(4)
        a[2, 2] = -1
        with pytest.raises(NotPositiveDefiniteError) as info:
            cholesky(a)
        assert info.value.pivot == 2

    def test_batch_reports_index(self):
        a = np.broadcast_to(np.eye(3), (5, 3, 3)).copy()
        a[3] = 0
        with pytest.raises(NotPositiveDefiniteError) as info:
            cholesky(a)
        assert info.value.index == (3,)


class TestEigh:
    def test_diagonal(self):
        w, v = eigh(np.diag([1.0, 3.0]))
        np.testing.assert_allclose(w, [3.0, 1.0])
        np.testing.assert_allclose(np.abs(v), [[0, 1], [1, 0]], atol=1e-15)

    def test_rank_one(self):
        d = np.array([1.0, SQ3, 0, 0])
        w, v = eigh(np.outer(d, d))
        np.testing.assert_allclose(w, [4, 0, 0, 0], atol=1e-12)
        principal = v[:, 0]
        np.testing.assert_allclose(abs(np.vdot(principal, d)) / 2.0, 1.0, atol=1e-12)

    def test_reconstruction_and_orthonormality(self):
        rng = np.random.default_rng(6)
        m = random_hermitian(rng, batch=(200,))
        w, v = eigh(m)
        recon = v @ (w[..., :, None] * hermitian(v))
        np.testing.assert_allclose(recon, m, atol=1e-8)
        np.testing.assert_allclose(hermitian(v) @ v, np.broadcast_to(np.eye(4), m.shape), atol=1e-12)
        assert np.all(np.diff(w, axis=-1) <= 0)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(m)[..., ::-1], atol=1e-10)

    def test_eigenpairs(self):
        rng = np.random.default_rng(7)
        m = random_hermitian(rng)
        w, v = eigh(m)
        norm = np.linalg.norm(m)
        for i in range(4):
            assert np.linalg.norm(m @ v[:, i] - w[i] * v[:, i]) < 1e-8 * norm

    def test_symmetrizes_round_off(self):
        rng = np.random.default_rng(8)
        m = random_hermitian(rng)
        m[0, 1] += 1e-14
        eigh(m)

    def test_rejects_non_hermitian(self):
        m = np.array([[1.0, 2.0], [0.0, 1.0]])
        with pytest.raises(NotHermitianError):
            eigh(m)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        m = random_hermitian(rng, batch=(10,))
        w1, v1 = eigh(m)
        w2, v2 = eigh(m.copy())
        assert np.array_equal(w1, w2) and np.array_equal(v1, v2)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4))
    def test_converges_for_any_hermitian(self, seed, n):
        rng = np.random.default_rng(seed)
        m = random_hermitian(rng, n=n) * 10.0 ** rng.uniform(-6, 6)
        w, v = eigh(m)
        d = hermitian(v) @ m @ v
        off = d - np.diag(np.diag(d))
        assert np.linalg.norm(off) < 1e-11 * np.linalg.norm(m)


class TestSolve:
    def test_identity(self):
        b = np.array([[1 + 2j, 3], [0, -1j]])
        np.testing.assert_allclose(solve_hermitian(np.eye(2), b), b)

    def test_scaled_identity(self):
        np.testing.assert_allclose(solve_hermitian(2 * np.eye(4), np.eye(4)), np.eye(4) / 2)

    def test_residual(self):
        rng = np.random.default_rng(10)
        a = random_pd(rng, batch=(100,))
        b = rng.standard_normal((100, 4, 2)) + 1j * rng.standard_normal((100, 4, 2))
        x = solve_hermitian(a, b)
        res = np.linalg.norm(a @ x - b, axis=(-2, -1)) / np.linalg.norm(b, axis=(-2, -1))
        assert res.max() < 1e-8

    def test_vector_rhs(self):
        rng = np.random.default_rng(11)
        a = random_pd(rng)
        b = rng.standard_normal(4) + 0j
        x = solve_hermitian(a, b)
        assert x.shape == (4,)
        assert np.linalg.norm(a @ x - b) < 1e-8 * np.linalg.norm(b)

    def test_singular_raises(self):
        d = np.array([1.0, SQ3, 0, 0])
        with pytest.raises(IllConditionedError):
            solve_hermitian(np.outer(d, d), d)
