import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autogp import autodiff as ad
from autogp.gp import JITTER_LADDER, SingularCovarianceError, jittered_cholesky, nlml, posterior
from autogp.kernels import BasicKernelKind, KernelParams, gram

from conftest import check_grad


def test_nlml_hand_values():
    assert nlml([[1.0]], [0.0], 0.0).item() == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-7)
    assert nlml([[1.0]], [1.0], 0.0).item() == pytest.approx(0.5 * (1 + math.log(2 * math.pi)), abs=1e-7)


def test_nlml_zero_targets_drop_quadratic():
    K = np.array([[2.0, 0.5], [0.5, 1.0]])
    full = nlml(K, [1.0, -1.0], 0.1).item()
    zero = nlml(K, [0.0, 0.0], 0.1).item()
    L = np.linalg.cholesky(K + 0.1 * np.eye(2) + 1e-8 * np.eye(2))
    assert zero == pytest.approx(0.5 * (2 * np.log(np.diag(L)).sum() + 2 * math.log(2 * math.pi)))
    assert full > zero


def test_nlml_shape_check():
    with pytest.raises(ad.ShapeError):
        nlml(np.eye(2), [1.0, 2.0, 3.0], 0.1)


def test_nlml_grads_match_fd():
    rng = np.random.default_rng(0)
    x = ad.Tensor(rng.normal(size=5), requires_grad=True)
    p = KernelParams(ad.Tensor([0.1, -0.2, 0.0], requires_grad=True))
    raw_s2 = ad.Tensor(math.log(0.3), requires_grad=True)
    y = rng.normal(size=5)

    def build():
        return nlml(gram(BasicKernelKind.SE, p, x), y, ad.exp(raw_s2))

    assert check_grad(build, [x, p.raw, raw_s2]) < 1e-4


def test_posterior_interpolates_training_point():
    K = np.array([[1.0]])
    post = posterior(K, K, K, [0.7], sigma2=0.0)
    assert post.mean[0] == pytest.approx(0.7, abs=1e-6)
    assert abs(post.cov[0, 0]) < 1e-6


def test_posterior_hand_value():
    p = KernelParams.from_values(BasicKernelKind.SE)
    x, xs = np.array([0.0]), np.array([2.0])
    k = lambda a, b: gram(BasicKernelKind.SE, p, a, b).data
    post = posterior(k(x, x), k(xs, x), k(xs, xs), [1.0])
    assert post.mean[0] == pytest.approx(math.exp(-2.0), rel=1e-6)


def test_posterior_independent_test_point_returns_prior():
    K_ss = np.array([[2.0, 0.3], [0.3, 1.0]])
    post = posterior(np.eye(3), np.zeros((2, 3)), K_ss, [1.0, 2.0, 3.0], sigma2=0.1)
    np.testing.assert_array_equal(post.mean, 0.0)
    np.testing.assert_allclose(post.cov, K_ss)


def test_posterior_shape_check():
    with pytest.raises(ad.ShapeError):
        posterior(np.eye(2), np.zeros((1, 3)), np.eye(1), [1.0, 2.0])


def test_jitter_identity_uses_smallest_rung():
    L, j = jittered_cholesky(np.eye(3))
    assert j == JITTER_LADDER[0]
    np.testing.assert_allclose(L, np.sqrt(1 + j) * np.eye(3))


def test_jitter_rank_one():
    A = np.ones((2, 2))
    L, j = jittered_cholesky(A)
    assert np.abs(L @ L.T - A).max() <= 2 * j


def test_jitter_rejects_asymmetric():
    with pytest.raises(ValueError):
        jittered_cholesky(np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_jitter_gives_up_with_diagnostics():
    with pytest.raises(SingularCovarianceError, match="eigenvalue range"):
        jittered_cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))


def dense_posterior(K_tt, K_st, K_ss, y, s2):
    inv = np.linalg.inv(K_tt + s2 * np.eye(len(y)))
    return K_st @ inv @ y, K_ss - K_st @ inv @ K_st.T


@pytest.mark.parametrize("seed", range(50))
def test_posterior_matches_dense_inverse(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 9)), int(rng.integers(1, 4))
    X = rng.normal(size=(n + m, 2))
    Kfull = np.exp(-0.5 * ((X[:, None] - X[None]) ** 2).sum(-1)) + 0.05 * np.eye(n + m)
    y = rng.normal(size=n)
    s2 = float(rng.uniform(0.05, 0.5))
    K_tt, K_st, K_ss = Kfull[:n, :n], Kfull[n:, :n], Kfull[n:, n:]
    post = posterior(K_tt, K_st, K_ss, y, sigma2=s2)
    mean, cov = dense_posterior(K_tt + 1e-8 * np.eye(n), K_st, K_ss, y, s2)
    np.testing.assert_allclose(post.mean, mean, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(post.cov, cov, rtol=1e-8, atol=1e-12)
    assert np.diag(post.cov).min() >= -1e-8


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_more_data_never_increases_variance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    x = rng.uniform(-3, 3, n + 1)
    p = KernelParams.from_values(BasicKernelKind.SE, l=float(rng.uniform(0.3, 2)))
    K = gram(BasicKernelKind.SE, p, x).data
    y = rng.normal(size=n)
    small = posterior(K[:n - 1, :n - 1], K[n:, :n - 1], K[n:, n:], y[:n - 1], sigma2=0.1)
    large = posterior(K[:n, :n], K[n:, :n], K[n:, n:], y, sigma2=0.1)
    assert large.cov[0, 0] <= small.cov[0, 0] + 1e-10
