import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from autogp import autodiff as ad
from autogp.autodiff import Tensor

from conftest import central_fd, check_grad, rel_err

finite = st.floats(-2.0, 2.0, allow_nan=False)


def leaf(x):
    return Tensor(np.asarray(x, float), requires_grad=True)


def test_add_values():
    np.testing.assert_array_equal(ad.add([1, 2], [3, 4]).data, [4, 6])


def test_cholesky_one_by_one():
    np.testing.assert_array_equal(ad.cholesky(Tensor([[4.0]])).data, [[2.0]])


def test_logdet_from_cholesky_diag():
    L = ad.cholesky(Tensor([[4.0, 0.0], [0.0, 9.0]]))
    assert ad.logdet_from_cholesky(L).item() == pytest.approx(math.log(36.0), abs=1e-12)


def test_square_grad():
    x = leaf(3.0)
    grads = ad.backward(ad.square(x))
    assert grads[x] == pytest.approx(6.0)


def test_logdet_grad_matches_fd():
    theta = leaf([0.3, -0.2])

    def build():
        a, b = ad.exp(theta[0]), ad.exp(theta[1])
        K = ad.stack([ad.stack([a + 1.0, b * 0.5]), ad.stack([b * 0.5, a * b + 2.0])])
        return ad.logdet_from_cholesky(ad.cholesky(K))

    assert check_grad(build, [theta]) < 1e-5


def test_uniform_softmax_weighted_sum_has_equal_grads():
    logits = leaf(np.zeros(3))
    w = ad.softmax(logits)
    root = ad.tsum(w * np.ones(3))
    g = ad.backward(root)[logits]
    assert np.allclose(g, g[0])


def test_backward_requires_scalar_root():
    x = leaf([1.0, 2.0])
    with pytest.raises(ad.ShapeError):
        ad.backward(x * 2.0)


def test_shape_mismatch_raises():
    with pytest.raises(ad.ShapeError):
        ad.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        ad.cholesky(Tensor([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_non_pd_signals_jitter():
    with pytest.raises(ad.NotPositiveDefiniteError):
        ad.cholesky(Tensor([[1.0, 2.0], [2.0, 1.0]]))


def test_backward_overwrites_grad():
    x = leaf(2.0)
    ad.backward(ad.square(x))
    ad.backward(ad.square(x))
    assert x.grad == pytest.approx(4.0)


# -- Adam ----------------------------------------------------------------------
def test_adam_zero_grad_keeps_params():
    p = np.array([1.0, -2.0])
    ad.adam_step([p], [np.zeros(2)], ad.AdamState(), lr=0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_opposes_gradient():
    p = np.array([0.0, 0.0])
    state = ad.AdamState()
    ad.adam_step([p], [np.array([3.0, -0.01])], state, lr=0.1)
    assert p[0] < 0 < p[1]
    assert state.step == 1


def test_adam_minimises_square():
    x = leaf(1.0)
    opt = ad.Adam([x], lr=0.1)
    for _ in range(100):
        opt.step(ad.backward(ad.square(x)))
    assert abs(x.item()) < 0.05


def test_adam_rejects_nonpositive_lr():
    with pytest.raises(ValueError):
        ad.adam_step([np.zeros(1)], [np.zeros(1)], ad.AdamState(), lr=0.0)


def test_adam_step_decay():
    opt = ad.Adam([leaf(1.0)], lr=1.0, decay=0.5, step_size=2)
    lrs = []
    for _ in range(5):
        lrs.append(opt.current_lr())
        opt.step({})
    assert lrs == [1.0, 1.0, 0.5, 0.5, 0.25]


# -- finite-difference property ------------------------------------------------
UNARY = {
    "exp": ad.exp, "sin": ad.sin, "cos": ad.cos, "tanh": ad.tanh, "square": ad.square,
    "softplus": ad.softplus, "neg": ad.neg,
    "log": lambda a: ad.log(ad.square(a) + 0.5),
    "sqrt": lambda a: ad.sqrt(ad.square(a) + 0.5),
    "power": lambda a: ad.power(ad.square(a) + 0.5, 1.5),
    "softmax0": lambda a: ad.softmax(a, axis=0),
    "softmax1": lambda a: ad.softmax(a, axis=-1),
    "transpose": ad.transpose,
    "reshape": lambda a: ad.reshape(a, (-1,)),
    "mean": lambda a: ad.mean(a, axis=0),
    "getitem": lambda a: a[1:, ::2],
    "concat": lambda a: ad.concat([a, ad.square(a)], axis=1),
    "stack": lambda a: ad.stack([a, ad.exp(a)], axis=0),
    "broadcast": lambda a: ad.broadcast_to(ad.tsum(a, axis=0, keepdims=True), a.shape),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@settings(max_examples=15, deadline=None)
@given(x=hnp.arrays(np.float64, (3, 2), elements=finite), w=hnp.arrays(np.float64, (3, 2), elements=finite))
def test_unary_ops_match_fd(name, x, w):
    a = leaf(x)
    op = UNARY[name]

    def build():
        out = op(a)
        return ad.tsum(out * np.resize(w, out.shape))

    assert check_grad(build, [a]) < 1e-4


@settings(max_examples=20, deadline=None)
@given(x=hnp.arrays(np.float64, (3, 2), elements=finite), y=hnp.arrays(np.float64, (2, 4), elements=finite),
       z=hnp.arrays(np.float64, (1, 2), elements=finite))
def test_binary_ops_match_fd(x, y, z):
    a, b, c = leaf(x), leaf(y), leaf(z)

    def build():
        m = ad.matmul(a, b)
        e = (a + c) * (a - c) / (ad.square(c) + 1.0)
        return ad.tsum(ad.sin(m)) + ad.tsum(e)

    assert check_grad(build, [a, b, c]) < 1e-4


def _spd(rng, n):
    A = rng.uniform(-2, 2, (n, n))
    return A @ A.T + n * np.eye(n)


@pytest.mark.parametrize("seed", range(10))
def test_cholesky_solve_logdet_match_fd(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    A = leaf(_spd(rng, n))
    y = leaf(rng.uniform(-2, 2, n))
    W = rng.uniform(-1, 1, (n, n))

    def build():
        S = 0.5 * (A + ad.transpose(A))
        L = ad.cholesky(S)
        alpha = ad.triangular_solve(L, y)
        beta = ad.triangular_solve(L, alpha, trans=True)
        return ad.tsum(ad.square(alpha)) + ad.logdet_from_cholesky(L) + ad.tsum(beta) + ad.tsum(L * W)

    assert check_grad(build, [A, y]) < 1e-4


@settings(max_examples=50, deadline=None)
@given(x=hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    s = ad.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_graph_evaluation_deterministic():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 4))

    def run():
        a = leaf(x)
        root = ad.tsum(ad.tanh(a @ a) * ad.exp(a))
        return root.item(), ad.backward(root)[a]

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2 and np.array_equal(g1, g2)


def test_backward_releases_graph():
    a = leaf([1.0, 2.0])
    out = ad.tsum(ad.exp(a) * 2.0)
    ad.backward(out)
    assert out._parents == ()


def test_central_fd_helper_on_cubic():
    x = np.array([1.5])
    g = central_fd(lambda: float(x[0] ** 3), x)
    assert rel_err(g, [3 * 1.5**2]) < 1e-8


def test_rowwise_matmul_matches_matmul_and_loop():
    rng = np.random.default_rng(0)
    a = ad.Tensor(rng.normal(size=(37, 70)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(70, 19)), requires_grad=True)
    out = ad.rowwise_matmul(a, b).data
    np.testing.assert_allclose(out, a.data @ b.data, rtol=1e-12)
    loop = np.stack([ad.rowwise_matmul(a.data[i:i + 1], b).data[0] for i in range(37)])
    assert np.array_equal(out, loop)
    W = rng.normal(size=(37, 19))
    g = ad.backward(ad.tsum(ad.rowwise_matmul(a, b) * W))
    np.testing.assert_allclose(g[a], W @ b.data.T, rtol=1e-12)
    np.testing.assert_allclose(g[b], a.data.T @ W, rtol=1e-12)
    with pytest.raises(ad.ShapeError):
        ad.rowwise_matmul(a, a)
