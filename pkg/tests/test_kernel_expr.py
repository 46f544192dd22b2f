import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autogp import autodiff as ad
from autogp.autodiff import Tensor
from autogp.kernel_expr import (EDGE_PLUS, EDGE_SKIP, ArchWeights, KernelParseError, Leaf, Product,
                                RelaxedKernel, Sum, copy_expr, discretize, distribute, format_expr, kinds_in,
                                leaves, parse_expr, relaxed_inter_block, relaxed_intra_block, sum_of_products,
                                sums)
from autogp.kernels import BasicKernelKind, KernelParams, init_params

SE, PER, LIN, RQ = BasicKernelKind.SE, BasicKernelKind.PER, BasicKernelKind.LIN, BasicKernelKind.RQ
KINDS = [SE, PER, LIN, RQ]


def leaf(kind, rng=None):
    raw = np.zeros(3) if rng is None else rng.uniform(-0.5, 0.5, 3)
    return Leaf(kind, KernelParams(Tensor(raw, requires_grad=True)))


def logits(p_plus: float) -> np.ndarray:
    """Edge logits giving softmax weight ``p_plus`` on '+'."""
    return np.array([math.log(p_plus), math.log(1.0 - p_plus)])


def ones(n):
    return Tensor(np.ones((n, n)))


# -- relaxed blocks ------------------------------------------------------------
def test_uniform_alpha_halves_constant_kernels():
    k = relaxed_intra_block(np.zeros((2, 2)), [ones(3), ones(3)])
    np.testing.assert_allclose(k.data, 1.0)


def test_skip_favoured_block_vanishes():
    alpha = np.tile([-30.0, 30.0], (2, 1))
    k = relaxed_intra_block(alpha, [ones(3), ones(3)])
    assert np.abs(k.data).max() < 1e-20


def test_second_block_multiplies_previous():
    rng = np.random.default_rng(0)
    x = rng.normal(size=3)
    se, per = leaf(SE), leaf(PER)
    k1 = se.gram(x)
    alpha2 = np.array([[-40.0, 40.0], [40.0, -40.0]])  # only PER enters block 2
    k2 = relaxed_intra_block(alpha2, [se.gram(x), per.gram(x)], prev_block=k1)
    np.testing.assert_allclose(k2.data, se.gram(x).data * per.gram(x).data, rtol=1e-12)


def test_intra_block_checks_shape():
    with pytest.raises(ad.ShapeError):
        relaxed_intra_block(np.zeros((3, 2)), [ones(2), ones(2)])


def test_inter_block_cases():
    a, b = Tensor(np.full((2, 2), 2.0)), Tensor(np.full((2, 2), 4.0))
    np.testing.assert_allclose(relaxed_inter_block(np.array([[40.0, -40.0]]), [a]).data, a.data)
    np.testing.assert_allclose(relaxed_inter_block(np.zeros((2, 2)), [a, b]).data, 0.5 * a.data + 0.5 * b.data)
    beta = np.vstack([logits(0.7), [-40.0, 40.0]])
    np.testing.assert_allclose(relaxed_inter_block(beta, [a, b]).data, 0.7 * a.data, rtol=1e-12)


def test_arch_weights_validation():
    with pytest.raises(ValueError):
        ArchWeights.uniform(4, 0)
    w = ArchWeights.uniform(4, 3)
    assert w.alpha.shape == (3, 4, 2) and w.beta.shape == (3, 2) and w.R == 3
    np.testing.assert_allclose(ad.softmax(w.alpha, -1).data.sum(-1), 1.0)


# -- discretize ----------------------------------------------------------------
def relaxed(kinds, R, alpha, beta):
    rk = RelaxedKernel([leaf(k) for k in kinds], ArchWeights(Tensor(alpha), Tensor(beta)))
    return rk


def test_discretize_single_kernel():
    alpha = np.array([[logits(0.7), logits(0.3)]])  # k1 '+', k2 skip
    beta = np.array([logits(0.9)])
    assert format_expr(discretize(relaxed([SE, PER], 1, alpha, beta))) == "SE"


def test_discretize_distributes_blocks():
    alpha = np.array([[logits(0.9), logits(0.9), logits(0.1)],
                      [logits(0.1), logits(0.1), logits(0.9)]])
    beta = np.array([logits(0.9), logits(0.9)])
    expr = discretize(relaxed([SE, PER, LIN], 2, alpha, beta))
    assert format_expr(expr) == "SE + PER + SE*LIN + PER*LIN"


def test_discretize_all_skip_falls_back_to_se():
    alpha = np.zeros((2, 2, 2))
    beta = np.tile([-1.0, 1.0], (2, 1))
    assert format_expr(discretize(relaxed([PER, LIN], 2, alpha, beta))) == "SE"


def test_discretize_ties_prefer_plus():
    expr = discretize(relaxed([PER], 1, np.zeros((1, 1, 2)), np.zeros((1, 2))))
    assert format_expr(expr) == "PER"


def test_discretize_all_skip_block_ends_chain():
    alpha = np.array([[logits(0.9)], [logits(0.1)], [logits(0.9)]])
    beta = np.array([logits(0.9)] * 3)
    assert format_expr(discretize(relaxed([PER], 3, alpha, beta))) == "PER"


def test_discretize_merges_duplicate_products():
    alpha = np.array([[logits(0.9), logits(0.9)], [logits(0.9), logits(0.9)]])
    beta = np.array([logits(0.1), logits(0.9)])
    expr = discretize(relaxed([SE, PER], 2, alpha, beta))
    assert format_expr(expr) == "SE^2 + SE*PER + PER^2"


def test_discretize_copies_learned_parameters():
    rng = np.random.default_rng(1)
    rk = RelaxedKernel([leaf(SE, rng), leaf(PER, rng)], ArchWeights.uniform(2, 1))
    expr = discretize(rk)
    for lf, basic in zip(leaves(expr), rk.basics):
        np.testing.assert_array_equal(lf.params.raw.data, basic.params.raw.data)
        assert lf.params.raw is not basic.params.raw
    np.testing.assert_allclose(expr.zeta, 0.5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), R=st.integers(1, 3))
def test_relaxed_converges_to_discrete(seed, R):
    rng = np.random.default_rng(seed)
    n = 3
    signs = rng.integers(0, 2, size=(R, n))
    signs[:, 0] = 1  # keep every block non-empty
    margin = 40.0
    alpha = np.stack([[[margin, 0.0] if s else [0.0, margin] for s in row] for row in signs])
    bsel = rng.integers(0, 2, size=R)
    bsel[-1] = 1
    beta = np.array([[margin, 0.0] if s else [0.0, margin] for s in bsel])
    rk = RelaxedKernel([leaf(k, rng) for k in KINDS[:n]], ArchWeights(Tensor(alpha), Tensor(beta)))
    x = rng.normal(size=5)
    expr = discretize(rk)
    # duplicate products are merged, so compare against the unmerged relaxed value
    # via per-term multiplicities: rebuild the expected sum from the blocks directly
    grams = [b.gram(x).data for b in rk.basics]
    expected, chain = np.zeros((5, 5)), np.ones((5, 5))
    for r in range(R):
        chain = chain * sum(grams[i] for i in range(n) if signs[r, i])
        if bsel[r]:
            expected = expected + chain
    np.testing.assert_allclose(rk.gram(x).data, expected, rtol=1e-6, atol=1e-9)
    # structure: every distributed term of the expected kernel appears in the discretized sum
    got = {tuple(sorted(lf.kind for lf in t)) for t in distribute(expr)}
    want = set()
    chain_terms = [()]
    for r in range(R):
        chain_terms = [t + (KINDS[i],) for t in chain_terms for i in range(n) if signs[r, i]]
        if bsel[r]:
            want |= {tuple(sorted(t)) for t in chain_terms}
    assert got == want


def test_relaxed_to_discrete_values_without_duplicates():
    rng = np.random.default_rng(5)
    alpha = np.array([[[30.0, 0.0], [30.0, 0.0], [0.0, 30.0]], [[0.0, 30.0], [0.0, 30.0], [30.0, 0.0]]])
    beta = np.array([[30.0, 0.0], [30.0, 0.0]])
    rk = RelaxedKernel([leaf(k, rng) for k in (SE, PER, LIN)], ArchWeights(Tensor(alpha), Tensor(beta)))
    expr = discretize(rk)
    for s in sums(expr):
        s.raw_zeta.data[:] = 0.0  # zeta = 1 for a like-for-like comparison
    x = rng.normal(size=6)
    np.testing.assert_allclose(expr.gram(x).data, rk.gram(x).data, rtol=1e-6, atol=1e-9)


# -- algebra -------------------------------------------------------------------
def _unit_zeta(expr):
    for s in sums(expr):
        s.raw_zeta.data[:] = 0.0
    return expr


def test_distribution_identity():
    rng = np.random.default_rng(2)
    k1, k2, k3 = leaf(SE, rng), leaf(PER, rng), leaf(LIN, rng)
    nested = _unit_zeta(Sum([k1, k2, Product([Sum([k1, k2]), k3])]))
    flat = _unit_zeta(sum_of_products(distribute(nested)))
    assert format_expr(flat) == "SE + PER + SE*LIN + PER*LIN"
    x = rng.normal(size=7)
    np.testing.assert_allclose(nested.gram(x).data, flat.gram(x).data, rtol=1e-12, atol=1e-12)


def random_expr(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        return leaf(KINDS[int(rng.integers(4))], rng)
    children = [random_expr(rng, depth - 1) for _ in range(int(rng.integers(2, 4)))]
    if rng.random() < 0.5:
        return Product(children)
    return Sum(children, Tensor(rng.uniform(-1, 1, len(children)), requires_grad=True))


@pytest.mark.parametrize("seed", range(40))
def test_random_expression_gram_is_psd(seed):
    rng = np.random.default_rng(seed)
    expr = random_expr(rng, 3)
    x = rng.uniform(-3, 3, int(rng.integers(2, 9)))
    assert np.linalg.eigvalsh(expr.gram(x).data).min() >= -1e-8


def test_zeta_positive_by_construction():
    s = Sum([leaf(SE), leaf(PER)], Tensor([-50.0, 3.0]))
    assert (s.zeta > 0).all()
    assert np.allclose(Sum([leaf(SE), leaf(PER), leaf(LIN)]).zeta, 1.0 / 3.0)


# -- text form -----------------------------------------------------------------
@pytest.mark.parametrize("text,canon", [
    ("SE + PER + SE*PER + PER^2 + SE^2", "SE + PER + SE*PER + PER^2 + SE^2"),
    ("se+per", "SE + PER"),
    ("SE×PER", "SE*PER"),
    ("(SE + RQ)*PER", "(SE + RQ)*PER"),
    ("LIN^3", "LIN^3"),
    ("((SE))", "SE"),
])
def test_parse_and_format(text, canon):
    assert format_expr(parse_expr(text)) == canon


def test_parse_power_creates_independent_leaves():
    expr = parse_expr("PER^2")
    a, b = leaves(expr)
    assert a.params.raw is not b.params.raw


@pytest.mark.parametrize("text,pos", [("SE + ", 5), ("SE + FOO", 5), ("SE * (PER", 9), ("", 0), ("SE $ PER", 3),
                                      ("SE^0", 3), ("SE PER", 3)])
def test_parse_errors_report_position(text, pos):
    with pytest.raises(KernelParseError) as info:
        parse_expr(text)
    assert info.value.position == pos


def test_round_trip_format_parse():
    rng = np.random.default_rng(11)
    for _ in range(30):
        expr = random_expr(rng, 3)
        text = format_expr(expr)
        assert format_expr(parse_expr(text)) == format_expr(parse_expr(format_expr(parse_expr(text))))
        assert sorted(kinds_in(parse_expr(text))) == sorted(kinds_in(expr))


def test_copy_expr_is_deep():
    e = parse_expr("SE + PER*LIN")
    c = copy_expr(e)
    leaves(c)[0].params.raw.data[0] = 5.0
    assert leaves(e)[0].params.raw.data[0] != 5.0


def test_init_from_locations_in_parse():
    x = np.array([0.0, 10.0])
    per = leaves(parse_expr("PER", x))[0]
    assert per.params.p == pytest.approx(2.5)


def test_relaxed_build_balances_amplitudes():
    x = np.linspace(-3, 3, 20)
    rk = RelaxedKernel.build(KINDS, 2, x)
    for b in rk.basics:
        assert np.mean(np.diag(b.gram(x).data)) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        RelaxedKernel.build([], 2)
