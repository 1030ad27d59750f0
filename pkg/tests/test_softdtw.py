import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikealign import autodiff as ad
from spikealign.autodiff import ShapeError, Tensor
from spikealign.gradcheck import numeric_grad, rel_error
from spikealign.softdtw import (
    SdtwConfig,
    pairwise_sq_dists,
    sdtw_backward,
    sdtw_batched,
    sdtw_forward,
    sdtw_loss,
    sdtw_value_and_grad,
    soft_min,
)


def brute_force_dtw(d):
    """Exhaustive minimum over all monotone alignment paths (no DP reuse)."""
    ta, tb = d.shape
    best = [np.inf]

    def walk(i, j, acc):
        acc += d[i, j]
        if i == ta - 1 and j == tb - 1:
            best[0] = min(best[0], acc)
            return
        if i + 1 < ta:
            walk(i + 1, j, acc)
        if j + 1 < tb:
            walk(i, j + 1, acc)
        if i + 1 < ta and j + 1 < tb:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


def random_pair(rng, max_len=8, max_dim=5):
    ta = int(rng.integers(1, max_len + 1))
    tb = int(rng.integers(1, max_len + 1))
    c = int(rng.integers(1, max_dim + 1))
    return rng.normal(size=(ta, c)), rng.normal(size=(tb, c))


def test_soft_min_equal_args_identity():
    for g in (0.1, 1.0, 7.0):
        assert soft_min(2.5, 2.5, 2.5, g) == pytest.approx(2.5 - g * np.log(3.0))


def test_soft_min_hard_limit():
    assert soft_min(1.0, 4.0, 9.0, 1e-6) == pytest.approx(1.0, abs=1e-4)


def test_soft_min_hand_value():
    assert soft_min(0.0, 10.0, 10.0, 1.0) == pytest.approx(
        -np.log(1.0 + 2.0 * np.exp(-10.0))
    )
    assert soft_min(0.0, 10.0, 10.0, 1.0) == pytest.approx(-9.08e-5, rel=1e-3)


def test_soft_min_rejects_bad_smoothing():
    with pytest.raises(ValueError):
        soft_min(1.0, 2.0, 3.0, 0.0)


def test_single_cell_equals_squared_distance():
    rng = np.random.default_rng(20)
    a = rng.normal(size=(1, 4))
    b = rng.normal(size=(1, 4))
    for g in (1e-6, 0.1, 1.0, 10.0):
        value, _ = sdtw_forward(a, b, SdtwConfig(smoothing=g))
        assert value == pytest.approx(float(np.sum((a - b) ** 2)), rel=1e-12)


def test_identical_sequences_hard_limit_is_zero():
    rng = np.random.default_rng(21)
    a = rng.normal(size=(5, 3))
    value, _ = sdtw_forward(a, a.copy(), SdtwConfig(smoothing=1e-6))
    assert abs(value) < 1e-6


def test_value_matches_brute_force_paths():
    rng = np.random.default_rng(22)
    for _ in range(100):
        a, b = random_pair(rng, max_len=7, max_dim=3)
        d = pairwise_sq_dists(a, b)
        value, _ = sdtw_forward(a, b, SdtwConfig(smoothing=1e-6))
        assert abs(value - brute_force_dtw(d)) < 1e-4


def test_soft_value_below_hard_with_bounded_gap():
    rng = np.random.default_rng(23)
    for g in (0.1, 1.0, 5.0):
        for _ in range(20):
            a, b = random_pair(rng, max_len=6, max_dim=3)
            hard = brute_force_dtw(pairwise_sq_dists(a, b))
            soft, _ = sdtw_forward(a, b, SdtwConfig(smoothing=g))
            assert soft <= hard + 1e-10
            assert hard - soft <= g * np.log(3.0) * (a.shape[0] + b.shape[0])


def test_gradient_identical_sequences_vanishes_at_small_smoothing():
    """a == b is a stationary point once alignment mass sits on the diagonal.

    At larger smoothing the off-diagonal mass makes the true gradient
    nonzero; finite differences confirm the analytic value either way.
    """
    rng = np.random.default_rng(24)
    a = rng.normal(size=(4, 3))
    _, grad = sdtw_value_and_grad(a, a.copy(), SdtwConfig(smoothing=1e-3))
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)
    cfg = SdtwConfig(smoothing=1.0)
    _, grad1 = sdtw_value_and_grad(a, a.copy(), cfg)
    num = numeric_grad(lambda arr: sdtw_forward(arr, a.copy(), cfg)[0], a.copy(), h=1e-6)
    assert np.abs(grad1).max() > 0.0
    assert rel_error(grad1, num) < 1e-4


def test_gradient_single_cell_chain_rule():
    a = np.array([[1.0, -2.0]])
    b = np.array([[0.5, 0.5]])
    _, grad = sdtw_value_and_grad(a, b, SdtwConfig(smoothing=1.0))
    np.testing.assert_allclose(grad, 2.0 * (a - b), rtol=1e-12)


@pytest.mark.parametrize("smoothing", [0.1, 1.0, 10.0])
def test_gradient_matches_finite_differences(smoothing):
    rng = np.random.default_rng(25)
    cfg = SdtwConfig(smoothing=smoothing)
    for _ in range(5):
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(7, 4))
        _, grad = sdtw_value_and_grad(a, b, cfg)
        num = numeric_grad(lambda arr: sdtw_forward(arr, b, cfg)[0], a, h=1e-5)
        assert rel_error(grad, num) < 1e-4


def test_backward_rejects_stale_table():
    rng = np.random.default_rng(26)
    a = rng.normal(size=(3, 2))
    b = rng.normal(size=(4, 2))
    _, table = sdtw_forward(a, b, SdtwConfig())
    with pytest.raises(ValueError, match="stale"):
        sdtw_backward(table, a + 1.0, b, SdtwConfig())


def test_input_validation():
    cfg = SdtwConfig()
    with pytest.raises(ShapeError, match="empty"):
        sdtw_forward(np.zeros((0, 3)), np.zeros((2, 3)), cfg)
    with pytest.raises(ShapeError, match="feature"):
        sdtw_forward(np.zeros((2, 3)), np.zeros((2, 4)), cfg)
    with pytest.raises(ValueError):
        SdtwConfig(smoothing=-1.0)


@settings(max_examples=25, deadline=None, derandomize=True)
@given(st.integers(0, 2 ** 31 - 1))
def test_symmetry_in_the_two_sequences(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, max_len=5, max_dim=3)
    cfg = SdtwConfig(smoothing=float(rng.uniform(0.05, 3.0)))
    vab, _ = sdtw_forward(a, b, cfg)
    vba, _ = sdtw_forward(b, a, cfg)
    assert vab == pytest.approx(vba, rel=1e-10, abs=1e-10)


@settings(max_examples=25, deadline=None, derandomize=True)
@given(st.integers(0, 2 ** 31 - 1))
def test_gradient_translation_equivariance(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, max_len=5, max_dim=3)
    shift = rng.normal(size=a.shape[1])
    cfg = SdtwConfig(smoothing=1.0)
    _, g0 = sdtw_value_and_grad(a, b, cfg)
    _, g1 = sdtw_value_and_grad(a + shift, b + shift, cfg)
    np.testing.assert_allclose(g0, g1, atol=1e-9)


def test_value_can_be_negative_at_large_smoothing():
    a = np.zeros((4, 2))
    value, _ = sdtw_forward(a, a.copy(), SdtwConfig(smoothing=10.0))
    assert value < 0.0


def test_batch_of_one_equals_single_call_bitwise():
    rng = np.random.default_rng(27)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(6, 3))
    cfg = SdtwConfig(smoothing=0.7)
    v1, g1 = sdtw_value_and_grad(a, b, cfg)
    vb, gb = sdtw_batched([a], [b], cfg)
    assert float(vb[0]) == v1
    np.testing.assert_array_equal(gb[0], g1)


def test_batched_equals_looped_singles():
    rng = np.random.default_rng(28)
    cfg = SdtwConfig(smoothing=1.3)
    # mixed lengths force the generic path; equal lengths take the fast path
    for pairs in (
        [random_pair(rng, 6, 3) for _ in range(8)],
        [(rng.normal(size=(4, 3)), rng.normal(size=(5, 3))) for _ in range(8)],
    ):
        a_list = [p[0] for p in pairs]
        b_list = [p[1] for p in pairs]
        values, grads = sdtw_batched(a_list, b_list, cfg)
        for k, (a, b) in enumerate(pairs):
            v, g = sdtw_value_and_grad(a, b, cfg)
            assert values[k] == pytest.approx(v, rel=1e-10)
            np.testing.assert_allclose(grads[k], g, rtol=1e-9, atol=1e-12)


def test_batch_shuffle_permutes_outputs():
    rng = np.random.default_rng(29)
    pairs = [(rng.normal(size=(3, 2)), rng.normal(size=(4, 2))) for _ in range(6)]
    cfg = SdtwConfig()
    perm = rng.permutation(6)
    v0, _ = sdtw_batched([p[0] for p in pairs], [p[1] for p in pairs], cfg)
    v1, _ = sdtw_batched(
        [pairs[i][0] for i in perm], [pairs[i][1] for i in perm], cfg
    )
    np.testing.assert_allclose(v1, v0[perm])


def test_batch_size_mismatch_raises():
    with pytest.raises(ShapeError, match="batch"):
        sdtw_batched([np.zeros((2, 2))], [], SdtwConfig())


def test_band_wide_enough_matches_unbanded():
    rng = np.random.default_rng(30)
    a = rng.normal(size=(5, 2))
    b = rng.normal(size=(7, 2))
    v_full, _ = sdtw_forward(a, b, SdtwConfig(smoothing=0.5))
    v_band, _ = sdtw_forward(a, b, SdtwConfig(smoothing=0.5, band=7))
    assert v_band == pytest.approx(v_full, rel=1e-12)
    with pytest.raises(ValueError, match="band"):
        sdtw_forward(a, b, SdtwConfig(smoothing=0.5, band=1))


def test_loss_tape_hook_gradient_and_normalization():
    rng = np.random.default_rng(31)
    batch, ta, tb, c = 3, 4, 6, 2
    a = rng.normal(size=(batch, ta, c))
    b_list = [rng.normal(size=(tb, c)) for _ in range(batch)]
    cfg = SdtwConfig(smoothing=1.0, length_normalize=True)
    at = Tensor(a.copy(), requires_grad=True)
    loss = sdtw_loss(at, b_list, cfg)
    expect = np.mean(
        [sdtw_value_and_grad(a[k], b_list[k], cfg)[0] / (ta + tb) for k in range(batch)]
    )
    assert float(loss.data) == pytest.approx(expect, rel=1e-6)
    loss.backward()

    def full(arr):
        vals = [sdtw_forward(arr[k], b_list[k], cfg)[0] / (ta + tb) for k in range(batch)]
        return float(np.mean(vals))

    num = numeric_grad(full, a, h=1e-5)
    assert rel_error(at.grad, num) < 1e-4


def test_loss_unnormalized_mode():
    rng = np.random.default_rng(32)
    a = rng.normal(size=(2, 3, 2))
    b_list = [rng.normal(size=(3, 2)) for _ in range(2)]
    cfg = SdtwConfig(smoothing=1.0, length_normalize=False)
    loss = sdtw_loss(Tensor(a), b_list, cfg)
    expect = np.mean([sdtw_forward(a[k], b_list[k], cfg)[0] for k in range(2)])
    assert float(loss.data) == pytest.approx(expect, rel=1e-6)
