import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtmask.net.layers import (
    BilinearUpsample,
    MaxPool2,
    attention_forward,
    bilinear_matrix,
    conv2d_forward,
    sigmoid,
    softmax,
)

from .gradcheck import LAYER_CHECKS, check_model
from .oracles import naive_attention, naive_conv, naive_matmul


def test_conv_all_ones():
    out, _ = conv2d_forward(np.ones((1, 3, 3, 1)), np.ones((2, 2, 1, 1)))
    assert out.shape == (1, 2, 2, 1)
    assert (out == 4).all()


def test_conv_identity_kernel():
    x = np.random.default_rng(0).random((2, 4, 5, 3))
    k = np.eye(3).reshape(1, 1, 3, 3)
    out, _ = conv2d_forward(x, k)
    assert np.array_equal(out, x)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.sampled_from([1, 2, 3]),
    st.sampled_from([1, 2]),
    st.sampled_from([0, 1]),
)
def test_conv_matches_loops_exactly(seed, k, stride, padding):
    # small integers: every product and partial sum is exact in float64
    rng = np.random.default_rng(seed)
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = rng.integers(-4, 5, (1, 4, 5, cin)).astype(np.float64)
    w = rng.integers(-3, 4, (k, k, cin, cout)).astype(np.float64)
    out, _ = conv2d_forward(x, w, stride=stride, padding=padding)
    assert np.array_equal(out[0], naive_conv(x[0], w, stride, padding))


def test_conv_random_float_close_to_loops():
    rng = np.random.default_rng(5)
    x, w = rng.standard_normal((1, 4, 4, 2)), rng.standard_normal((3, 3, 2, 4))
    out, _ = conv2d_forward(x, w)
    assert np.allclose(out[0], naive_conv(x[0], w), rtol=1e-12, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)))
    with pytest.raises(ValueError):
        conv2d_forward(np.zeros((1, 2, 2, 1)), np.zeros((3, 3, 1, 1)))


def test_attention_single_token():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 4))
    wq, wk, wv = rng.standard_normal((3, 4, 3))
    out, _ = attention_forward(x, wq, wk, wv)
    assert np.allclose(out, x @ wv, rtol=0, atol=1e-15)


def test_attention_identical_rows():
    rng = np.random.default_rng(2)
    x = np.repeat(rng.standard_normal((1, 5)), 2, axis=0)
    out, _ = attention_forward(x, *rng.standard_normal((3, 5, 5)))
    assert np.array_equal(out[0], out[1])


@pytest.mark.parametrize("seed", range(5))
def test_attention_matches_naive(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 4))
    wq, wk, wv = rng.standard_normal((4, 2)), rng.standard_normal((4, 2)), rng.standard_normal((4, 3))
    out, _ = attention_forward(x, wq, wk, wv)
    assert np.allclose(out, naive_attention(x, wq, wk, wv), rtol=1e-12, atol=1e-12)


def test_attention_projections_exact_on_integers():
    rng = np.random.default_rng(3)
    x = rng.integers(-3, 4, (3, 4)).astype(np.float64)
    w = rng.integers(-3, 4, (4, 2)).astype(np.float64)
    _, (q, k, v, p) = attention_forward(x, w, w, w)
    assert np.array_equal(q, naive_matmul(x, w))
    assert np.allclose(p.sum(axis=-1), 1.0)


def test_attention_weight_shape_errors():
    with pytest.raises(ValueError):
        attention_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        attention_forward(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((3, 2)))


def test_maxpool_ties_route_to_first():
    x = np.ones((1, 2, 2, 1))
    pool = MaxPool2()
    assert pool.forward(x).item() == 1.0
    dx = pool.backward(np.ones((1, 1, 1, 1)))
    assert dx.sum() == 1.0 and dx[0, 0, 0, 0] == 1.0


def test_bilinear_rows_sum_to_one():
    m = bilinear_matrix(4, 8)
    assert m.shape == (32, 4)
    assert np.allclose(m.sum(axis=1), 1.0)


def test_upsample_constant_is_constant():
    x = np.full((1, 2, 3, 2), 0.7)
    assert np.allclose(BilinearUpsample(4).forward(x), 0.7)


def test_sigmoid_stable():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert s.tolist() == [0.0, 0.5, 1.0]
    assert np.isfinite(softmax(np.array([[1e4, -1e4]]))).all()


@pytest.mark.parametrize("name", sorted(LAYER_CHECKS))
def test_layer_gradients(name):
    worst = max(LAYER_CHECKS[name](np.random.default_rng(1000 + s)) for s in range(20))
    assert worst < 1e-4


def test_full_model_gradient():
    assert max(check_model(np.random.default_rng(s)) for s in range(3)) < 1e-4
