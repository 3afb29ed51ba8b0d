import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memc import tensor as T
from oracles import conv2d_loops


def test_conv_scalar_weight_doubles():
    out = T.conv2d(np.ones((1, 1, 3, 3)), np.full((1, 1, 1, 1), 2.0), np.zeros(1))
    np.testing.assert_array_equal(out, np.full((1, 1, 3, 3), 2.0))


def test_conv_centered_delta_is_identity():
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(T.conv2d(x, w, np.zeros(1), pad=1), x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_matches_loops(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = T.conv2d(x, w, b, stride=stride, pad=pad)
    np.testing.assert_allclose(got, conv2d_loops(x, w, b, stride, pad), rtol=0, atol=1e-12)


def test_conv_is_cross_correlation():
    # an asymmetric kernel picks the right-hand neighbour, no flip
    x = np.arange(5.0).reshape(1, 1, 1, 5)
    w = np.array([0.0, 0.0, 1.0]).reshape(1, 1, 1, 3)
    out = T.conv2d(x, w, pad=0)
    np.testing.assert_array_equal(out[0, 0, 0], [2.0, 3.0, 4.0])


def test_conv_backward_against_adjoint():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    g = rng.normal(size=(1, 3, 3, 3))
    gx, gw, gb = T.conv2d_backward(x, w, g, stride=2, pad=1)
    # <conv(x), g> is linear in x and in w
    lhs = np.sum(T.conv2d(x, w, stride=2, pad=1) * g)
    assert np.isclose(np.sum(gx * x), lhs, rtol=1e-12)
    assert np.isclose(np.sum(gw * w), lhs, rtol=1e-12)
    np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)), rtol=1e-14)


def test_conv_channel_mismatch():
    with pytest.raises(T.ShapeError):
        T.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


def test_relu_signs():
    out = T.relu(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3))
    np.testing.assert_array_equal(out.ravel(), [0.0, 0.0, 2.0])


def test_concat_order():
    a = np.zeros((1, 2, 3, 3))
    b = np.ones((1, 3, 3, 3))
    out = T.concat([a, b])
    assert out.shape == (1, 5, 3, 3)
    assert np.all(out[:, :2] == 0) and np.all(out[:, 2:] == 1)


def test_concat_spatial_mismatch():
    with pytest.raises(T.ShapeError):
        T.concat([np.zeros((1, 1, 3, 3)), np.zeros((1, 1, 3, 4))])


def test_pool_then_upsample_constant():
    x = np.full((1, 2, 4, 6), 0.37)
    np.testing.assert_array_equal(T.upsample2(T.avgpool2(x)), x)


def test_add_shape_mismatch_reports_dim():
    with pytest.raises(T.ShapeError) as info:
        T.add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))
    assert info.value.dim == "width"


def test_offset_row_major_and_bounds():
    shape = (2, 3, 4, 5)
    assert T.offset(shape, 1, 2, 3, 4) == np.ravel_multi_index((1, 2, 3, 4), shape)
    with pytest.raises(IndexError):
        T.offset(shape, 0, 3, 0, 0)


def test_as_tensor_rank():
    with pytest.raises(T.ShapeError):
        T.as_tensor(np.zeros((3, 3)))


def test_flips_are_involutions():
    x = np.random.default_rng(0).normal(size=(1, 2, 3, 4))
    np.testing.assert_array_equal(T.hflip(T.hflip(x)), x)
    np.testing.assert_array_equal(T.vflip(T.vflip(x)), x)
    np.testing.assert_array_equal(T.hflip(x)[..., 0], x[..., -1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_linear_in_input(seed, a, b):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=(2, 1, 2, 5, 5))
    w = rng.normal(size=(2, 2, 3, 3))
    lhs = T.conv2d(a * x1 + b * x2, w, pad=1)
    rhs = a * T.conv2d(x1, w, pad=1) + b * T.conv2d(x2, w, pad=1)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_avgpool_upsample_adjoint(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 2, 4, 4))
    y = rng.normal(size=(1, 2, 2, 2))
    # avgpool is a quarter of the adjoint of nearest upsampling
    assert np.isclose(np.sum(T.avgpool2(x) * y), np.sum(x * T.upsample2(y)) / 4.0)
