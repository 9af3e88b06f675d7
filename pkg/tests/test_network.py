import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qcnn import kernel
from qcnn.errors import ConfigurationError, ShapeError, StateError
from qcnn.network import (
    DenseLayer,
    DropoutLayer,
    FlattenLayer,
    Network,
    QuantumConvLayer,
    build_qcnn,
    conv_output_dim,
    dense_forward,
    dropout_forward,
    extract_patches,
    init_network,
    network_backward,
    network_forward,
    network_param_count,
    quantum_conv_forward,
    softmax,
)
from qcnn.training import cross_entropy

import oracles

# --- shape formula -----------------------------------------------------------


@pytest.mark.parametrize(
    "w,f,p,s,expected",
    [(30, 3, 0, 1, 28), (28, 2, 0, 2, 14), (6, 2, 0, 1, 5), (5, 2, 0, 1, 4), (30, 5, 2, 1, 30)],
)
def test_conv_output_dim_examples(w, f, p, s, expected):
    assert conv_output_dim(w, f, p, s) == expected


def test_conv_output_dim_rejects_non_integer():
    with pytest.raises(ConfigurationError):
        conv_output_dim(30, 3, 0, 2)


def test_conv_output_dim_rejects_oversized_filter():
    with pytest.raises(ConfigurationError):
        conv_output_dim(2, 3, 0, 1)


def test_conv_output_dim_against_enumeration():
    for w in range(1, 17):
        for f in range(1, 5):
            for p in range(0, 3):
                for s in range(1, 4):
                    span = w + 2 * p - f
                    if span < 0 or span % s:
                        with pytest.raises(ConfigurationError):
                            conv_output_dim(w, f, p, s)
                    else:
                        assert conv_output_dim(w, f, p, s) == oracles.count_positions(w, f, p, s)


def test_extract_patches_sweep_order():
    img = np.arange(16.0).reshape(4, 4)
    patches = extract_patches(img, 2, 2, 0)
    assert patches.shape == (4, 2, 2)
    np.testing.assert_array_equal(patches[1], [[2, 3], [6, 7]])
    np.testing.assert_array_equal(patches[2], [[8, 9], [12, 13]])


# --- quantum convolution layer --------------------------------------------------


def test_single_position_equals_kernel_output():
    rng = np.random.default_rng(0)
    layer = QuantumConvLayer(3, depth=2)
    layer.init(rng)
    img = rng.normal(size=(3, 3))
    out = quantum_conv_forward(img, layer)
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(oracles.kernel_output(img, layer.params, 3, 2), abs=1e-12)


def test_zero_image_zero_params_gives_ones():
    layer = QuantumConvLayer(3, depth=2)
    out = quantum_conv_forward(np.zeros((5, 5)), layer)
    np.testing.assert_allclose(out, np.ones((3, 3)), atol=1e-12)


def test_stride_two_uses_disjoint_patches():
    rng = np.random.default_rng(1)
    layer = QuantumConvLayer(2, depth=1, stride=2)
    layer.init(rng)
    img = rng.normal(size=(4, 4))
    out = quantum_conv_forward(img, layer)
    for r in range(2):
        for c in range(2):
            patch = img[2 * r : 2 * r + 2, 2 * c : 2 * c + 2]
            assert out[r, c] == pytest.approx(oracles.kernel_output(patch, layer.params, 2, 1), abs=1e-12)


def test_channels_other_than_one_rejected():
    with pytest.raises(ConfigurationError):
        QuantumConvLayer(2, channels=3)


def test_layer_backward_requires_forward():
    with pytest.raises(StateError):
        QuantumConvLayer(2).backward(np.ones((1, 1)))


def test_zero_upstream_gradient_gives_zero_gradients():
    rng = np.random.default_rng(2)
    layer = QuantumConvLayer(2, depth=2)
    layer.init(rng)
    img = rng.normal(size=(4, 4))
    layer.forward(img, train=True)
    grad_in = layer.backward(np.zeros((3, 3)))
    np.testing.assert_array_equal(layer.param_grad, 0)
    np.testing.assert_array_equal(grad_in, 0)


@pytest.mark.parametrize("stride,padding,size", [(1, 0, 4), (2, 0, 6), (1, 1, 3)])
def test_layer_backward_matches_finite_differences(stride, padding, size):
    rng = np.random.default_rng(3 + stride + padding)
    layer = QuantumConvLayer(2, depth=2, stride=stride, padding=padding)
    layer.init(rng)
    img = rng.normal(size=(size, size))
    out = layer.forward(img, train=True)
    weights = rng.normal(size=out.shape)
    grad_in = layer.backward(weights)

    def scalar(x=img, p=None):
        saved = layer.params.copy()
        if p is not None:
            layer.params[:] = p
        try:
            return float(np.sum(layer.forward(x) * weights))
        finally:
            layer.params[:] = saved

    fd_x = oracles.central_difference(lambda x: scalar(x=x), img, 1e-5)
    fd_p = oracles.central_difference(lambda p: scalar(p=p), layer.params.copy(), 1e-5)
    np.testing.assert_allclose(grad_in, fd_x, atol=1e-8)
    np.testing.assert_allclose(layer.param_grad, fd_p, atol=1e-8)


# --- dense, softmax, dropout ----------------------------------------------------


def test_dense_identity():
    layer = DenseLayer(2, 2)
    layer.weights[:] = np.eye(2)
    np.testing.assert_array_equal(dense_forward([3.0, -1.0], layer), [3.0, -1.0])


def test_dense_bias_only():
    layer = DenseLayer(3, 2)
    layer.bias[:] = [0.5, -0.5]
    np.testing.assert_array_equal(dense_forward([1.0, 2.0, 3.0], layer), [0.5, -0.5])


def test_dense_matches_naive_loop():
    rng = np.random.default_rng(4)
    layer = DenseLayer(7, 3)
    layer.init(rng)
    layer.bias[:] = rng.normal(size=3)
    x = rng.normal(size=7)
    expected = oracles.naive_matvec(layer.weights.tolist(), x.tolist(), layer.bias.tolist())
    np.testing.assert_allclose(dense_forward(x, layer), expected, atol=1e-14)


def test_dense_gradient_formula():
    rng = np.random.default_rng(5)
    layer = DenseLayer(4, 2)
    layer.init(rng)
    x = rng.normal(size=4)
    g = rng.normal(size=2)
    layer.forward(x, train=True)
    gx = layer.backward(g)
    np.testing.assert_allclose(layer.param_grad[:8].reshape(2, 4), np.outer(g, x))
    np.testing.assert_allclose(layer.param_grad[8:], g)
    np.testing.assert_allclose(gx, layer.weights.T @ g)


def test_dense_init_bounds():
    layer = DenseLayer(196, 2)
    layer.init(np.random.default_rng(6))
    assert np.all(np.abs(layer.weights) <= 1 / math.sqrt(196))
    np.testing.assert_array_equal(layer.bias, 0)


def test_softmax_equal_logits():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])


def test_softmax_log_two_logit():
    np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_extreme_logits_are_finite():
    p = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0)
    p = softmax([500.0, -500.0])
    assert p[0] == 1.0 and np.isfinite(p[1])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8))
def test_softmax_is_a_distribution(logits):
    p = softmax(logits)
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_softmax_rejects_empty():
    with pytest.raises(ValueError):
        softmax([])


def test_dropout_eval_is_identity():
    x = np.random.default_rng(7).normal(size=50)
    out, mask = dropout_forward(x, DropoutLayer(0.3), 0, train=False)
    np.testing.assert_array_equal(out, x)
    np.testing.assert_array_equal(mask, 1)


def test_dropout_zero_rate_is_identity_in_training():
    x = np.random.default_rng(8).normal(size=50)
    out, _ = dropout_forward(x, DropoutLayer(0.0), 0)
    np.testing.assert_array_equal(out, x)


def test_dropout_scales_survivors():
    out, mask = dropout_forward(np.ones(1000), DropoutLayer(0.5), 9)
    assert set(np.unique(out)) <= {0.0, 2.0}
    np.testing.assert_array_equal(out, mask)


def test_dropout_mean_is_preserved():
    p, n = 0.3, 100_000
    out, _ = dropout_forward(np.ones(n), DropoutLayer(p), 10)
    sigma = math.sqrt(p / (1 - p) / n)
    assert abs(out.mean() - 1.0) < 3 * sigma


@pytest.mark.parametrize("rate", [-0.1, 1.0])
def test_dropout_rate_validated(rate):
    with pytest.raises(ConfigurationError):
        DropoutLayer(rate)


def test_dropout_backward_applies_mask():
    layer = DropoutLayer(0.5)
    out, mask = dropout_forward(np.ones(20), layer, 11)
    np.testing.assert_array_equal(layer.backward(np.full(20, 3.0)), 3.0 * mask)


# --- network ----------------------------------------------------------------------


def test_default_architecture_parameter_counts():
    net = build_qcnn()
    assert net.shapes == [(30, 30), (28, 28), (14, 14), (196,), (196,), (2,)]
    assert [layer.params.size for layer in net.layers] == [54, 24, 0, 0, 394]
    assert network_param_count(net) == 472


def test_empty_network_has_no_parameters():
    assert network_param_count(Network([], (2, 2), 2)) == 0


def test_invalid_stride_rejected_at_build():
    with pytest.raises(ConfigurationError):
        build_qcnn(30, filters=(3, 2), strides=(2, 2))


def test_wrong_image_shape_rejected():
    net = build_qcnn(6, filters=(2, 2), strides=(1, 1))
    with pytest.raises(ShapeError):
        network_forward(np.zeros((5, 5)), net)


def test_zero_network_predicts_uniform():
    net = build_qcnn(6, filters=(2, 2), strides=(1, 1))
    np.testing.assert_allclose(network_forward(np.zeros((6, 6)), net), [0.5, 0.5])


def test_default_network_output_is_a_distribution():
    net = init_network(build_qcnn(), 0)
    p = network_forward(np.random.default_rng(12).uniform(size=(30, 30)), net)
    assert p.shape == (2,)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_set_get_params_round_trip():
    net = init_network(build_qcnn(6, filters=(2, 2), strides=(1, 1)), 1)
    flat = np.random.default_rng(13).normal(size=net.param_count())
    net.set_params(flat)
    np.testing.assert_array_equal(net.get_params(), flat)
    with pytest.raises(ShapeError):
        net.set_params(flat[:-1])


def test_quantum_init_range():
    net = init_network(build_qcnn(), 2)
    angles = np.concatenate([net.layers[0].params, net.layers[1].params])
    assert np.all(np.abs(angles) <= math.pi)


def test_backward_without_forward_raises():
    net = build_qcnn(6, filters=(2, 2), strides=(1, 1))
    with pytest.raises(StateError):
        network_backward(net, 0)


def test_backward_rejects_bad_label():
    net = build_qcnn(6, filters=(2, 2), strides=(1, 1))
    network_forward(np.zeros((6, 6)), net, mode="train", rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        network_backward(net, 2)


def test_eval_forward_is_deterministic_even_with_dropout():
    net = init_network(build_qcnn(6, filters=(2, 2), strides=(1, 1), dropout=0.5), 3)
    img = np.random.default_rng(14).uniform(size=(6, 6))
    a = network_forward(img, net, rng=np.random.default_rng(1))
    b = network_forward(img, net, rng=np.random.default_rng(2))
    np.testing.assert_array_equal(a, b)


def loss_fn(net, img, label):
    def f(params):
        saved = net.get_params()
        net.set_params(params)
        try:
            return cross_entropy(network_forward(img, net), label)
        finally:
            net.set_params(saved)

    return f


@pytest.mark.parametrize("seed", [0, 1])
def test_end_to_end_gradient_matches_finite_differences(seed):
    net = init_network(build_qcnn(6, filters=(2, 2), strides=(1, 1)), seed)
    rng = np.random.default_rng(100 + seed)
    img = rng.uniform(size=(6, 6))
    label = int(rng.integers(2))
    network_forward(img, net, mode="train", rng=rng)
    analytic = network_backward(net, label)
    numeric = oracles.central_difference(loss_fn(net, img, label), net.get_params(), 1e-5)
    np.testing.assert_allclose(analytic, numeric, atol=1e-8)


def test_padded_network_gradient_matches_finite_differences():
    net = init_network(build_qcnn(4, filters=(2, 2), strides=(1, 1), paddings=(1, 0)), 5)
    rng = np.random.default_rng(15)
    img = rng.uniform(size=(4, 4))
    network_forward(img, net, mode="train", rng=rng)
    analytic = network_backward(net, 1)
    numeric = oracles.central_difference(loss_fn(net, img, 1), net.get_params(), 1e-5)
    np.testing.assert_allclose(analytic, numeric, atol=1e-8)


def test_output_gradient_is_probs_minus_onehot():
    net = init_network(build_qcnn(6, filters=(2, 2), strides=(1, 1)), 6)
    img = np.random.default_rng(16).uniform(size=(6, 6))
    probs = network_forward(img, net, mode="train", rng=np.random.default_rng(0))
    grads = network_backward(net, 0)
    dense = net.layers[-1]
    np.testing.assert_allclose(grads[-2:], probs - [1, 0], atol=1e-15)
    assert dense.param_grad.size == dense.params.size


def test_dropped_positions_get_no_dense_gradient():
    net = init_network(build_qcnn(6, filters=(2, 2), strides=(1, 1), dropout=0.5), 7)
    img = np.random.default_rng(17).uniform(size=(6, 6))
    network_forward(img, net, mode="train", rng=np.random.default_rng(3))
    network_backward(net, 1)
    mask = net.layers[3]._mask
    w_grad = net.layers[-1].param_grad[: 2 * 16].reshape(2, 16)
    assert np.any(mask == 0)
    np.testing.assert_array_equal(w_grad[:, mask == 0], 0)


def test_flatten_round_trip():
    layer = FlattenLayer()
    x = np.arange(6.0).reshape(2, 3)
    out = layer.forward(x, train=True)
    np.testing.assert_array_equal(layer.backward(out), x)


def test_kernel_param_count_matches_layer():
    assert QuantumConvLayer(3, depth=2).params.size == kernel.param_count(kernel.KernelConfig(3, 2))
