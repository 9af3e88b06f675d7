"""Classical CNN comparator with hand-written backprop.

The default configuration is the 498-parameter network used as the
classical baseline on 30x30 images:

    conv(1->4, 5x5, pad 2) -> ReLU -> maxpool 2   (30 -> 30 -> 15)
    conv(4->2, 5x5, pad 2) -> ReLU -> maxpool 2   (15 -> 15 -> 7)
    flatten(98) -> dense(98 -> 2) -> softmax

Convolutions carry no bias; only the dense layer does, which is what makes
the count 100 + 200 + 198.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, StateError
from .network import DenseLayer, DropoutLayer, FlattenLayer, Network, conv_output_dim


def _as_chw(shape):
    return (1, *shape) if len(shape) == 2 else tuple(shape)


class ClassicalConvLayer:
    def __init__(self, in_channels: int, out_channels: int, filter_size: int, stride: int = 1, padding: int = 0):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.filter_size = filter_size
        self.stride = stride
        self.padding = padding
        self.params = np.zeros(out_channels * in_channels * filter_size**2)
        self.param_grad = np.zeros_like(self.params)
        self._cache = None

    @property
    def weights(self) -> np.ndarray:
        f = self.filter_size
        return self.params.reshape(self.out_channels, self.in_channels, f, f)

    def output_shape(self, input_shape):
        c, h, w = _as_chw(input_shape)
        if c != self.in_channels:
            raise ConfigurationError(f"conv layer expects {self.in_channels} channels, got {c}")
        f, p, s = self.filter_size, self.padding, self.stride
        return (self.out_channels, conv_output_dim(h, f, p, s), conv_output_dim(w, f, p, s))

    def init(self, rng):
        bound = 1.0 / math.sqrt(self.in_channels * self.filter_size**2)
        self.params[:] = rng.uniform(-bound, bound, self.params.size)

    def _columns(self, x):
        p, f, s = self.padding, self.filter_size, self.stride
        xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (f, f), axis=(1, 2))[:, ::s, ::s]
        # (C, Ho, Wo, F, F) -> (Ho*Wo, C*F*F)
        c, ho, wo = win.shape[:3]
        return win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * f * f), (ho, wo)

    def forward(self, x, train=False, rng=None):
        x = x.reshape(_as_chw(x.shape))
        cols, (ho, wo) = self._columns(x)
        out = (self.params.reshape(self.out_channels, -1) @ cols.T).reshape(self.out_channels, ho, wo)
        if train:
            self._cache = (x.shape, cols, (ho, wo))
        return out

    def backward(self, grad_out, need_input_grad=True):
        if self._cache is None:
            raise StateError("backward called without a cached training forward pass")
        in_shape, cols, (ho, wo) = self._cache
        g = grad_out.reshape(self.out_channels, -1)
        self.param_grad = (g @ cols).ravel()
        if not need_input_grad:
            return None
        c, h, w = in_shape
        f, s, p = self.filter_size, self.stride, self.padding
        dcols = (g.T @ self.params.reshape(self.out_channels, -1)).reshape(ho, wo, c, f, f)
        padded = np.zeros((c, h + 2 * p, w + 2 * p))
        for i in range(f):
            for j in range(f):
                padded[:, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, i, j].transpose(2, 0, 1)
        return padded[:, p : p + h, p : p + w]

    def descriptor(self):
        return [self.out_channels, self.filter_size, self.stride, self.padding]


class ReLULayer:
    params = np.zeros(0)
    param_grad = np.zeros(0)

    def __init__(self):
        self._mask = None

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def init(self, rng):
        pass

    def forward(self, x, train=False, rng=None):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad_out, need_input_grad=True):
        if self._mask is None:
            raise StateError("backward called without a cached training forward pass")
        return grad_out * self._mask


class MaxPoolLayer:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped.

    Ties route the gradient to the first maximum in row-major window order.
    """

    params = np.zeros(0)
    param_grad = np.zeros(0)

    def __init__(self, window: int = 2):
        self.window = window
        self._cache = None

    def output_shape(self, input_shape):
        c, h, w = _as_chw(input_shape)
        k = self.window
        if h < k or w < k:
            raise ConfigurationError(f"pooling window {k} larger than input {h}x{w}")
        return (c, h // k, w // k)

    def init(self, rng):
        pass

    def forward(self, x, train=False, rng=None):
        x = x.reshape(_as_chw(x.shape))
        c, h, w = x.shape
        k = self.window
        ho, wo = h // k, w // k
        blocks = x[:, : ho * k, : wo * k].reshape(c, ho, k, wo, k).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, k * k)
        arg = blocks.argmax(axis=-1)
        if train:
            self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad_out, need_input_grad=True):
        if self._cache is None:
            raise StateError("backward called without a cached training forward pass")
        (c, h, w), arg = self._cache
        k = self.window
        ho, wo = arg.shape[1:]
        blocks = np.zeros((c, ho, wo, k * k))
        np.put_along_axis(blocks, arg[..., None], grad_out[..., None], axis=-1)
        out = np.zeros((c, h, w))
        out[:, : ho * k, : wo * k] = blocks.reshape(c, ho, wo, k, k).transpose(0, 1, 3, 2, 4).reshape(c, ho * k, wo * k)
        return out


def build_cnn(
    image_size=30,
    channels=(4, 2),
    filter_size: int = 5,
    padding: int = 2,
    pool: int = 2,
    num_classes: int = 2,
    dropout: float = 0.0,
) -> Network:
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    layers = []
    shape = (1, *image_size)
    in_ch = 1
    for out_ch in channels:
        stage = [ClassicalConvLayer(in_ch, out_ch, filter_size, padding=padding), ReLULayer()]
        if pool:
            stage.append(MaxPoolLayer(pool))
        for layer in stage:
            shape = layer.output_shape(shape)
        layers += stage
        in_ch = out_ch
    layers += [FlattenLayer(), DropoutLayer(dropout), DenseLayer(math.prod(shape), num_classes)]
    net = Network(layers, image_size, num_classes, kind="cnn")
    net.cnn_config = dict(channels=tuple(channels), filter_size=filter_size, padding=padding, pool=pool)
    return net


def cnn_descriptor(network: Network) -> list[int]:
    cfg = network.cnn_config
    dropout = next((layer.rate for layer in network.layers if isinstance(layer, DropoutLayer)), 0.0)
    return [
        network.input_shape[0],
        network.input_shape[1],
        network.num_classes,
        len(cfg["channels"]),
        *cfg["channels"],
        cfg["filter_size"],
        cfg["padding"],
        cfg["pool"],
        round(dropout * 1_000_000),
    ]


def cnn_forward(image, network: Network, mode: str = "eval", rng=None) -> np.ndarray:
    return network.forward(image, train=mode == "train", rng=rng)


def cnn_backward(network: Network, label: int) -> np.ndarray:
    return network.backward(label)
