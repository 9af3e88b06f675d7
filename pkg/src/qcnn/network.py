"""Layer stack for the hybrid quantum-classical classifier.

A ``Network`` is an ordered list of layers followed by a softmax. Every
layer implements the same small protocol:

* ``output_shape(input_shape)``: validate and propagate shapes at build time
* ``forward(x, train, rng)``: compute the output; in train mode, cache what
  backward needs
* ``backward(grad_out, need_input_grad)``: store ``param_grad`` and return
  the gradient with respect to the input (or ``None``)
* ``params``: flat float64 view of the trainable parameters (possibly empty)

The flat parameter vector of a network is the concatenation of layer
parameter vectors in layer order. For the QCNN that gives conv1 angles,
conv2 angles, dense weights (row-major), dense bias.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernel
from .errors import ConfigurationError, ShapeError, StateError
from .kernel import KernelConfig


def conv_output_dim(w_in: int, f: int, p: int, s: int) -> int:
    """Output width of a convolution: (w_in - f + 2p)/s + 1.

    Non-integer results are rejected instead of floored.
    """
    if w_in < 1 or f < 1 or s < 1 or p < 0:
        raise ConfigurationError(f"invalid convolution geometry w_in={w_in}, f={f}, p={p}, s={s}")
    span = w_in - f + 2 * p
    if span < 0:
        raise ConfigurationError(f"filter {f} larger than padded input {w_in + 2 * p}")
    if span % s:
        raise ConfigurationError(
            f"(W_in - F + 2P)/S + 1 = ({w_in} - {f} + 2*{p})/{s} + 1 is not an integer"
        )
    return span // s + 1


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(z - z.max())
    return e / e.sum()


def extract_patches(image: np.ndarray, f: int, stride: int, padding: int) -> np.ndarray:
    """All f x f patches in sweep order, shape (H_out * W_out, f, f)."""
    if padding:
        image = np.pad(image, padding)
    windows = sliding_window_view(image, (f, f))[::stride, ::stride]
    return windows.reshape(-1, f, f)


class QuantumConvLayer:
    def __init__(self, filter_size: int, depth: int = 2, stride: int = 1, padding: int = 0, channels: int = 1):
        if channels != 1:
            raise ConfigurationError("only single-channel quantum convolution is supported")
        self.config = KernelConfig(filter_size, depth)
        self.stride = stride
        self.padding = padding
        self.channels = channels
        self.params = np.zeros(kernel.param_count(self.config))
        self.param_grad = np.zeros_like(self.params)
        self._cache = None

    @property
    def filter_size(self) -> int:
        return self.config.filter_size

    def output_shape(self, input_shape):
        if len(input_shape) != 2:
            raise ConfigurationError(f"quantum convolution needs a 2-D input, got shape {input_shape}")
        f, p, s = self.filter_size, self.padding, self.stride
        return tuple(conv_output_dim(w, f, p, s) for w in input_shape)

    def init(self, rng: np.random.Generator) -> None:
        self.params[:] = rng.uniform(-np.pi, np.pi, self.params.size)

    def forward(self, x, train=False, rng=None):
        out_shape = self.output_shape(x.shape)
        patches = extract_patches(x, self.filter_size, self.stride, self.padding)
        out = kernel.forward_batch(patches, self.params, self.config).reshape(out_shape)
        if train:
            self._cache = (x.shape, out_shape, patches)
        return out

    def backward(self, grad_out, need_input_grad=True):
        if self._cache is None:
            raise StateError("backward called without a cached training forward pass")
        in_shape, out_shape, patches = self._cache
        g = grad_out.reshape(-1)
        # Positions with zero upstream gradient (e.g. dropped out) contribute nothing.
        live = np.flatnonzero(g)
        gp = kernel.grad_params_batch(patches[live], self.params, self.config)
        self.param_grad = g[live] @ gp if live.size else np.zeros_like(self.params)
        if not need_input_grad:
            return None
        f, s, p = self.filter_size, self.stride, self.padding
        gi = kernel.grad_input_batch(patches[live], self.params, self.config) * g[live, None, None]
        rows, cols = np.divmod(live, out_shape[1])
        r_idx = (rows * s)[:, None, None] + np.arange(f)[None, :, None]
        c_idx = (cols * s)[:, None, None] + np.arange(f)[None, None, :]
        padded = np.zeros((in_shape[0] + 2 * p, in_shape[1] + 2 * p))
        np.add.at(padded, (r_idx, c_idx), gi)
        return padded[p : p + in_shape[0], p : p + in_shape[1]]

    def descriptor(self):
        return [self.filter_size, self.stride, self.padding, self.config.depth]


class FlattenLayer:
    params = np.zeros(0)
    param_grad = np.zeros(0)

    def __init__(self):
        self._shape = None

    def output_shape(self, input_shape):
        return (math.prod(input_shape),)

    def init(self, rng):
        pass

    def forward(self, x, train=False, rng=None):
        if train:
            self._shape = x.shape
        return x.reshape(-1)

    def backward(self, grad_out, need_input_grad=True):
        if self._shape is None:
            raise StateError("backward called without a cached training forward pass")
        return grad_out.reshape(self._shape)


class DropoutLayer:
    """Inverted dropout: survivors are scaled by 1/(1-p) during training."""

    params = np.zeros(0)
    param_grad = np.zeros(0)

    def __init__(self, rate: float = 0.0):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def init(self, rng):
        pass

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            if train:
                self._mask = np.ones_like(x)
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs a random generator")
        keep = rng.random(x.shape) >= self.rate
        mask = keep / (1.0 - self.rate)
        self._mask = mask
        return x * mask

    def backward(self, grad_out, need_input_grad=True):
        if self._mask is None:
            raise StateError("backward called without a cached training forward pass")
        return grad_out * self._mask


class DenseLayer:
    def __init__(self, in_features: int, out_features: int):
        self.in_features = in_features
        self.out_features = out_features
        self.params = np.zeros(out_features * in_features + out_features)
        self.param_grad = np.zeros_like(self.params)
        self._x = None

    @property
    def weights(self) -> np.ndarray:
        return self.params[: self.out_features * self.in_features].reshape(self.out_features, self.in_features)

    @property
    def bias(self) -> np.ndarray:
        return self.params[self.out_features * self.in_features :]

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise ConfigurationError(f"dense layer expects ({self.in_features},), got {tuple(input_shape)}")
        return (self.out_features,)

    def init(self, rng):
        bound = 1.0 / math.sqrt(self.in_features)
        self.weights[:] = rng.uniform(-bound, bound, self.weights.shape)
        self.bias[:] = 0.0

    def forward(self, x, train=False, rng=None):
        if x.shape != (self.in_features,):
            raise ShapeError(f"dense layer expects ({self.in_features},), got {x.shape}")
        if train:
            self._x = x
        return self.weights @ x + self.bias

    def backward(self, grad_out, need_input_grad=True):
        if self._x is None:
            raise StateError("backward called without a cached training forward pass")
        self.param_grad = np.concatenate([np.outer(grad_out, self._x).ravel(), grad_out])
        return self.weights.T @ grad_out if need_input_grad else None


class Network:
    """Ordered layer stack ending in softmax over ``num_classes``.

    Shapes are validated once, here, so a built network never fails
    mid-forward on a well-shaped image.
    """

    def __init__(self, layers, input_shape, num_classes: int, kind: str = "qcnn"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.kind = kind
        shape = self.input_shape
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        if self.layers and shape != (num_classes,):
            raise ConfigurationError(f"network ends in shape {shape}, expected ({num_classes},)")
        self._probs = None

    def param_count(self) -> int:
        return sum(layer.params.size for layer in self.layers)

    def get_params(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([layer.params for layer in self.layers])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count(),):
            raise ShapeError(f"expected {self.param_count()} parameters, got shape {flat.shape}")
        pos = 0
        for layer in self.layers:
            k = layer.params.size
            layer.params[:] = flat[pos : pos + k]
            pos += k

    def init_params(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.init(rng)

    def forward(self, image, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        x = np.asarray(image, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ShapeError(f"network expects input {self.input_shape}, got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        probs = softmax(x)
        self._probs = probs if train else None
        return probs

    def backward(self, label: int) -> np.ndarray:
        """Gradient of the cross-entropy loss for ``label``, flat parameter order."""
        if self._probs is None:
            raise StateError("backward called without a cached training forward pass")
        if not 0 <= label < self.num_classes:
            raise ValueError(f"label {label} out of range for {self.num_classes} classes")
        g = self._probs.copy()
        g[label] -= 1.0
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            need = i > 0
            g = layer.backward(g, need_input_grad=need)
        return np.concatenate([layer.param_grad for layer in self.layers])

    def descriptor(self) -> list[int]:
        """Integer architecture fields written to checkpoints."""
        convs = [layer for layer in self.layers if isinstance(layer, QuantumConvLayer)]
        dropout = next((layer.rate for layer in self.layers if isinstance(layer, DropoutLayer)), 0.0)
        fields = [self.input_shape[0], self.input_shape[1], self.num_classes, len(convs)]
        for layer in convs:
            fields.extend(layer.descriptor())
        fields.append(round(dropout * 1_000_000))
        return fields


def build_qcnn(
    image_size=30,
    filters=(3, 2),
    strides=(1, 2),
    depths=(2, 2),
    paddings=None,
    num_classes: int = 2,
    dropout: float = 0.0,
) -> Network:
    """Stack of quantum conv layers, flatten, dropout, dense.

    Defaults give the 472-parameter architecture on 30x30 images:
    30 -(3x3, S=1)-> 28 -(2x2, S=2)-> 14 -> 196 -> 2.
    """
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    if paddings is None:
        paddings = (0,) * len(filters)
    if not len(filters) == len(strides) == len(depths) == len(paddings):
        raise ConfigurationError("filters, strides, depths and paddings must have equal lengths")
    layers = []
    shape = tuple(image_size)
    for f, s, d, p in zip(filters, strides, depths, paddings):
        layer = QuantumConvLayer(f, depth=d, stride=s, padding=p)
        shape = layer.output_shape(shape)
        layers.append(layer)
    flat = math.prod(shape)
    layers += [FlattenLayer(), DropoutLayer(dropout), DenseLayer(flat, num_classes)]
    return Network(layers, image_size, num_classes, kind="qcnn")


def init_network(network: Network, seed: int) -> Network:
    network.init_params(np.random.default_rng(seed))
    return network


# --- functional forms --------------------------------------------------------


def quantum_conv_forward(image, layer: QuantumConvLayer) -> np.ndarray:
    return layer.forward(np.asarray(image, dtype=np.float64), train=True)


def dense_forward(x, layer: DenseLayer) -> np.ndarray:
    return layer.forward(np.asarray(x, dtype=np.float64))


def dropout_forward(x, layer: DropoutLayer, rng_seed, train: bool = True):
    """Returns (output, mask). The mask already includes the 1/(1-p) scale."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    x = np.asarray(x, dtype=np.float64)
    out = layer.forward(x, train=train, rng=rng)
    mask = layer._mask if train else np.ones_like(x)
    return out, mask


def network_forward(image, network: Network, mode: str = "eval", rng=None) -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return network.forward(image, train=mode == "train", rng=rng)


def network_backward(network: Network, true_label: int) -> np.ndarray:
    return network.backward(true_label)


def network_param_count(network: Network) -> int:
    return network.param_count()
