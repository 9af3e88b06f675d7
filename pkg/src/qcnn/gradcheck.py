"""Finite-difference checks of every analytic gradient in the package.

Kernel-level checks compare shift-rule gradients against central
differences with absolute error. End-to-end checks compare the full
cross-entropy gradient of a small network and report a relative error
``|a - n| / max(|a|, |n|, 1e-2)``, so with a 1e-4 tolerance tiny components
are held to a 1e-6 absolute floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel
from .baseline import MaxPoolLayer, ReLULayer, build_cnn
from .kernel import KernelConfig
from .network import Network, build_qcnn
from .training import cross_entropy

KERNEL_STEP = 1e-4
NETWORK_STEP = 1e-3
KERNEL_TOLERANCE = 1e-6
NETWORK_TOLERANCE = 1e-4
RELATIVE_FLOOR = 1e-2


@dataclass
class CheckResult:
    name: str
    error: float  # worst deviation in this check's metric
    worst_index: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


def central_difference(f, x: np.ndarray, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.size)
    for j in range(x.size):
        step = np.zeros(x.size)
        step[j] = h
        step = step.reshape(x.shape)
        out[j] = (f(x + step) - f(x - step)) / (2 * h)
    return out.reshape(x.shape)


def random_kernel_instance(rng: np.random.Generator, config: KernelConfig):
    f = config.filter_size
    patch = rng.normal(0.0, 1.0, (f, f))
    params = rng.uniform(-np.pi, np.pi, kernel.param_count(config))
    return patch, params


def kernel_deviations(config: KernelConfig, instances: int, rng: np.random.Generator, h: float = KERNEL_STEP):
    """Max absolute shift-rule vs finite-difference deviation.

    Returns ``(param_dev, param_idx, input_dev, input_idx)``.
    """
    p_dev, p_idx, x_dev, x_idx = 0.0, -1, 0.0, -1
    for _ in range(instances):
        patch, params = random_kernel_instance(rng, config)
        gp = kernel.grad_params(patch, params, config)
        fd_p = central_difference(lambda t: kernel.forward(patch, t, config), params, h)
        gi = kernel.grad_input(patch, params, config).ravel()
        fd_x = central_difference(lambda x: kernel.forward(x, params, config), patch, h).ravel()
        dp = np.abs(gp - fd_p)
        dx = np.abs(gi - fd_x)
        if dp.max() > p_dev:
            p_dev, p_idx = float(dp.max()), int(dp.argmax())
        if dx.max() > x_dev:
            x_dev, x_idx = float(dx.max()), int(dx.argmax())
    return p_dev, p_idx, x_dev, x_idx


def loss_at(network: Network, params: np.ndarray, image, label: int) -> float:
    saved = network.get_params()
    network.set_params(params)
    try:
        return cross_entropy(network.forward(image, train=False), label)
    finally:
        network.set_params(saved)


def switch_pattern(network: Network, params: np.ndarray, image) -> list[np.ndarray]:
    """ReLU masks and max-pool winners at ``params``.

    Central differences only measure the derivative when no perturbation
    flips one of these switches.
    """
    saved = network.get_params()
    network.set_params(params)
    try:
        network.forward(image, train=True, rng=np.random.default_rng(0))
        pattern = []
        for layer in network.layers:
            if isinstance(layer, ReLULayer):
                pattern.append(layer._mask.copy())
            elif isinstance(layer, MaxPoolLayer):
                pattern.append(layer._cache[1].copy())
        return pattern
    finally:
        network.set_params(saved)


def is_smooth_at(network: Network, image, h: float = NETWORK_STEP) -> bool:
    """True if no +-h step in any single parameter flips a ReLU or pool switch."""
    params = network.get_params()
    base = switch_pattern(network, params, image)
    if not base:
        return True
    for j in range(params.size):
        for sign in (1.0, -1.0):
            shifted = params.copy()
            shifted[j] += sign * h
            pattern = switch_pattern(network, shifted, image)
            if any(not np.array_equal(a, b) for a, b in zip(base, pattern)):
                return False
    return True


def relative_deviation(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), RELATIVE_FLOOR)
    return np.abs(analytic - numeric) / scale


def network_deviation(network: Network, image, label: int, h: float = NETWORK_STEP):
    """Worst relative deviation between backprop and finite differences."""
    network.forward(image, train=True, rng=np.random.default_rng(0))
    analytic = network.backward(label)
    numeric = central_difference(lambda p: loss_at(network, p, image, label), network.get_params(), h)
    dev = relative_deviation(analytic, numeric)
    return float(dev.max()), int(dev.argmax()), analytic, numeric


def smooth_instance(build, seed: int, size: int, rng: np.random.Generator, max_tries: int = 50):
    """Draw (network, image, label) until the loss is smooth within +-h of every parameter."""
    for attempt in range(max_tries):
        net = build(seed + 1000 * attempt, size)
        image = rng.uniform(0.0, 1.0, (size, size))
        label = int(rng.integers(net.num_classes))
        if is_smooth_at(net, image):
            return net, image, label
    raise RuntimeError(f"no kink-free instance found in {max_tries} draws")


def small_qcnn(seed: int, size: int = 6) -> Network:
    """2x2 -> 2x2 quantum stack at stride 1, no dropout."""
    net = build_qcnn(size, filters=(2, 2), strides=(1, 1), depths=(2, 2))
    net.init_params(np.random.default_rng(seed))
    return net


def small_cnn(seed: int, size: int = 10) -> Network:
    net = build_cnn(size, channels=(2, 2), filter_size=3, padding=1)
    net.init_params(np.random.default_rng(seed))
    return net


def run_all(
    seed: int = 0,
    filter_sizes=(1, 2, 3),
    depths=(1, 2),
    instances: int = 20,
    qcnn_size: int = 6,
    cnn_size: int = 10,
    network_samples: int = 3,
    kernel_tolerance: float = KERNEL_TOLERANCE,
    network_tolerance: float = NETWORK_TOLERANCE,
) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for n in filter_sizes:
        for d in depths:
            config = KernelConfig(n, d)
            p_dev, p_idx, x_dev, x_idx = kernel_deviations(config, instances, rng)
            results.append(CheckResult(f"kernel_params n={n} depth={d}", p_dev, p_idx, kernel_tolerance))
            results.append(CheckResult(f"kernel_input n={n} depth={d}", x_dev, x_idx, kernel_tolerance))
    for name, build, size in (("qcnn", small_qcnn, qcnn_size), ("cnn", small_cnn, cnn_size)):
        worst, worst_idx = 0.0, -1
        for k in range(network_samples):
            net, image, label = smooth_instance(build, seed + k, size, rng)
            dev, idx, _, _ = network_deviation(net, image, label)
            if dev > worst:
                worst, worst_idx = dev, idx
        results.append(CheckResult(f"{name}_end_to_end size={size}", worst, worst_idx, network_tolerance))
    return results
