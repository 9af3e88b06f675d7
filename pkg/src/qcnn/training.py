"""Loss, optimizer and the per-sample training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .network import DropoutLayer

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def cross_entropy(probs, label: int) -> float:
    """-ln(probs[label]) with the probability clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.size:
        raise ValueError(f"label {label} out of range for {probs.size} classes")
    return float(-math.log(max(probs[label], PROB_FLOOR)))


@dataclass
class RmsPropState:
    """Running mean of squared gradients plus hyperparameters.

    ``step_count == 0`` means no gradient has been seen yet; the first step
    seeds ``sq_avg`` with g**2 and then applies the usual blend.
    """

    size: int
    eta: float = 0.01
    alpha_smooth: float = 0.99
    epsilon: float = 1e-8
    sq_avg: np.ndarray = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        if self.sq_avg is None:
            self.sq_avg = np.zeros(self.size)
        else:
            self.sq_avg = np.asarray(self.sq_avg, dtype=np.float64)
            if self.sq_avg.shape != (self.size,):
                raise ShapeError(f"sq_avg has shape {self.sq_avg.shape}, expected ({self.size},)")


def rmsprop_step(params: np.ndarray, grads: np.ndarray, state: RmsPropState) -> np.ndarray:
    """Return updated parameters; ``state`` is advanced in place."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != (state.size,) or grads.shape != (state.size,):
        raise ShapeError(
            f"params {params.shape} and grads {grads.shape} must both have shape ({state.size},)"
        )
    g2 = grads * grads
    if state.step_count == 0:
        state.sq_avg = g2.copy()
    a = state.alpha_smooth
    state.sq_avg = a * state.sq_avg + (1 - a) * g2
    state.step_count += 1
    return params - state.eta * grads / (np.sqrt(state.sq_avg) + state.epsilon)


@dataclass
class TrainConfig:
    epochs: int = 30
    seed: int = 0
    dropout_rate: float | None = None
    shuffle: bool = True
    eval_every: int = 1
    eta: float = 0.01
    alpha_smooth: float = 0.99
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be at least 1, got {self.eval_every}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float


def evaluate(network, dataset) -> tuple[float, float]:
    """Mean cross-entropy and accuracy in eval mode.

    Ties in argmax resolve to the lowest class index.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot evaluate on an empty split")
    losses = np.empty(n)
    correct = 0
    for i in range(n):
        probs = network.forward(dataset.images[i], train=False)
        label = int(dataset.labels[i])
        losses[i] = cross_entropy(probs, label)
        correct += int(np.argmax(probs) == label)
    return float(losses.mean()), correct / n


def train(network, train_set, test_set, config: TrainConfig, optimizer: RmsPropState | None = None,
          on_epoch=None, start_epoch: int = 0) -> list[EpochMetrics]:
    """Per-sample RMSProp training.

    ``on_epoch(metrics, network, optimizer)`` is called after every evaluated
    epoch. The generator seeded from ``config.seed`` drives both shuffling
    and dropout masks.
    """
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("training needs non-empty train and test splits")
    if optimizer is None:
        optimizer = RmsPropState(network.param_count(), config.eta, config.alpha_smooth, config.epsilon)
    if config.dropout_rate is not None:
        for layer in network.layers:
            if isinstance(layer, DropoutLayer):
                layer.rate = config.dropout_rate
    rng = np.random.default_rng([config.seed, 2])
    history = []
    for epoch in range(start_epoch + 1, start_epoch + config.epochs + 1):
        order = rng.permutation(len(train_set)) if config.shuffle else np.arange(len(train_set))
        for i in order:
            network.forward(train_set.images[i], train=True, rng=rng)
            grads = network.backward(int(train_set.labels[i]))
            network.set_params(rmsprop_step(network.get_params(), grads, optimizer))
        if (epoch - start_epoch) % config.eval_every and epoch != start_epoch + config.epochs:
            continue
        train_loss, train_acc = evaluate(network, train_set)
        test_loss, test_acc = evaluate(network, test_set)
        metrics = EpochMetrics(epoch, train_loss, train_acc, test_loss, test_acc)
        log.info(
            "epoch %d train_loss=%.4f train_acc=%.3f test_loss=%.4f test_acc=%.3f",
            epoch, train_loss, train_acc, test_loss, test_acc,
        )
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(metrics, network, optimizer)
    return history
