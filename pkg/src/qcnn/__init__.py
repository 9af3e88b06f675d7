"""Hybrid quantum-classical convolutional neural network on a statevector simulator."""

from .baseline import build_cnn
from .data import Dataset, GeneratorConfig, generate, load_dataset, save_dataset, split
from .kernel import KernelConfig
from .network import Network, build_qcnn
from .training import RmsPropState, TrainConfig, cross_entropy, evaluate, rmsprop_step, train

__all__ = [
    "Dataset",
    "GeneratorConfig",
    "KernelConfig",
    "Network",
    "RmsPropState",
    "TrainConfig",
    "build_cnn",
    "build_qcnn",
    "cross_entropy",
    "evaluate",
    "generate",
    "load_dataset",
    "rmsprop_step",
    "save_dataset",
    "split",
    "train",
]
