"""Variational quantum convolution filter.

One filter acts on an n x n patch using n*n qubits. Pixel k of the
row-major flattened patch drives qubit k through Ry(arctan x) followed by
Rz(arctan x^2). Then ``depth`` blocks follow, each a CNOT ring
(0->1, 1->2, ..., last->0) and a general rotation Rz(g) Ry(b) Rz(a) on
every qubit. The output is <Z> on qubit 0.

Parameters are a flat vector laid out ``[block][qubit][alpha, beta, gamma]``.
All gradients use the parameter-shift rule: every angle in the circuit is
generated by a Pauli operator, so ``(f(t + pi/2) - f(t - pi/2)) / 2`` is the
exact derivative.

The ``*_batch`` functions evaluate many patches in one vectorised pass and
are what the network layers call. The scalar functions wrap them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import parallel
from .errors import ConfigurationError, ShapeError
from .statevector import (
    MAX_QUBITS,
    StateVector,
    cnot_permutation,
    compose_permutations,
    expectation_z_batch,
    rot_matrix,
)

SHIFT = np.pi / 2

# Rough cap on complex amplitudes held by one evaluation chunk (~64 MB).
_CHUNK_AMPLITUDES = 1 << 22


@dataclass(frozen=True)
class KernelConfig:
    filter_size: int
    depth: int

    def __post_init__(self):
        if self.filter_size < 1:
            raise ConfigurationError(f"filter_size must be positive, got {self.filter_size}")
        if self.depth < 1:
            raise ConfigurationError(f"depth must be positive, got {self.depth}")
        if self.num_qubits > MAX_QUBITS:
            raise ConfigurationError(
                f"a {self.filter_size}x{self.filter_size} filter needs {self.num_qubits} qubits "
                f"(limit {MAX_QUBITS})"
            )

    @property
    def num_qubits(self) -> int:
        return self.filter_size**2

    @cached_property
    def ring_permutation(self) -> np.ndarray:
        n = self.num_qubits
        if n == 1:
            return np.arange(2)
        gates = [cnot_permutation(n, i, i + 1) for i in range(n - 1)]
        gates.append(cnot_permutation(n, n - 1, 0))
        return compose_permutations(n, gates)


def param_count(config: KernelConfig) -> int:
    return 3 * config.num_qubits * config.depth


def encoding_angles(patches: np.ndarray):
    """Ry and Rz encoding angles, each of shape (B, n*n)."""
    x = patches.reshape(patches.shape[0], -1 if patches.shape[0] else math.prod(patches.shape[1:])).astype(np.float64)
    return np.arctan(x), np.arctan(x * x)


def _product_state(ry_angles: np.ndarray, rz_angles: np.ndarray) -> np.ndarray:
    # Rz(b) Ry(a)|0> = (exp(-ib/2) cos(a/2), exp(ib/2) sin(a/2)) per qubit.
    batch, n = ry_angles.shape
    zero = np.exp(-0.5j * rz_angles) * np.cos(ry_angles / 2)
    one = np.exp(0.5j * rz_angles) * np.sin(ry_angles / 2)
    amps = np.ones((batch, 1), dtype=np.complex128)
    for q in range(n):
        single = np.stack([zero[:, q], one[:, q]], axis=1)
        amps = (amps[:, :, None] * single[:, None, :]).reshape(batch, -1)
    return amps


def _rotate(amps: np.ndarray, n: int, qubit: int, matrix: np.ndarray) -> np.ndarray:
    """Apply a 2x2 ``matrix`` (shared, or one per row with shape (B, 2, 2))."""
    batch = amps.shape[0]
    view = amps.reshape(batch, 2**qubit, 2, 2 ** (n - qubit - 1))
    m = matrix if matrix.ndim == 2 else matrix[:, None]
    return np.matmul(m, view).reshape(batch, -1)


def gate_sequence(config: KernelConfig) -> list[tuple]:
    """Gates that can influence <Z_0>, in application order.

    Entries are ``("ring", d)`` or ``("rot", d, q)``. In the final block only
    qubit 0's rotation is kept: later rotations on other qubits commute with
    the readout and leave the expectation unchanged.
    """
    n, depth = config.num_qubits, config.depth
    seq = []
    for d in range(depth):
        if n > 1:
            seq.append(("ring", d))
        qubits = range(n) if d < depth - 1 else range(1)
        seq.extend(("rot", d, q) for q in qubits)
    return seq


def _rotation_matrices(params: np.ndarray, config: KernelConfig) -> np.ndarray:
    blocks = params.reshape(config.depth, config.num_qubits, 3)
    return rot_matrix(blocks[..., 0], blocks[..., 1], blocks[..., 2])


def _evolve(amps: np.ndarray, mats: np.ndarray, config: KernelConfig, start: int = 0) -> np.ndarray:
    """Apply ``gate_sequence(config)[start:]`` with shared rotation matrices."""
    n = config.num_qubits
    perm = config.ring_permutation
    for gate in gate_sequence(config)[start:]:
        if gate[0] == "ring":
            amps = amps[:, perm]
        else:
            _, d, q = gate
            amps = _rotate(amps, n, q, mats[d, q])
    return amps


def _expectations(ry_angles, rz_angles, params, config: KernelConfig) -> np.ndarray:
    amps = _evolve(_product_state(ry_angles, rz_angles), _rotation_matrices(params, config), config)
    return expectation_z_batch(amps, config.num_qubits, 0)


def _chunked(fn, total: int, per_item: int, config: KernelConfig):
    """Split ``range(total)`` into chunks bounded by memory and map ``fn``.

    Chunk boundaries depend only on the problem size, never on the thread
    count, so results are identical for any ``parallel`` setting.
    """
    size = max(1, _CHUNK_AMPLITUDES // (per_item * 2**config.num_qubits))
    bounds = [(i, min(i + size, total)) for i in range(0, total, size)]
    return parallel.map_ordered(lambda b: fn(*b), bounds)


def _check_patches(patches: np.ndarray, config: KernelConfig) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    f = config.filter_size
    if patches.ndim != 3 or patches.shape[1:] != (f, f):
        raise ShapeError(f"expected patches of shape (B, {f}, {f}), got {patches.shape}")
    return patches


def _check_params(params: np.ndarray, config: KernelConfig) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (param_count(config),):
        raise ShapeError(f"expected {param_count(config)} kernel parameters, got shape {params.shape}")
    return params


def forward_batch(patches: np.ndarray, params: np.ndarray, config: KernelConfig) -> np.ndarray:
    """Filter output for each of B patches; shape (B,)."""
    patches = _check_patches(patches, config)
    params = _check_params(params, config)
    ry, rz = encoding_angles(patches)

    def run(lo, hi):
        return _expectations(ry[lo:hi], rz[lo:hi], params, config)

    parts = _chunked(run, len(patches), 1, config)
    return np.concatenate(parts) if parts else np.zeros(0)


def _shifted_rotations(params: np.ndarray, config: KernelConfig) -> np.ndarray:
    """For every (block, qubit): 6 rotation matrices with alpha, beta, gamma
    each shifted by +pi/2 and -pi/2. Shape (depth, nq, 3, 2, 2, 2) indexed
    [d, q, angle, sign]."""
    blocks = params.reshape(config.depth, config.num_qubits, 1, 1, 3)
    shifts = np.zeros((1, 1, 3, 2, 3))
    for k in range(3):
        shifts[0, 0, k, 0, k] = SHIFT
        shifts[0, 0, k, 1, k] = -SHIFT
    angles = blocks + shifts
    return rot_matrix(angles[..., 0], angles[..., 1], angles[..., 2])


def grad_params_batch(patches: np.ndarray, params: np.ndarray, config: KernelConfig) -> np.ndarray:
    """d(output)/d(params) for each patch; shape (B, num_params).

    Every component is (f(t + pi/2) - f(t - pi/2)) / 2 from two full circuit
    evaluations. The unshifted prefix is simulated once and shared by the
    six shifted branches of each rotation gate. Parameters outside qubit 0's
    light cone (final-block rotations on other qubits) are exactly zero.
    """
    patches = _check_patches(patches, config)
    params = _check_params(params, config)
    ry, rz = encoding_angles(patches)
    n = config.num_qubits
    mats = _rotation_matrices(params, config)
    shifted = _shifted_rotations(params, config)
    seq = gate_sequence(config)
    perm = config.ring_permutation

    def run(lo, hi):
        k = hi - lo
        grads = np.zeros((k, config.depth, n, 3))
        amps = _product_state(ry[lo:hi], rz[lo:hi])
        for pos, gate in enumerate(seq):
            if gate[0] == "ring":
                amps = amps[:, perm]
                continue
            _, d, q = gate
            variants = shifted[d, q].reshape(6, 2, 2)
            branch = _rotate(np.repeat(amps, 6, axis=0), n, q, np.tile(variants, (k, 1, 1)))
            branch = _evolve(branch, mats, config, pos + 1)
            vals = expectation_z_batch(branch, n, 0).reshape(k, 3, 2)
            grads[:, d, q, :] = 0.5 * (vals[:, :, 0] - vals[:, :, 1])
            amps = _rotate(amps, n, q, mats[d, q])
        return grads.reshape(k, -1)

    parts = _chunked(run, len(patches), 6, config)
    return np.concatenate(parts) if parts else np.zeros((0, params.size))


def grad_input_batch(patches: np.ndarray, params: np.ndarray, config: KernelConfig) -> np.ndarray:
    """d(output)/d(pixel) for each patch; shape (B, n, n).

    The encoding gates are themselves Pauli rotations, so their angle
    derivatives come from the shift rule; arctan's derivative closes the chain.
    """
    patches = _check_patches(patches, config)
    params = _check_params(params, config)
    ry, rz = encoding_angles(patches)
    n = config.num_qubits
    eye = SHIFT * np.eye(n)
    zeros = np.zeros((n, n))
    # 4n circuits per patch: Ry +, Ry -, Rz +, Rz -.
    ry_shift = np.concatenate([eye, -eye, zeros, zeros])
    rz_shift = np.concatenate([zeros, zeros, eye, -eye])

    def run(lo, hi):
        k = hi - lo
        ry_rep = (ry[lo:hi, None, :] + ry_shift[None]).reshape(-1, n)
        rz_rep = (rz[lo:hi, None, :] + rz_shift[None]).reshape(-1, n)
        vals = _expectations(ry_rep, rz_rep, params, config).reshape(k, 4, n)
        d_ry = 0.5 * (vals[:, 0] - vals[:, 1])
        d_rz = 0.5 * (vals[:, 2] - vals[:, 3])
        x = patches[lo:hi].reshape(k, n)
        return d_ry / (1 + x * x) + d_rz * 2 * x / (1 + x**4)

    parts = _chunked(run, len(patches), 4 * n, config)
    out = np.concatenate(parts) if parts else np.zeros((0, n))
    return out.reshape(-1, config.filter_size, config.filter_size)


# --- single-patch API ------------------------------------------------------


def encode(patch: np.ndarray, config: KernelConfig) -> StateVector:
    """State after the encoding gates, before any variational block."""
    patches = _check_patches(np.asarray(patch)[None], config)
    ry, rz = encoding_angles(patches)
    return StateVector(config.num_qubits, _product_state(ry, rz)[0])


def forward(patch: np.ndarray, params: np.ndarray, config: KernelConfig) -> float:
    return float(forward_batch(np.asarray(patch)[None], params, config)[0])


def grad_params(patch: np.ndarray, params: np.ndarray, config: KernelConfig) -> np.ndarray:
    return grad_params_batch(np.asarray(patch)[None], params, config)[0]


def grad_input(patch: np.ndarray, params: np.ndarray, config: KernelConfig) -> np.ndarray:
    return grad_input_batch(np.asarray(patch)[None], params, config)[0]
