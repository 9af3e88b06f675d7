"""Dense statevector simulator.

Qubit 0 is the most significant bit of the basis-state index, so for three
qubits ``|100>`` lives at index 4. Amplitudes are complex128.

The single-state functions (``apply_ry`` etc.) return a new ``StateVector``
and never mutate their argument. The ``*_batch`` helpers operate on raw
arrays of shape ``(batch, 2**n)`` with one rotation angle per batch row;
the quantum kernel uses them to evaluate thousands of circuits at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

MAX_QUBITS = 12


@dataclass
class StateVector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise ConfigurationError(
                f"num_qubits must be in [1, {MAX_QUBITS}], got {self.num_qubits}"
            )
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2**self.num_qubits,):
            raise ConfigurationError(
                f"expected {2**self.num_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm_squared(self) -> float:
        return float(np.sum(self.probabilities()))


@dataclass(frozen=True)
class MeasurementCounts:
    zeros: int
    ones: int

    @property
    def shots(self) -> int:
        return self.zeros + self.ones

    @property
    def frequency_one(self) -> float:
        """Empirical probability of reading 1."""
        return self.ones / self.shots

    @property
    def expectation_z(self) -> float:
        """Empirical Pauli-Z expectation, (zeros - ones) / shots."""
        return (self.zeros - self.ones) / self.shots


def new_zero_state(num_qubits: int) -> StateVector:
    if not isinstance(num_qubits, (int, np.integer)) or not 1 <= num_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"num_qubits must be in [1, {MAX_QUBITS}], got {num_qubits!r}")
    amps = np.zeros(2**num_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(int(num_qubits), amps)


# --- gate matrices ---------------------------------------------------------


def ry_matrix(theta):
    """Ry(theta) as an array of shape ``theta.shape + (2, 2)``."""
    theta = np.asarray(theta, dtype=np.float64)
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    m = np.empty(theta.shape + (2, 2), dtype=np.complex128)
    m[..., 0, 0] = c
    m[..., 0, 1] = -s
    m[..., 1, 0] = s
    m[..., 1, 1] = c
    return m


def rz_matrix(phi):
    """Rz(phi) = diag(exp(-i phi/2), exp(i phi/2)), broadcast over ``phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    m = np.zeros(phi.shape + (2, 2), dtype=np.complex128)
    m[..., 0, 0] = np.exp(-0.5j * phi)
    m[..., 1, 1] = np.exp(0.5j * phi)
    return m


def rot_matrix(alpha, beta, gamma):
    """Rz(gamma) @ Ry(beta) @ Rz(alpha): alpha is applied first.

    Computed in closed form so that batched evaluation does not need two
    extra matrix products per gate.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    shape = np.broadcast_shapes(alpha.shape, beta.shape, gamma.shape)
    c = np.cos(beta / 2)
    s = np.sin(beta / 2)
    plus = 0.5j * (alpha + gamma)
    minus = 0.5j * (alpha - gamma)
    m = np.empty(shape + (2, 2), dtype=np.complex128)
    m[..., 0, 0] = np.exp(-plus) * c
    m[..., 0, 1] = -np.exp(minus) * s
    m[..., 1, 0] = np.exp(-minus) * s
    m[..., 1, 1] = np.exp(plus) * c
    return m


# --- batched primitives ----------------------------------------------------


def apply_single_qubit_batch(amps: np.ndarray, num_qubits: int, qubit: int, matrices: np.ndarray) -> np.ndarray:
    """Apply one 2x2 matrix per batch row to ``qubit``.

    ``amps`` has shape (B, 2**n); ``matrices`` has shape (B, 2, 2) or (2, 2).
    Returns a new array.
    """
    batch = amps.shape[0]
    view = amps.reshape(batch, 2**qubit, 2, 2 ** (num_qubits - qubit - 1))
    if matrices.ndim == 2:
        out = np.einsum("ij,bajr->bair", matrices, view)
    else:
        out = np.einsum("bij,bajr->bair", matrices, view)
    return out.reshape(batch, -1)


def cnot_permutation(num_qubits: int, control: int, target: int) -> np.ndarray:
    """Index map ``f`` with ``new_amps = old_amps[f]`` for CNOT(control, target)."""
    idx = np.arange(2**num_qubits)
    cbit = 1 << (num_qubits - 1 - control)
    tbit = 1 << (num_qubits - 1 - target)
    return np.where(idx & cbit, idx ^ tbit, idx)


def compose_permutations(num_qubits: int, perms) -> np.ndarray:
    """Single index map equivalent to applying ``perms`` in order."""
    out = np.arange(2**num_qubits)
    for p in perms:
        out = out[p]
    return out


def expectation_z_batch(amps: np.ndarray, num_qubits: int, qubit: int) -> np.ndarray:
    batch = amps.shape[0]
    probs = (amps.real**2 + amps.imag**2).reshape(batch, 2**qubit, 2, -1)
    return probs[:, :, 0, :].sum(axis=(1, 2)) - probs[:, :, 1, :].sum(axis=(1, 2))


# --- single-state API ------------------------------------------------------


def _check_qubit(state: StateVector, qubit: int) -> None:
    if not 0 <= qubit < state.num_qubits:
        raise IndexError(f"qubit {qubit} out of range for {state.num_qubits}-qubit state")


def _apply(state: StateVector, qubit: int, matrix: np.ndarray) -> StateVector:
    _check_qubit(state, qubit)
    amps = apply_single_qubit_batch(state.amplitudes[None, :], state.num_qubits, qubit, matrix)
    return StateVector(state.num_qubits, amps[0])


def apply_ry(state: StateVector, qubit: int, theta: float) -> StateVector:
    return _apply(state, qubit, ry_matrix(theta))


def apply_rz(state: StateVector, qubit: int, phi: float) -> StateVector:
    return _apply(state, qubit, rz_matrix(phi))


def apply_rot(state: StateVector, qubit: int, alpha: float, beta: float, gamma: float) -> StateVector:
    """General rotation Rz(gamma) Ry(beta) Rz(alpha) on ``qubit``."""
    return _apply(state, qubit, rot_matrix(alpha, beta, gamma))


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    if control == target:
        raise ValueError("control and target must differ")
    _check_qubit(state, control)
    _check_qubit(state, target)
    perm = cnot_permutation(state.num_qubits, control, target)
    return StateVector(state.num_qubits, state.amplitudes[perm])


def expectation_z(state: StateVector, qubit: int) -> float:
    _check_qubit(state, qubit)
    return float(expectation_z_batch(state.amplitudes[None, :], state.num_qubits, qubit)[0])


def probability_one(state: StateVector, qubit: int) -> float:
    _check_qubit(state, qubit)
    probs = state.probabilities().reshape(2**qubit, 2, -1)
    return float(probs[:, 1, :].sum())


def sample_qubit(state: StateVector, qubit: int, shots: int, seed: int) -> MeasurementCounts:
    """Measure ``qubit`` ``shots`` times on fresh copies of ``state``."""
    if shots < 1:
        raise ValueError(f"shots must be positive, got {shots}")
    p1 = min(max(probability_one(state, qubit), 0.0), 1.0)
    rng = np.random.default_rng(seed)
    ones = int(np.count_nonzero(rng.random(shots) < p1))
    return MeasurementCounts(zeros=shots - ones, ones=ones)
