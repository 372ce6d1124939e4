"""Dense statevector simulator.

Only the gates the classifier and the eigensolver need are provided:
RX, RY, RZ, CRZ, CNOT and CZ.

Conventions
-----------
* ``RX(t) = exp(-i t X / 2)``, ``RY(t) = exp(-i t Y / 2)``, ``RZ(t) = exp(-i t Z / 2)``.
* ``CRZ(t) = diag(1, 1, 1, exp(i t))`` in the control (x) target basis, i.e. a
  phase on the component where both qubits are set.
* Qubit 0 is the least significant bit of a basis index.  Bitstrings are
  printed most significant first, so ``"01"`` on two qubits is index 1
  (qubit 0 set).

The array kernels (``apply_1q``, ``apply_phase`` ...) accept amplitudes with
arbitrary leading batch dimensions, which lets the classifier simulate a whole
dataset in one pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import CapacityError, InvalidArgument

MAX_QUBITS = 22


class GateKind(str, Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    CRZ = "CRZ"
    CNOT = "CNOT"
    CZ = "CZ"


_CONTROLLED = {GateKind.CRZ, GateKind.CNOT, GateKind.CZ}
_PARAMETRIC = {GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CRZ}


@dataclass
class StateVector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (2 ** self.num_qubits,):
            raise InvalidArgument("amplitude length must be 2**num_qubits")

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.probabilities)))

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())


@dataclass(frozen=True)
class GateOp:
    kind: GateKind
    target: int
    control: Optional[int] = None
    angle: Optional[float] = None

    def __post_init__(self):
        kind = GateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in _CONTROLLED:
            if self.control is None:
                raise InvalidArgument(f"{kind.value} needs a control qubit")
            if self.control == self.target:
                raise InvalidArgument("control and target must differ")
        elif self.control is not None:
            raise InvalidArgument(f"{kind.value} takes no control qubit")
        if kind in _PARAMETRIC and self.angle is None:
            raise InvalidArgument(f"{kind.value} needs an angle")
        if kind not in _PARAMETRIC and self.angle is not None:
            raise InvalidArgument(f"{kind.value} takes no angle")


# ---------------------------------------------------------------------------
# gate matrices


def rx_matrix(theta):
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    return np.stack([np.stack([c, -1j * s], -1), np.stack([-1j * s, c], -1)], -2)


def ry_matrix(theta):
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2).astype(complex)


def rz_matrix(theta):
    t = np.asarray(theta)
    zero = np.zeros_like(t, dtype=complex)
    return np.stack(
        [np.stack([np.exp(-0.5j * t), zero], -1), np.stack([zero, np.exp(0.5j * t)], -1)], -2
    )


# ---------------------------------------------------------------------------
# array kernels


def _split(amps: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """View of amplitudes as (..., high, bit, low) around ``qubit``."""
    return amps.reshape(amps.shape[:-1] + (2 ** (n - 1 - qubit), 2, 2 ** qubit))


def apply_1q(amps: np.ndarray, matrix: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Apply a single-qubit matrix (2x2 or batched (..., 2, 2)) and return new amplitudes."""
    view = _split(amps, qubit, n)
    a0, a1 = view[..., 0, :], view[..., 1, :]
    m = np.asarray(matrix)
    # batched matrices broadcast over the (high, low) axes
    shape = m.shape[:-2] + (1, 1)
    m00, m01, m10, m11 = (m[..., i, j].reshape(shape) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
    out = np.empty(view.shape, dtype=np.result_type(amps, m))
    out[..., 0, :] = m00 * a0 + m01 * a1
    out[..., 1, :] = m10 * a0 + m11 * a1
    return out.reshape(amps.shape)


def bit_mask(qubit: int, n: int) -> np.ndarray:
    """Boolean array over basis indices, true where ``qubit`` is set."""
    return (np.arange(2 ** n) >> qubit) & 1 == 1


def apply_phase(amps: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Multiply by a diagonal (length 2**n, or batched (..., 2**n))."""
    return amps * phases


def apply_cnot(amps: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    idx = np.arange(2 ** n)
    flipped = np.where(bit_mask(control, n), idx ^ (1 << target), idx)
    return amps[..., flipped]


def cz_diagonal(pairs, n: int) -> np.ndarray:
    """Diagonal of a product of CZ gates over ``pairs`` of qubits."""
    sign = np.ones(2 ** n)
    for a, b in pairs:
        sign[bit_mask(a, n) & bit_mask(b, n)] *= -1.0
    return sign


def crz_diagonal(theta, control: int, target: int, n: int) -> np.ndarray:
    both = bit_mask(control, n) & bit_mask(target, n)
    t = np.asarray(theta, dtype=float)
    return np.where(both, np.exp(1j * t[..., None]), 1.0 + 0j)


# ---------------------------------------------------------------------------
# public single-state API


def new_state(num_qubits: int) -> StateVector:
    if num_qubits < 1:
        raise InvalidArgument("num_qubits must be >= 1")
    if num_qubits > MAX_QUBITS:
        raise CapacityError(f"{num_qubits} qubits exceeds the dense bound of {MAX_QUBITS}")
    amps = np.zeros(2 ** num_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(num_qubits, amps)


def _check_index(state: StateVector, qubit: int):
    if not 0 <= qubit < state.num_qubits:
        raise InvalidArgument(f"qubit index {qubit} out of range for {state.num_qubits} qubits")


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    """Apply ``gate`` in place and return the same state object."""
    n = state.num_qubits
    _check_index(state, gate.target)
    if gate.control is not None:
        _check_index(state, gate.control)
    amps = state.amplitudes
    kind = gate.kind
    if kind is GateKind.RX:
        amps = apply_1q(amps, rx_matrix(gate.angle), gate.target, n)
    elif kind is GateKind.RY:
        amps = apply_1q(amps, ry_matrix(gate.angle), gate.target, n)
    elif kind is GateKind.RZ:
        amps = apply_1q(amps, rz_matrix(gate.angle), gate.target, n)
    elif kind is GateKind.CRZ:
        amps = apply_phase(amps, crz_diagonal(gate.angle, gate.control, gate.target, n))
    elif kind is GateKind.CZ:
        amps = apply_phase(amps, cz_diagonal([(gate.control, gate.target)], n))
    else:
        amps = apply_cnot(amps, gate.control, gate.target, n)
    state.amplitudes = np.asarray(amps, dtype=complex)
    return state


def run_circuit(num_qubits: int, gates) -> StateVector:
    state = new_state(num_qubits)
    for g in gates:
        apply_gate(state, g)
    return state


def basis_fidelity(state: StateVector, basis_index: int) -> float:
    if not 0 <= basis_index < 2 ** state.num_qubits:
        raise InvalidArgument(f"basis index {basis_index} out of range")
    return float(abs(state.amplitudes[basis_index]) ** 2)


def diagonal_expectation(state: StateVector, energies) -> float:
    energies = np.asarray(energies, dtype=float)
    if energies.shape != (2 ** state.num_qubits,):
        raise InvalidArgument("energy table length must be 2**num_qubits")
    return float(np.dot(state.probabilities, energies))


def index_to_bitstring(index: int, num_qubits: int) -> str:
    return format(index, f"0{num_qubits}b")


def sample_indices(probabilities: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``shots`` basis indices; returns counts per index (length 2**n)."""
    p = np.clip(probabilities, 0.0, None)
    p = p / p.sum()
    return rng.multinomial(shots, p)


def sample_bitstrings(state: StateVector, shots: int, seed: int) -> dict[str, int]:
    if shots < 1:
        raise InvalidArgument("shots must be >= 1")
    counts = sample_indices(state.probabilities, shots, np.random.default_rng(seed))
    return {
        index_to_bitstring(int(i), state.num_qubits): int(counts[i])
        for i in np.flatnonzero(counts)
    }
