import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcbr import qsim
from qcbr.errors import CapacityError, InvalidArgument
from qcbr.qsim import GateKind, GateOp

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
I2 = np.eye(2, dtype=complex)


def expm_pauli(P, theta):
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * P


def full_operator(num_qubits, gate):
    """Dense unitary of ``gate`` built column by column through the simulator."""
    dim = 2 ** num_qubits
    U = np.empty((dim, dim), dtype=complex)
    for col in range(dim):
        amps = np.zeros(dim, dtype=complex)
        amps[col] = 1.0
        state = qsim.StateVector(num_qubits, amps)
        U[:, col] = qsim.apply_gate(state, gate).amplitudes
    return U


def kron_on(matrix, qubit, n):
    """Embed a one-qubit matrix; qubit 0 is the rightmost Kronecker factor."""
    out = np.eye(1, dtype=complex)
    for k in reversed(range(n)):
        out = np.kron(out, matrix if k == qubit else I2)
    return out


def random_gate(rng, n):
    kinds = [k.value for k in GateKind] if n > 1 else ["RX", "RY", "RZ"]
    kind = GateKind(rng.choice(kinds))
    target = int(rng.integers(n))
    if kind in (GateKind.CRZ, GateKind.CNOT, GateKind.CZ):
        control = int(rng.choice([q for q in range(n) if q != target]))
        angle = float(rng.uniform(-2 * np.pi, 2 * np.pi)) if kind is GateKind.CRZ else None
        return GateOp(kind, target, control, angle)
    return GateOp(kind, target, angle=float(rng.uniform(-2 * np.pi, 2 * np.pi)))


@pytest.mark.parametrize("theta", [0.0, 0.3, np.pi / 2, np.pi, -2.1, 5.0])
def test_rotation_matrices_match_pauli_exponentials(theta):
    np.testing.assert_allclose(qsim.rx_matrix(theta), expm_pauli(X, theta), atol=1e-12)
    np.testing.assert_allclose(qsim.ry_matrix(theta), expm_pauli(Y, theta), atol=1e-12)
    np.testing.assert_allclose(qsim.rz_matrix(theta), expm_pauli(Z, theta), atol=1e-12)


def test_rx_pi_flips_zero_to_one_up_to_phase():
    state = qsim.run_circuit(1, [GateOp("RX", 0, angle=np.pi)])
    np.testing.assert_allclose(state.amplitudes, [0, -1j], atol=1e-12)


def test_qubit_zero_is_least_significant():
    state = qsim.run_circuit(3, [GateOp("RX", 0, angle=np.pi)])
    assert qsim.basis_fidelity(state, 1) == pytest.approx(1.0)
    assert qsim.index_to_bitstring(1, 3) == "001"


def test_cnot_truth_table():
    for control_bit in (0, 1):
        for target_bit in (0, 1):
            amps = np.zeros(4, dtype=complex)
            amps[control_bit | (target_bit << 1)] = 1.0
            out = qsim.apply_gate(qsim.StateVector(2, amps), GateOp("CNOT", 1, control=0))
            expected = control_bit | ((target_bit ^ control_bit) << 1)
            assert qsim.basis_fidelity(out, expected) == pytest.approx(1.0)


def test_crz_is_phase_on_both_set():
    theta = 0.7
    U = full_operator(2, GateOp("CRZ", 1, control=0, angle=theta))
    np.testing.assert_allclose(U, np.diag([1, 1, 1, np.exp(1j * theta)]), atol=1e-12)


def test_cz_diagonal():
    U = full_operator(2, GateOp("CZ", 1, control=0))
    np.testing.assert_allclose(U, np.diag([1, 1, 1, -1]), atol=1e-12)


@pytest.mark.parametrize("kind,P", [("RX", X), ("RY", Y), ("RZ", Z)])
def test_single_qubit_gate_embedding(kind, P):
    n, theta = 3, 1.234
    for q in range(n):
        U = full_operator(n, GateOp(kind, q, angle=theta))
        np.testing.assert_allclose(U, kron_on(expm_pauli(P, theta), q, n), atol=1e-12)


def test_random_circuits_are_unitary(rng):
    for _ in range(50):
        n = int(rng.integers(1, 5))
        gates = [random_gate(rng, n) for _ in range(int(rng.integers(1, 12)))]
        state = qsim.run_circuit(n, gates)
        assert state.norm() == pytest.approx(1.0, abs=1e-10)


@given(st.integers(1, 4), st.lists(st.floats(-10, 10), min_size=1, max_size=6))
def test_norm_preserved_under_rotations(n, angles):
    gates = [GateOp(("RX", "RY", "RZ")[i % 3], i % n, angle=a) for i, a in enumerate(angles)]
    assert qsim.run_circuit(n, gates).norm() == pytest.approx(1.0, abs=1e-12)


def test_batched_apply_matches_single_state(rng):
    n = 3
    amps = rng.standard_normal((5, 8)) + 1j * rng.standard_normal((5, 8))
    thetas = rng.uniform(-3, 3, 5)
    batched = qsim.apply_1q(amps, qsim.rx_matrix(thetas), 1, n)
    for b in range(5):
        single = qsim.apply_1q(amps[b], qsim.rx_matrix(thetas[b]), 1, n)
        np.testing.assert_allclose(batched[b], single, atol=1e-14)


def test_sampling_is_seeded_and_counts_add_up():
    state = qsim.run_circuit(2, [GateOp("RY", 0, angle=1.0), GateOp("RY", 1, angle=2.0)])
    a = qsim.sample_bitstrings(state, 500, seed=3)
    b = qsim.sample_bitstrings(state, 500, seed=3)
    assert a == b
    assert sum(a.values()) == 500


def test_diagonal_expectation():
    state = qsim.run_circuit(1, [GateOp("RY", 0, angle=np.pi / 2)])
    assert qsim.diagonal_expectation(state, [1.0, -1.0]) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("make", [
    lambda: GateOp("CNOT", 0),
    lambda: GateOp("CZ", 1, control=1),
    lambda: GateOp("RX", 0),
    lambda: GateOp("CZ", 1, control=0, angle=0.3),
    lambda: GateOp("RX", 0, control=1, angle=0.3),
])
def test_malformed_gates_rejected(make):
    with pytest.raises(InvalidArgument):
        make()


def test_out_of_range_qubit_rejected():
    with pytest.raises(InvalidArgument):
        qsim.apply_gate(qsim.new_state(2), GateOp("RX", 2, angle=0.1))


def test_register_bounds():
    with pytest.raises(InvalidArgument):
        qsim.new_state(0)
    with pytest.raises(CapacityError):
        qsim.new_state(qsim.MAX_QUBITS + 1)


def test_zero_shots_rejected():
    with pytest.raises(InvalidArgument):
        qsim.sample_bitstrings(qsim.new_state(1), 0, seed=0)
