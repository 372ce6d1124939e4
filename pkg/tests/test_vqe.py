import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcbr import qsim, swp, vqe
from qcbr.errors import CapacityError, InvalidArgument
from qcbr.optim import OptimizerConfig
from qcbr.qsim import GateOp


def toy_problem():
    # ground state 0b101 (bits 1, 0, 1): z = (-1, 1, -1)
    return vqe.IsingProblem(3, h={0: 1.0, 1: -1.0, 2: 1.0}, J={(0, 1): 0.5}, offset=2.0)


@given(st.lists(st.integers(0, 1), min_size=3, max_size=3))
def test_energy_table_matches_direct_evaluation(bits):
    problem = toy_problem()
    assert problem.energy_table()[vqe.index_of(bits)] == pytest.approx(vqe.ising_energy(problem, bits))


def test_couplings_are_canonicalized():
    problem = vqe.IsingProblem(2, J={(1, 0): 1.0, (0, 1): 0.5})
    assert problem.J == {(0, 1): 1.5}
    with pytest.raises(InvalidArgument):
        vqe.IsingProblem(2, J={(0, 0): 1.0})
    with pytest.raises(InvalidArgument):
        vqe.IsingProblem(2, h={5: 1.0})


def test_ansatz_matches_gate_by_gate_circuit(rng):
    n, depth = 3, 2
    params = rng.uniform(-np.pi, np.pi, vqe.num_parameters(n, depth))
    gates = []
    layers = params.reshape(depth + 1, n)
    for layer in layers[:-1]:
        gates += [GateOp("RY", q, angle=a) for q, a in enumerate(layer)]
        gates += [GateOp("CZ", q + 1, control=q) for q in range(n - 1)]
    gates += [GateOp("RY", q, angle=a) for q, a in enumerate(layers[-1])]
    expected = qsim.run_circuit(n, gates).amplitudes
    np.testing.assert_allclose(vqe.hea_amplitudes(n, depth, params), expected, atol=1e-12)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=6), st.integers(1, 3))
def test_basis_point_prepares_its_bitstring(bits, depth):
    amps = vqe.hea_amplitudes(len(bits), depth, vqe.basis_point(bits, depth))
    assert amps[vqe.index_of(bits)] ** 2 == pytest.approx(1.0)


def test_vqe_finds_toy_ground_state():
    problem = toy_problem()
    result = vqe.vqe_minimize(problem, 1, OptimizerConfig(max_iterations=300, a=0.3), seed=1)
    assert result.best_bitstring == [1, 0, 1]
    assert result.best_bitstring_energy == pytest.approx(problem.energy_table().min())
    assert result.iterations_used == len(result.trace) == 300


def test_shot_limited_run_is_seeded():
    problem = toy_problem()
    cfg = OptimizerConfig(max_iterations=20)
    a = vqe.vqe_minimize(problem, 1, cfg, seed=3, shots=8)
    b = vqe.vqe_minimize(problem, 1, cfg, seed=3, shots=8)
    assert a.trace == b.trace and a.best_bitstring == b.best_bitstring


def test_warm_start_from_ground_state_begins_at_ground():
    problem = toy_problem()
    start = vqe.basis_point([1, 0, 1], 2)
    result = vqe.vqe_minimize(problem, 2, OptimizerConfig(max_iterations=5), initial_point=start)
    assert result.initial_energy == pytest.approx(problem.energy_table().min())


def test_argument_checks():
    problem = toy_problem()
    with pytest.raises(InvalidArgument):
        vqe.vqe_minimize(problem, 1, OptimizerConfig(), initial_point=np.zeros(2))
    with pytest.raises(InvalidArgument):
        vqe.vqe_minimize(problem, 1, OptimizerConfig(), shots=0)
    with pytest.raises(CapacityError):
        vqe.vqe_minimize(vqe.IsingProblem(qsim.MAX_QUBITS + 1), 1, OptimizerConfig())


def test_iterations_to_threshold():
    trace = [10.0, 6.0, 2.0, 1.0]
    assert vqe.iterations_to_threshold(trace, ground=0.0, highest=20.0) == 4
    assert vqe.iterations_to_threshold(trace, ground=0.0, highest=20.0, fraction=0.1) == 3
    assert vqe.iterations_to_threshold(trace, 0.0, 20.0, initial=0.5) == 0
    assert vqe.iterations_to_threshold([5.0], 0.0, 20.0) == 2


def test_benchmark_csv_layout(tmp_path):
    problem = toy_problem()
    result = vqe.warm_vs_cold_benchmark(problem, 1, OptimizerConfig(max_iterations=10), trials=3)
    path = tmp_path / "bench.csv"
    result.write_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["trial", "mode", "iteration", "energy"]
    assert len(rows) == 1 + 3 * 2 * 10
    assert {r[1] for r in rows[1:]} == {"cold", "warm"}
    with pytest.raises(InvalidArgument):
        vqe.warm_vs_cold_benchmark(problem, 1, OptimizerConfig(max_iterations=10), trials=2)


def test_swp_problem_through_vqe_with_depot():
    inst = swp.random_instance(2, 1, seed=3, epsilon=0.0, include_depot=True)
    problem = swp.qubo_to_ising(swp.build_qubo(inst))
    result = vqe.vqe_minimize(problem, 2, OptimizerConfig(max_iterations=200), seed=0)
    decoded = swp.decode_routes(result.best_bitstring, inst)
    assert decoded.feasible
