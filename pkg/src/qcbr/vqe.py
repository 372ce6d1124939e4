"""Variational quantum eigensolver over diagonal Ising Hamiltonians.

The ansatz is hardware efficient: ``depth`` repetitions of (RY on every
qubit, then a CZ chain) followed by a closing RY layer.  Only RY and CZ
appear, so amplitudes stay real and are simulated as float64.

Spin convention: variable ``i`` lives on qubit ``i`` and ``z_i = 1 - 2 * bit_i``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import qsim
from .errors import CapacityError, InvalidArgument
from .optim import OptimizerConfig, minimize


@dataclass
class IsingProblem:
    num_vars: int
    h: dict[int, float] = field(default_factory=dict)
    J: dict[tuple[int, int], float] = field(default_factory=dict)
    offset: float = 0.0

    def __post_init__(self):
        for i in self.h:
            if not 0 <= i < self.num_vars:
                raise InvalidArgument(f"linear term index {i} out of range")
        clean = {}
        for (i, j), v in self.J.items():
            if i == j or not (0 <= i < self.num_vars and 0 <= j < self.num_vars):
                raise InvalidArgument(f"bad coupling index ({i}, {j})")
            key = (min(i, j), max(i, j))
            clean[key] = clean.get(key, 0.0) + v
        self.J = clean

    def energy_table(self) -> np.ndarray:
        """Energy of every basis state, indexed like the statevector."""
        n = self.num_vars
        if n > qsim.MAX_QUBITS:
            raise CapacityError(f"{n} variables exceeds the dense bound of {qsim.MAX_QUBITS}")
        idx = np.arange(2 ** n)
        z = [1.0 - 2.0 * ((idx >> i) & 1) for i in range(n)]
        table = np.full(2 ** n, float(self.offset))
        for i, v in self.h.items():
            table += v * z[i]
        for (i, j), v in self.J.items():
            table += v * z[i] * z[j]
        return table


@dataclass
class VqeResult:
    energy: float
    parameters: np.ndarray
    best_bitstring: list[int]
    iterations_used: int
    trace: list[float]
    best_bitstring_energy: float = math.nan
    initial_energy: float = math.nan
    sampled: dict[int, float] = field(default_factory=dict, repr=False)


def ising_energy(problem: IsingProblem, bits: Sequence[int]) -> float:
    if len(bits) != problem.num_vars:
        raise InvalidArgument(f"expected {problem.num_vars} bits, got {len(bits)}")
    z = [1 - 2 * int(b) for b in bits]
    e = problem.offset
    e += sum(v * z[i] for i, v in problem.h.items())
    e += sum(v * z[i] * z[j] for (i, j), v in problem.J.items())
    return float(e)


def bits_of(index: int, n: int) -> list[int]:
    return [(index >> i) & 1 for i in range(n)]


def index_of(bits: Sequence[int]) -> int:
    return sum(int(b) << i for i, b in enumerate(bits))


def num_parameters(num_vars: int, depth: int) -> int:
    return num_vars * (depth + 1)


def _ry_layer(amps: np.ndarray, angles: np.ndarray, n: int) -> np.ndarray:
    for q in range(n):
        c, s = math.cos(angles[q] / 2), math.sin(angles[q] / 2)
        view = amps.reshape(2 ** (n - 1 - q), 2, 2 ** q)
        a0, a1 = view[:, 0, :].copy(), view[:, 1, :]
        view[:, 0, :] = c * a0 - s * a1
        view[:, 1, :] = s * a0 + c * a1
    return amps


def hea_amplitudes(num_vars: int, depth: int, params, cz: Optional[np.ndarray] = None) -> np.ndarray:
    """Real amplitudes of the ansatz state (float64, length 2**num_vars)."""
    params = np.asarray(params, dtype=float)
    if params.shape != (num_parameters(num_vars, depth),):
        raise InvalidArgument(
            f"expected {num_parameters(num_vars, depth)} parameters, got {params.size}"
        )
    if num_vars > qsim.MAX_QUBITS:
        raise CapacityError(f"{num_vars} variables exceeds the dense bound of {qsim.MAX_QUBITS}")
    if cz is None:
        cz = qsim.cz_diagonal([(i, i + 1) for i in range(num_vars - 1)], num_vars)
    amps = np.zeros(2 ** num_vars)
    amps[0] = 1.0
    layers = params.reshape(depth + 1, num_vars)
    for layer in layers[:-1]:
        _ry_layer(amps, layer, num_vars)
        amps *= cz
    _ry_layer(amps, layers[-1], num_vars)
    return amps


def hea_state(num_vars: int, depth: int, params) -> qsim.StateVector:
    amps = hea_amplitudes(num_vars, depth, params)
    return qsim.StateVector(num_vars, amps.astype(complex))


def basis_point(bits: Sequence[int], depth: int) -> np.ndarray:
    """Ansatz parameters that prepare the basis state ``bits`` exactly."""
    params = np.zeros(num_parameters(len(bits), depth))
    params[-len(bits):] = np.pi * np.asarray(bits, dtype=float)
    return params


def vqe_minimize(problem: IsingProblem, depth: int, optimizer: OptimizerConfig,
                 initial_point=None, seed: int = 0, shots: Optional[int] = None,
                 sample_shots: int = 16, energies: Optional[np.ndarray] = None) -> VqeResult:
    """Minimize <H> over the ansatz.

    With ``shots`` set, each energy evaluation is estimated from that many
    samples instead of the exact expectation.  Independently of that, every
    evaluation draws ``sample_shots`` bitstrings so the lowest-energy state
    seen over the run can be reported next to the most probable final state.
    """
    n = problem.num_vars
    if n > qsim.MAX_QUBITS:
        raise CapacityError(f"{n} variables exceeds the dense bound of {qsim.MAX_QUBITS}")
    if shots is not None and shots < 1:
        raise InvalidArgument("shots must be >= 1")
    n_params = num_parameters(n, depth)
    rng = np.random.default_rng(seed)
    if initial_point is None:
        x0 = rng.uniform(-np.pi, np.pi, n_params)
    else:
        x0 = np.asarray(initial_point, dtype=float)
        if x0.shape != (n_params,):
            raise InvalidArgument(f"initial_point must have {n_params} entries")
    table = problem.energy_table() if energies is None else np.asarray(energies, dtype=float)
    cz = qsim.cz_diagonal([(i, i + 1) for i in range(n - 1)], n)
    sampled: dict[int, float] = {}

    def objective(theta):
        probs = hea_amplitudes(n, depth, theta, cz) ** 2
        counts = None
        if shots is not None or sample_shots:
            counts = qsim.sample_indices(probs, shots or sample_shots, rng)
            for i in np.flatnonzero(counts):
                sampled[int(i)] = float(table[i])
        if shots is not None:
            return float(counts @ table) / shots
        return float(probs @ table)

    result = minimize(objective, x0, optimizer.with_(seed=optimizer.seed + seed))
    probs = hea_amplitudes(n, depth, result.x, cz) ** 2
    top = int(np.argmax(probs))
    best = top
    if sampled:
        low = min(sampled, key=lambda i: (sampled[i], i))
        if table[low] < table[top]:
            best = low
    return VqeResult(
        energy=float(probs @ table),
        parameters=result.x,
        best_bitstring=bits_of(best, n),
        iterations_used=len(result.trace),
        trace=result.trace,
        best_bitstring_energy=float(table[best]),
        initial_energy=result.initial,
        sampled=sampled,
    )


def iterations_to_threshold(trace: Sequence[float], ground: float, highest: float,
                            fraction: float = 0.05, initial: Optional[float] = None) -> int:
    """First 1-based iteration whose energy is within ``fraction`` of the spectrum above ground.

    Returns 0 when ``initial`` (the energy at the starting point) already
    qualifies and ``len(trace) + 1`` when the threshold is never reached.
    """
    level = ground + fraction * (highest - ground)
    if initial is not None and initial <= level:
        return 0
    for k, e in enumerate(trace):
        if e <= level:
            return k + 1
    return len(trace) + 1


@dataclass
class BenchmarkRow:
    trial: int
    cold_iterations: int
    warm_iterations: int
    cold_trace: list[float]
    warm_trace: list[float]


@dataclass
class WarmColdComparison:
    ground: float
    highest: float
    warm_point: np.ndarray
    rows: list[BenchmarkRow]

    @property
    def median_cold(self) -> float:
        return float(np.median([r.cold_iterations for r in self.rows]))

    @property
    def median_warm(self) -> float:
        return float(np.median([r.warm_iterations for r in self.rows]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "mode", "iteration", "energy"])
            for r in self.rows:
                for mode, trace in (("cold", r.cold_trace), ("warm", r.warm_trace)):
                    for k, e in enumerate(trace):
                        w.writerow([r.trial, mode, k + 1, repr(float(e))])


def warm_vs_cold_benchmark(problem: IsingProblem, depth: int, optimizer: OptimizerConfig,
                           trials: int, seed: int = 0, warm_point=None) -> WarmColdComparison:
    """Paired cold/warm runs on one problem.

    The warm point is the best parameter vector of a reference cold run
    (seeded apart from the trials) unless one is supplied.
    """
    if trials < 3:
        raise InvalidArgument("need at least 3 trials")
    table = problem.energy_table()
    ground, highest = float(table.min()), float(table.max())
    if warm_point is None:
        reference = vqe_minimize(problem, depth, optimizer, seed=seed + 10_000, energies=table)
        warm_point = reference.parameters
    rows = []
    for t in range(trials):
        cold = vqe_minimize(problem, depth, optimizer, seed=seed + t, energies=table, sample_shots=0)
        warm = vqe_minimize(problem, depth, optimizer, initial_point=warm_point,
                            seed=seed + t, energies=table, sample_shots=0)
        rows.append(BenchmarkRow(
            trial=t,
            cold_iterations=iterations_to_threshold(cold.trace, ground, highest,
                                                    initial=cold.initial_energy),
            warm_iterations=iterations_to_threshold(warm.trace, ground, highest,
                                                    initial=warm.initial_energy),
            cold_trace=cold.trace,
            warm_trace=warm.trace,
        ))
    return WarmColdComparison(ground, highest, np.asarray(warm_point), rows)
