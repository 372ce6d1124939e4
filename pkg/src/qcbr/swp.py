"""Social Workers' Problem: instances, QUBO/Ising construction, decoding and the exact oracle.

Node numbering
--------------
Without a depot the route graph has one node per patient (``0 .. n-1``).
With a depot, node ``0`` is the depot and patient ``p`` is node ``p + 1``.
Binary variables ``x[u, v]`` exist for every ordered pair of distinct nodes
and are numbered in lexicographic order of ``(u, v)``.

Times are minutes from the start of the week.  Within a route patients are
visited in ascending start time (ties by patient index).
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInstance, Infeasible, InvalidArgument
from .vqe import IsingProblem

SLOT_MINUTES = 30
DAY_MINUTES = 24 * 60


@dataclass(frozen=True)
class Patient:
    x: float
    y: float
    tau_start: int
    tau_end: int


@dataclass
class ScheduleInstance:
    patients: list[Patient]
    num_workers: int
    epsilon: float = 0.0
    penalty_A: Optional[float] = None  # None -> 1.5 * max edge weight
    include_depot: bool = False
    depot: tuple[float, float] = (5.0, 5.0)

    def __post_init__(self):
        self.patients = [p if isinstance(p, Patient) else Patient(**p) for p in self.patients]
        n = len(self.patients)
        if n < 1:
            raise InvalidArgument("instance needs at least one patient")
        if self.num_workers < 1:
            raise InvalidArgument("need at least one worker")
        if self.num_workers > n:
            raise Infeasible(f"{self.num_workers} workers for {n} patients is infeasible")
        if self.epsilon < 0:
            raise InvalidArgument("epsilon must be non-negative")
        for p in self.patients:
            if p.tau_start % SLOT_MINUTES or p.tau_end % SLOT_MINUTES:
                raise InvalidArgument("visit times must lie on the 30-minute grid")
            if p.tau_end < p.tau_start:
                raise InvalidArgument("visit ends before it starts")
        self._weights: Optional[np.ndarray] = None
        if self.penalty_A is not None:
            g_max = self.max_weight()
            if not self.penalty_A > g_max:
                raise InvalidArgument(f"penalty_A={self.penalty_A} must exceed max edge weight {g_max}")

    @property
    def n(self) -> int:
        return len(self.patients)

    @property
    def num_nodes(self) -> int:
        return self.n + 1 if self.include_depot else self.n

    def coords(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.patients], dtype=float)

    def starts(self) -> np.ndarray:
        return np.array([p.tau_start for p in self.patients], dtype=float)

    def weights(self) -> np.ndarray:
        """Node-to-node weight matrix (depot legs are plain distances)."""
        if self._weights is None:
            n = self.n
            w = np.zeros((n, n))
            for i in range(n):
                for j in range(n):
                    if i != j:
                        w[i, j] = edge_weight(self, i, j)
            if self.include_depot:
                d0 = np.hypot(*(self.coords() - np.asarray(self.depot)).T)
                full = np.zeros((n + 1, n + 1))
                full[1:, 1:] = w
                full[0, 1:] = d0
                full[1:, 0] = d0
                w = full
            self._weights = w
        return self._weights

    def max_weight(self) -> float:
        w = self.weights()
        return float(w.max()) if w.size else 0.0

    @property
    def A(self) -> float:
        return 1.5 * self.max_weight() + 1e-9 if self.penalty_A is None else self.penalty_A

    def patient_node(self, p: int) -> int:
        return p + 1 if self.include_depot else p


def _distance_range(instance: ScheduleInstance) -> tuple[float, float]:
    xy = instance.coords()
    d = [math.dist(xy[i], xy[j]) for i, j in itertools.combinations(range(instance.n), 2)]
    return (max(d), min(d)) if d else (0.0, 0.0)


def edge_weight(instance: ScheduleInstance, i: int, j: int) -> float:
    """Distance plus the scaled squared start-time gap between patients ``i`` and ``j``."""
    if i == j:
        raise InvalidArgument("edge weight needs two distinct patients")
    pi, pj = instance.patients[i], instance.patients[j]
    d = math.hypot(pi.x - pj.x, pi.y - pj.y)
    gap = pi.tau_start - pj.tau_start
    if instance.epsilon == 0 or gap == 0:
        return d
    d_max, d_min = _distance_range(instance)
    if d_max == d_min:
        raise DegenerateInstance("all patient distances are equal; time-window term is undefined")
    return d + instance.epsilon * gap ** 2 / (d_max - d_min)


# ---------------------------------------------------------------------------
# QUBO


@dataclass
class SwpQubo:
    index: dict[tuple[int, int], int]
    linear: dict[int, float] = field(default_factory=dict)
    quadratic: dict[tuple[int, int], float] = field(default_factory=dict)
    constant: float = 0.0

    @property
    def num_vars(self) -> int:
        return len(self.index)

    def add_linear(self, i: int, v: float):
        self.linear[i] = self.linear.get(i, 0.0) + v

    def add_quadratic(self, i: int, j: int, v: float):
        key = (min(i, j), max(i, j))
        self.quadratic[key] = self.quadratic.get(key, 0.0) + v

    def add_squared_penalty(self, variables: Sequence[int], target: float, weight: float):
        """Add ``weight * (target - sum(x_v))**2`` using ``x**2 == x``."""
        self.constant += weight * target ** 2
        for v in variables:
            self.add_linear(v, weight * (1.0 - 2.0 * target))
        for a, b in itertools.combinations(variables, 2):
            self.add_quadratic(a, b, 2.0 * weight)

    def energy(self, bits: Sequence[int]) -> float:
        if len(bits) != self.num_vars:
            raise InvalidArgument(f"expected {self.num_vars} bits, got {len(bits)}")
        e = self.constant + sum(v * bits[i] for i, v in self.linear.items())
        return float(e + sum(v * bits[i] * bits[j] for (i, j), v in self.quadratic.items()))


def variable_index(instance: ScheduleInstance) -> dict[tuple[int, int], int]:
    nodes = range(instance.num_nodes)
    pairs = [(u, v) for u in nodes for v in nodes if u != v]
    return {pair: k for k, pair in enumerate(pairs)}


def build_qubo(instance: ScheduleInstance) -> SwpQubo:
    index = variable_index(instance)
    qubo = SwpQubo(index)
    w = instance.weights()
    A = instance.A
    for (u, v), k in index.items():
        qubo.add_linear(k, float(w[u, v]))
    for p in range(instance.n):
        u = instance.patient_node(p)
        qubo.add_squared_penalty([index[u, v] for v in range(instance.num_nodes) if v != u], 1.0, A)
        qubo.add_squared_penalty([index[v, u] for v in range(instance.num_nodes) if v != u], 1.0, A)
    if instance.include_depot:
        k_workers = float(instance.num_workers)
        qubo.add_squared_penalty([index[0, v] for v in range(1, instance.num_nodes)], k_workers, A)
        qubo.add_squared_penalty([index[v, 0] for v in range(1, instance.num_nodes)], k_workers, A)
    return qubo


def route_matrix(bits: Sequence[int], instance: ScheduleInstance) -> np.ndarray:
    index = variable_index(instance)
    if len(bits) != len(index):
        raise InvalidArgument(f"expected {len(index)} bits, got {len(bits)}")
    x = np.zeros((instance.num_nodes, instance.num_nodes), dtype=int)
    for (u, v), k in index.items():
        x[u, v] = int(bits[k])
    return x


def hamiltonian_energy(instance: ScheduleInstance, x: np.ndarray) -> float:
    """Term-by-term evaluation of the routing Hamiltonian on a route matrix."""
    w = instance.weights()
    A = instance.A
    nodes = range(instance.num_nodes)
    energy = sum(w[u, v] * x[u, v] for u in nodes for v in nodes if u != v)
    for p in range(instance.n):
        u = instance.patient_node(p)
        energy += A * (1 - sum(x[u, v] for v in nodes if v != u)) ** 2
        energy += A * (1 - sum(x[v, u] for v in nodes if v != u)) ** 2
    if instance.include_depot:
        k = instance.num_workers
        energy += A * (k - sum(x[0, v] for v in nodes if v != 0)) ** 2
        energy += A * (k - sum(x[v, 0] for v in nodes if v != 0)) ** 2
    return float(energy)


def qubo_to_ising(qubo: SwpQubo) -> IsingProblem:
    """Substitute ``x = (1 - z) / 2``."""
    h: dict[int, float] = {}
    J: dict[tuple[int, int], float] = {}
    offset = qubo.constant
    for i, c in qubo.linear.items():
        offset += c / 2
        h[i] = h.get(i, 0.0) - c / 2
    for (i, j), c in qubo.quadratic.items():
        offset += c / 4
        h[i] = h.get(i, 0.0) - c / 4
        h[j] = h.get(j, 0.0) - c / 4
        J[i, j] = J.get((i, j), 0.0) + c / 4
    return IsingProblem(qubo.num_vars, h, J, offset)


def solution_bits(instance: ScheduleInstance, routes: Sequence[Sequence[int]]) -> list[int]:
    """Bitstring of the route set, each route visited in the given patient order."""
    index = variable_index(instance)
    bits = [0] * len(index)
    for route in routes:
        nodes = [instance.patient_node(p) for p in route]
        if instance.include_depot:
            nodes = [0] + nodes + [0]
        for u, v in zip(nodes, nodes[1:]):
            bits[index[u, v]] = 1
    return bits


# ---------------------------------------------------------------------------
# decoding


@dataclass
class RouteDecoding:
    matrix: np.ndarray
    routes: list[list[int]]
    violations: list[str]
    has_cycle: bool
    feasible: bool

    @property
    def partition(self) -> Optional[tuple[tuple[int, ...], ...]]:
        return canonical_partition(self.routes) if self.feasible else None


def _tau_order(instance: ScheduleInstance, patients) -> list[int]:
    return sorted(patients, key=lambda p: (instance.patients[p].tau_start, p))


def decode_routes(bits: Sequence[int], instance: ScheduleInstance) -> RouteDecoding:
    """Read a bitstring as routes.

    ``violations`` lists every broken degree constraint of the Hamiltonian and
    every cycle.  ``feasible`` means the edges form exactly ``num_workers``
    disjoint simple routes covering each patient once (with a depot, each
    route leaves and returns to it); without a depot the degree-0 ends of
    such paths are expected and do not make it infeasible.
    """
    x = route_matrix(bits, instance)
    n, off = instance.n, 1 if instance.include_depot else 0
    patients_x = x[off:, off:]
    out_deg, in_deg = x[off:, :].sum(axis=1), x[:, off:].sum(axis=0)
    violations = []
    for p in range(n):
        if out_deg[p] == 0 and in_deg[p] == 0:
            violations.append(f"patient {p}: singleton (in 0, out 0)")
        else:
            if out_deg[p] != 1:
                violations.append(f"patient {p}: out-degree {out_deg[p]}")
            if in_deg[p] != 1:
                violations.append(f"patient {p}: in-degree {in_deg[p]}")
    if instance.include_depot:
        k = instance.num_workers
        if x[0].sum() != k:
            violations.append(f"depot: out-degree {x[0].sum()} != {k}")
        if x[:, 0].sum() != k:
            violations.append(f"depot: in-degree {x[:, 0].sum()} != {k}")

    # weakly connected components over patients
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in zip(*np.nonzero(patients_x)):
        parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for p in range(n):
        groups.setdefault(find(p), []).append(p)
    routes = [_tau_order(instance, g) for g in groups.values()]
    routes.sort(key=lambda r: min(r))

    has_cycle = False
    for g in groups.values():
        sub = patients_x[np.ix_(g, g)]
        edges = int(sub.sum())
        if edges >= len(g):  # a component with as many edges as nodes holds a cycle
            has_cycle = True
            violations.append(f"cycle among patients {sorted(g)}")

    degrees_ok = bool(np.all(patients_x.sum(axis=1) <= 1) and np.all(patients_x.sum(axis=0) <= 1))
    feasible = degrees_ok and not has_cycle and len(routes) == instance.num_workers
    if feasible and instance.include_depot:
        feasible = bool(np.all(out_deg == 1) and np.all(in_deg == 1)
                        and x[0].sum() == instance.num_workers
                        and x[:, 0].sum() == instance.num_workers)
        if feasible:
            # every route must enter from and return to the depot exactly once
            for g in groups.values():
                if x[0, [p + 1 for p in g]].sum() != 1 or x[[p + 1 for p in g], 0].sum() != 1:
                    feasible = False
    return RouteDecoding(x, routes, violations, has_cycle, feasible)


# ---------------------------------------------------------------------------
# partitions, classes and the exact oracle


def canonical_partition(routes) -> tuple[tuple[int, ...], ...]:
    blocks = [tuple(sorted(r)) for r in routes if len(r)]
    return tuple(sorted(blocks, key=lambda b: b[0]))


def _set_partitions(items: list[int], m: int):
    if m == 0:
        if not items:
            yield []
        return
    if len(items) < m:
        return
    first, rest = items[0], items[1:]
    # first item alone
    for p in _set_partitions(rest, m - 1):
        yield [[first]] + p
    # first item joins a block of a partition of the rest into m blocks
    for p in _set_partitions(rest, m):
        for i in range(len(p)):
            yield p[:i] + [[first] + p[i]] + p[i + 1:]


@lru_cache(maxsize=None)
def all_partitions(n: int, m: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """Canonical partitions of ``n`` patients into ``m`` routes, in label order."""
    found = {canonical_partition(p) for p in _set_partitions(list(range(n)), m)}
    return tuple(sorted(found))


def class_label(partition) -> int:
    canon = canonical_partition(partition)
    n = sum(len(b) for b in canon)
    try:
        return all_partitions(n, len(canon)).index(canon)
    except ValueError:
        raise InvalidArgument(f"{partition!r} is not a partition of 0..{n - 1}") from None


def partition_of(label: int, n: int, m: int) -> tuple[tuple[int, ...], ...]:
    return all_partitions(n, m)[label]


def num_solution_classes(n: int, m: int) -> int:
    """Ways to split ``n`` patients among ``m`` indistinguishable workers, none idle."""
    if m < 1 or n < 0:
        raise InvalidArgument("need m >= 1 and n >= 0")
    total = sum((-1) ** k * math.comb(m, m - k) * (m - k) ** n for k in range(m))
    return total // math.factorial(m)


def classifier_qubits(n: int, m: int) -> int:
    classes = num_solution_classes(n, m)
    return max(1, math.ceil(math.log2(classes))) if classes > 1 else 1


def route_cost(instance: ScheduleInstance, route: Sequence[int]) -> float:
    """Cost of one route visited in start-time order."""
    order = _tau_order(instance, route)
    w = instance.weights()
    nodes = [instance.patient_node(p) for p in order]
    if instance.include_depot:
        nodes = [0] + nodes + [0]
    return float(sum(w[u, v] for u, v in zip(nodes, nodes[1:])))


def partition_cost(instance: ScheduleInstance, partition) -> float:
    return sum(route_cost(instance, r) for r in partition)


@dataclass
class OracleSolution:
    partition: tuple[tuple[int, ...], ...]
    routes: list[list[int]]
    cost: float
    label: int
    worst_cost: float

    @property
    def cost_range(self) -> float:
        return self.worst_cost - self.cost


MAX_ORACLE_PATIENTS = 8


def brute_force_solve(instance: ScheduleInstance) -> OracleSolution:
    n, m = instance.n, instance.num_workers
    if m > n:
        raise Infeasible("more workers than patients")
    if n > MAX_ORACLE_PATIENTS:
        raise InvalidArgument(f"oracle limited to {MAX_ORACLE_PATIENTS} patients")
    costs = [partition_cost(instance, p) for p in all_partitions(n, m)]
    label = int(np.argmin(costs))
    best = all_partitions(n, m)[label]
    return OracleSolution(
        partition=best,
        routes=[_tau_order(instance, b) for b in best],
        cost=costs[label],
        label=label,
        worst_cost=max(costs),
    )


def solution_for_label(instance: ScheduleInstance, label: int) -> tuple[list[list[int]], float]:
    part = partition_of(label, instance.n, instance.num_workers)
    return [_tau_order(instance, b) for b in part], partition_cost(instance, part)


# ---------------------------------------------------------------------------
# dataset generation


@dataclass
class SwpCase:
    starts: list[int]
    ends: list[int]
    features: np.ndarray
    label: int
    cost: float
    worst_cost: float


@dataclass
class SwpDataset:
    num_patients: int
    num_workers: int
    seed: int
    overlap_degree: float
    coordinates: list[tuple[float, float]]
    epsilon: float
    include_depot: bool
    depot: tuple[float, float]
    cases: list[SwpCase]

    @property
    def X(self) -> np.ndarray:
        return np.array([c.features for c in self.cases]).reshape(len(self.cases), 2 * self.num_patients)

    @property
    def y(self) -> np.ndarray:
        return np.array([c.label for c in self.cases], dtype=int)

    @property
    def num_classes(self) -> int:
        return num_solution_classes(self.num_patients, self.num_workers)

    def instance(self, i: int, penalty_A: Optional[float] = None) -> ScheduleInstance:
        case = self.cases[i]
        patients = [Patient(x, y, s, e) for (x, y), s, e in zip(self.coordinates, case.starts, case.ends)]
        return ScheduleInstance(patients, self.num_workers, self.epsilon, penalty_A,
                                self.include_depot, self.depot)

    def __len__(self) -> int:
        return len(self.cases)


# week layout used by the generator
WORK_DAYS = 5
DAY_OPEN = 8 * 60
DAY_CLOSE = 20 * 60
WEEK_SPAN = (WORK_DAYS - 1) * DAY_MINUTES + DAY_CLOSE


def normalize_times(times) -> np.ndarray:
    """Map week-minute timestamps to [-1, 1] by time of day over the opening hours."""
    of_day = np.asarray(times, dtype=float) % DAY_MINUTES
    return 2.0 * (of_day - DAY_OPEN) / (DAY_CLOSE + 4 * SLOT_MINUTES - DAY_OPEN) - 1.0


def generate_dataset(n: int, m: int, num_cases: int, seed: int, overlap_degree: float = 0.5,
                     epsilon: float = 0.005, include_depot: bool = False,
                     depot: tuple[float, float] = (5.0, 5.0)) -> SwpDataset:
    """Draw weekly schedules with labels from the exact oracle.

    Patient coordinates and visit lengths (30 to 120 minutes) belong to the
    patients, so both are drawn once per dataset from ``seed``; coordinates
    lie on a 10 x 10 km integer grid.  For each case a weekday is picked and
    every visit starts on the 30-minute grid inside a band of that day's
    opening hours.  ``overlap_degree`` in [0, 1] narrows the band from the
    full 12-hour day (0) to a 2-hour window (1), so start times of different
    cases crowd into the same slots and the classes overlap.  Features are
    (start_1, end_1, ..., start_n, end_n) as time of day mapped to [-1, 1].
    """
    if not 0.0 <= overlap_degree <= 1.0:
        raise InvalidArgument("overlap_degree must lie in [0, 1]")
    if m > n:
        raise Infeasible(f"{m} workers for {n} patients is infeasible")
    if n > MAX_ORACLE_PATIENTS:
        raise InvalidArgument(f"dataset generation limited to {MAX_ORACLE_PATIENTS} patients")
    rng = np.random.default_rng(seed)
    coordinates = [tuple(map(float, xy)) for xy in rng.integers(0, 11, size=(n, 2))]
    # distinct positions keep the distance spread non-zero
    while n > 2 and len(set(coordinates)) < n:
        coordinates = [tuple(map(float, xy)) for xy in rng.integers(0, 11, size=(n, 2))]
    durations = SLOT_MINUTES * rng.integers(1, 5, size=n)
    day_slots = (DAY_CLOSE - DAY_OPEN) // SLOT_MINUTES
    band_slots = int(round((1 - overlap_degree) * day_slots + overlap_degree * 4))
    cases = []
    for _ in range(num_cases):
        day = int(rng.integers(WORK_DAYS))
        band_start = int(rng.integers(0, day_slots - band_slots + 1))
        slots = band_start + rng.integers(0, band_slots, size=n)
        starts = [day * DAY_MINUTES + DAY_OPEN + int(s) * SLOT_MINUTES for s in slots]
        ends = [s + int(d) for s, d in zip(starts, durations)]
        patients = [Patient(x, y, s, e) for (x, y), s, e in zip(coordinates, starts, ends)]
        inst = ScheduleInstance(patients, m, epsilon, None, include_depot, depot)
        sol = brute_force_solve(inst)
        times = np.ravel(np.column_stack([starts, ends]))
        cases.append(SwpCase(starts, ends, normalize_times(times), sol.label, sol.cost, sol.worst_cost))
    return SwpDataset(n, m, seed, float(overlap_degree), coordinates, float(epsilon),
                      include_depot, tuple(depot), cases)


def instance_features(instance: ScheduleInstance) -> np.ndarray:
    """The 2n feature vector (start_1, end_1, ..., start_n, end_n) of an instance."""
    times = [t for p in instance.patients for t in (p.tau_start, p.tau_end)]
    return normalize_times(times)


def random_instance(n: int, m: int, seed: int, overlap_degree: float = 0.5, epsilon: float = 0.005,
                    include_depot: bool = False) -> ScheduleInstance:
    """One instance drawn exactly as the first case of ``generate_dataset``."""
    return generate_dataset(n, m, 1, seed, overlap_degree, epsilon, include_depot).instance(0)


DATASET_FORMAT = "qcbr.swp-dataset"


def dataset_to_dict(ds: SwpDataset) -> dict:
    return {
        "format": DATASET_FORMAT,
        "version": 1,
        "num_patients": ds.num_patients,
        "num_workers": ds.num_workers,
        "seed": ds.seed,
        "overlap_degree": ds.overlap_degree,
        "epsilon": ds.epsilon,
        "include_depot": ds.include_depot,
        "depot": list(ds.depot),
        "coordinates": [list(c) for c in ds.coordinates],
        "time_unit": "minutes from week start",
        "cases": [
            {"starts": c.starts, "ends": c.ends, "features": list(map(float, c.features)),
             "label": c.label, "cost": c.cost, "worst_cost": c.worst_cost}
            for c in ds.cases
        ],
    }


def dataset_from_dict(doc: dict) -> SwpDataset:
    if doc.get("format") != DATASET_FORMAT:
        raise InvalidArgument("not an SWP dataset document")
    cases = [SwpCase(c["starts"], c["ends"], np.array(c["features"], dtype=float), int(c["label"]),
                     float(c["cost"]), float(c["worst_cost"])) for c in doc["cases"]]
    return SwpDataset(doc["num_patients"], doc["num_workers"], doc["seed"], doc["overlap_degree"],
                      [tuple(c) for c in doc["coordinates"]], doc["epsilon"], doc["include_depot"],
                      tuple(doc["depot"]), cases)


def save_dataset(ds: SwpDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_dict(ds), fh, indent=1)


def load_dataset(path) -> SwpDataset:
    with open(path, encoding="utf-8") as fh:
        return dataset_from_dict(json.load(fh))


def write_dataset_csv(ds: SwpDataset, path) -> None:
    n = ds.num_patients
    header = [f"{k}T{i + 1}" for i in range(n) for k in ("s", "e")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["case"] + header + ["label"])
        for i, c in enumerate(ds.cases):
            w.writerow([i] + [repr(float(v)) for v in c.features] + [c.label])


def instance_to_dict(inst: ScheduleInstance) -> dict:
    return {
        "format": "qcbr.swp-instance",
        "version": 1,
        "patients": [vars(p) for p in inst.patients],
        "num_workers": inst.num_workers,
        "epsilon": inst.epsilon,
        "penalty_A": inst.penalty_A,
        "include_depot": inst.include_depot,
        "depot": list(inst.depot),
    }


def instance_from_dict(doc: dict) -> ScheduleInstance:
    if doc.get("format") != "qcbr.swp-instance":
        raise InvalidArgument("not an SWP instance document")
    return ScheduleInstance([Patient(**p) for p in doc["patients"]], doc["num_workers"],
                            doc.get("epsilon", 0.0), doc.get("penalty_A"),
                            doc.get("include_depot", False), tuple(doc.get("depot", (5.0, 5.0))))
