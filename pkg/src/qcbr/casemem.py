"""Case memory and the retrieve / reuse / revise / retain cycle.

A case is a solved schedule: its time features, solution class, the
eigensolver parameters that prepare its solution, the schedule cost and
the route matrix.  Retrieval asks a trained classifier for the class of a
new instance; reuse averages the stored parameters of that class into a
warm start for a short, shot-limited eigensolver run; revise checks the
proposal against a reference solve; retain keeps novel or better cases
under a per-class cap.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from . import swp
from .errors import InvalidArgument, NoExperience, OptimizationFailure, QcbrError
from .optim import OptimizerConfig, OptimizerKind
from .preprocess import Preprocessor, fit_preprocessor, preprocessor_from_dict, preprocessor_to_dict
from .vqc import (AnsatzConfig, ClassifierModel, Entanglement, init_model, model_from_dict,
                  model_to_dict, predict_batch, train)
from .vqe import IsingProblem, basis_point, num_parameters, vqe_minimize

FORMAT_VERSION = 1


class SolvedBy(str, Enum):
    ORACLE = "ORACLE"
    VQE_FULL = "VQE_FULL"
    VQE_WARM = "VQE_WARM"
    RETRIEVED = "RETRIEVED"


class OracleMode(str, Enum):
    VQE_FULL = "VQE_FULL"
    BRUTE_FORCE = "BRUTE_FORCE"


@dataclass
class Case:
    features: np.ndarray
    class_label: int
    initial_point: np.ndarray
    energy: float
    routes: np.ndarray  # route matrix over the instance's nodes
    solved_by: SolvedBy

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.initial_point = np.asarray(self.initial_point, dtype=float)
        self.routes = np.asarray(self.routes, dtype=int)
        self.solved_by = SolvedBy(self.solved_by)
        self.class_label = int(self.class_label)
        self.energy = float(self.energy)
        if not math.isfinite(self.energy):
            raise InvalidArgument("case energy must be finite")


@dataclass(frozen=True)
class RetainConfig:
    per_class_cap: int = 32
    novelty_min_distance: float = 0.1
    # absolute acceptance tolerance; None means accept_fraction of the cost range
    energy_tolerance: Optional[float] = None
    accept_fraction: float = 0.05

    def __post_init__(self):
        if self.per_class_cap < 1:
            raise InvalidArgument("per_class_cap must be >= 1")
        if self.novelty_min_distance < 0:
            raise InvalidArgument("novelty_min_distance must be >= 0")
        if self.energy_tolerance is not None and self.energy_tolerance < 0:
            raise InvalidArgument("energy_tolerance must be >= 0")

    def tolerance_for(self, oracle: swp.OracleSolution) -> float:
        if self.energy_tolerance is not None:
            return self.energy_tolerance
        return self.accept_fraction * oracle.cost_range


@dataclass
class CaseMemory:
    num_classes: int
    config: RetainConfig = field(default_factory=RetainConfig)
    cases: list[Case] = field(default_factory=list)

    def __post_init__(self):
        self._rebuild_index()

    def _rebuild_index(self):
        self.index: dict[int, list[int]] = {}
        for i, c in enumerate(self.cases):
            self.index.setdefault(c.class_label, []).append(i)

    def __len__(self) -> int:
        return len(self.cases)

    def class_cases(self, label: int) -> list[Case]:
        return [self.cases[i] for i in self.index.get(label, [])]

    @property
    def labels(self) -> list[int]:
        return sorted(self.index)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.array([c.features for c in self.cases], dtype=float)
        y = np.array([c.class_label for c in self.cases], dtype=int)
        return X, y

    def check(self) -> None:
        """Raise if the index or the cap invariant is broken."""
        for label, idx in self.index.items():
            if any(self.cases[i].class_label != label for i in idx):
                raise QcbrError("index points at a case of another class")
            if len(idx) > self.config.per_class_cap:
                raise QcbrError(f"class {label} exceeds the retention cap")
        if sum(len(v) for v in self.index.values()) != len(self.cases):
            raise QcbrError("index does not cover every case")


# ---------------------------------------------------------------------------
# classifier wrapper


@dataclass
class CaseClassifier:
    """A trained classifier plus the feature pipeline it expects."""

    model: ClassifierModel
    preprocessor: Optional[Preprocessor] = None

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X if self.preprocessor is None else self.preprocessor.transform(X)

    def predict_batch(self, X) -> np.ndarray:
        return predict_batch(self.model, self.transform(X))

    def predict(self, features) -> int:
        return int(self.predict_batch(features)[0])


@dataclass(frozen=True)
class ClassifierSettings:
    num_layers: int = 8
    dims: int = 8  # 2 selects the PCA + ICA path
    entanglement: Entanglement = Entanglement.NONE
    angle_range: float = 1.0
    optimizer: OptimizerConfig = OptimizerConfig(kind=OptimizerKind.FD_QUASI_NEWTON,
                                                 max_iterations=200)

    def __post_init__(self):
        object.__setattr__(self, "entanglement", Entanglement(self.entanglement))
        if self.num_layers < 1:
            raise InvalidArgument("num_layers must be >= 1")
        if self.dims < 1:
            raise InvalidArgument("dims must be >= 1")


def register_qubits(num_classes: int) -> int:
    return max(1, math.ceil(math.log2(num_classes))) if num_classes > 1 else 1


def fit_classifier(X, y, num_classes: int, settings: ClassifierSettings, seed: int = 0,
                   warm: Optional[CaseClassifier] = None,
                   max_iterations: Optional[int] = None) -> CaseClassifier:
    """Train a classifier on raw 2n features.

    ``dims`` below the raw width runs the PCA + ICA reduction first.  With
    ``warm`` the previous parameters (and feature pipeline) are the starting
    point instead of a fresh random model.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if warm is not None:
        pre = warm.preprocessor
        model = warm.model
    else:
        pre = None
        if settings.dims < X.shape[1]:
            pre = fit_preprocessor(X, settings.dims, seed=seed)
        width = X.shape[1] if pre is None else pre.out_dim
        config = AnsatzConfig(register_qubits(num_classes), settings.num_layers, width,
                              settings.entanglement)
        model = init_model(config, num_classes, seed=seed, angle_range=settings.angle_range)
    Z = X if pre is None else pre.transform(X)
    optimizer = settings.optimizer
    if max_iterations is not None:
        optimizer = optimizer.with_(max_iterations=max_iterations)
    model, _ = train(model, (Z, y), optimizer, seed=seed)
    return CaseClassifier(model, pre)


# ---------------------------------------------------------------------------
# the four phases


def retrieve(memory: CaseMemory, classifier, features) -> tuple[int, list[Case]]:
    """Predict the class of ``features`` and return that class's retained cases."""
    if not memory.cases:
        raise NoExperience("case memory is empty")
    labels = memory.labels
    if len(labels) == 1:
        label = labels[0]
    elif classifier is None:
        raise NoExperience("no classifier has been trained yet")
    else:
        label = int(classifier.predict(features))
    return label, memory.class_cases(label)


def instance_problem(instance: swp.ScheduleInstance) -> tuple[IsingProblem, np.ndarray]:
    problem = swp.qubo_to_ising(swp.build_qubo(instance))
    return problem, problem.energy_table()


@dataclass(frozen=True)
class SolverSettings:
    depth: int = 2
    k_shots: int = 8
    reuse_optimizer: OptimizerConfig = OptimizerConfig(max_iterations=40, a=0.2, c=0.3)
    full_optimizer: OptimizerConfig = OptimizerConfig(max_iterations=1000)
    full_sample_shots: int = 64

    def __post_init__(self):
        if self.depth < 1:
            raise InvalidArgument("depth must be >= 1")
        if self.k_shots < 1:
            raise InvalidArgument("k_shots must be >= 1")


def _case_from_routes(instance: swp.ScheduleInstance, features, routes, depth: int,
                      solved_by: SolvedBy) -> Case:
    partition = swp.canonical_partition(routes)
    bits = swp.solution_bits(instance, routes)
    return Case(
        features=features,
        class_label=swp.class_label(partition),
        initial_point=basis_point(bits, depth),
        energy=swp.partition_cost(instance, partition),
        routes=swp.route_matrix(bits, instance),
        solved_by=solved_by,
    )


def _best_feasible(instance: swp.ScheduleInstance, indices: Iterable[int]):
    """Cheapest feasible route set among sampled basis indices, or None."""
    n_vars = len(swp.variable_index(instance))
    best = None
    for idx in sorted(set(indices)):
        bits = [(idx >> i) & 1 for i in range(n_vars)]
        dec = swp.decode_routes(bits, instance)
        if not dec.feasible:
            continue
        cost = swp.partition_cost(instance, dec.partition)
        if best is None or cost < best[0] - 1e-12:
            best = (cost, dec.routes)
    return best


def reuse(memory: CaseMemory, label: int, instance: swp.ScheduleInstance, features,
          settings: SolverSettings = SolverSettings(), seed: int = 0,
          k_shots: Optional[int] = None) -> Case:
    """Warm-started, shot-limited eigensolver run from the class's mean parameters.

    Every bitstring sampled during the run is decoded; the cheapest one that
    forms a valid schedule becomes the proposal.  If none does, the stored
    solution class is applied to the instance directly (``RETRIEVED``).
    """
    shots = settings.k_shots if k_shots is None else k_shots
    if shots < 1:
        raise InvalidArgument("k_shots must be >= 1")
    stored = memory.class_cases(label)
    if not stored:
        raise NoExperience(f"no retained case of class {label}")
    n_params = num_parameters(len(swp.variable_index(instance)), settings.depth)
    points = [c.initial_point for c in stored if c.initial_point.size == n_params]
    if not points:
        raise NoExperience(f"no stored parameters of class {label} fit this instance")
    start = np.mean(points, axis=0)
    problem, table = instance_problem(instance)
    result = vqe_minimize(problem, settings.depth, settings.reuse_optimizer,
                          initial_point=start, seed=seed, shots=shots, energies=table)
    candidates = list(result.sampled) + [swp_index(result.best_bitstring)]
    best = _best_feasible(instance, candidates)
    if best is None:
        routes, _ = swp.solution_for_label(instance, label)
        return _case_from_routes(instance, features, routes, settings.depth, SolvedBy.RETRIEVED)
    return _case_from_routes(instance, features, best[1], settings.depth, SolvedBy.VQE_WARM)


def swp_index(bits: Sequence[int]) -> int:
    return sum(int(b) << i for i, b in enumerate(bits))


def full_solve(instance: swp.ScheduleInstance, features, mode: OracleMode,
               settings: SolverSettings = SolverSettings(), seed: int = 0,
               oracle: Optional[swp.OracleSolution] = None) -> Case:
    """Reference solution: the exact oracle or a cold, exact-expectation eigensolver run."""
    mode = OracleMode(mode)
    if mode is OracleMode.BRUTE_FORCE:
        oracle = oracle or swp.brute_force_solve(instance)
        return _case_from_routes(instance, features, oracle.routes, settings.depth, SolvedBy.ORACLE)
    problem, table = instance_problem(instance)
    result = vqe_minimize(problem, settings.depth, settings.full_optimizer, seed=seed,
                          sample_shots=settings.full_sample_shots, energies=table)
    best = _best_feasible(instance, list(result.sampled) + [swp_index(result.best_bitstring)])
    if best is None:
        raise OptimizationFailure("no sampled bitstring decodes to a valid schedule", result.trace)
    return _case_from_routes(instance, features, best[1], settings.depth, SolvedBy.VQE_FULL)


def revise(proposed: Case, instance: swp.ScheduleInstance, oracle_mode: OracleMode,
           config: RetainConfig = RetainConfig(), settings: SolverSettings = SolverSettings(),
           seed: int = 0, oracle: Optional[swp.OracleSolution] = None) -> tuple[Case, bool]:
    """Accept the proposal if it is within the tolerance of the reference solve."""
    oracle = oracle or swp.brute_force_solve(instance)
    reference = full_solve(instance, proposed.features, oracle_mode, settings, seed, oracle)
    tolerance = config.tolerance_for(oracle)
    if proposed.energy <= reference.energy + tolerance:
        return proposed, True
    return reference, False


def retain(memory: CaseMemory, case: Case) -> bool:
    """Keep ``case`` if it is novel within a non-full class, or beats the class's worst case.

    Beating the worst case evicts it, so the class size never grows past the cap.
    """
    cfg = memory.config
    if memory.cases and case.features.shape != memory.cases[0].features.shape:
        raise InvalidArgument("case features do not match the memory's feature width")
    if not 0 <= case.class_label < memory.num_classes:
        raise InvalidArgument(f"class {case.class_label} outside the memory's {memory.num_classes} classes")
    idx = memory.index.get(case.class_label, [])
    if not idx:
        memory.cases.append(case)
        memory._rebuild_index()
        return True
    same = np.array([memory.cases[i].features for i in idx])
    nearest = float(np.min(np.linalg.norm(same - case.features, axis=1)))
    if len(idx) < cfg.per_class_cap and nearest >= cfg.novelty_min_distance:
        memory.cases.append(case)
        memory._rebuild_index()
        return True
    worst = max(idx, key=lambda i: (memory.cases[i].energy, i))
    if case.energy < memory.cases[worst].energy:
        memory.cases[worst] = case
        return True
    return False


# ---------------------------------------------------------------------------
# streaming cycle

LOG_COLUMNS = ["case_id", "phase", "label_predicted", "label_true", "energy_proposed",
               "energy_final", "accepted", "retained", "label_proposed", "label_final"]


@dataclass(frozen=True)
class CycleConfig:
    oracle_mode: OracleMode = OracleMode.BRUTE_FORCE
    retrain_every: int = 20
    retrain_iterations: int = 10
    initial_iterations: int = 50
    # a shallow, briefly trained classifier overfits the small capped memory less
    classifier: ClassifierSettings = ClassifierSettings(num_layers=2)
    solver: SolverSettings = SolverSettings()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "oracle_mode", OracleMode(self.oracle_mode))
        if self.retrain_every < 1:
            raise InvalidArgument("retrain_every must be >= 1")


@dataclass
class CycleRecord:
    case_id: int
    phase: str
    label_predicted: int
    label_true: int
    energy_proposed: float
    energy_final: float
    accepted: bool
    retained: bool
    label_proposed: int
    label_final: int

    def row(self) -> list:
        return [self.case_id, self.phase, self.label_predicted, self.label_true,
                repr(float(self.energy_proposed)), repr(float(self.energy_final)),
                int(self.accepted), int(self.retained), self.label_proposed, self.label_final]


def cbr_cycle(memory: CaseMemory, classifier: Optional[CaseClassifier],
              stream: Iterable[tuple[swp.ScheduleInstance, np.ndarray]],
              config: CycleConfig = CycleConfig()) -> tuple[list[CycleRecord], Optional[CaseClassifier]]:
    """Run retrieve, reuse, revise and retain over a stream of instances.

    Each stream item is ``(instance, features)``.  The classifier is
    retrained on the memory every ``retrain_every`` cases, warm-starting
    from its current parameters once it exists; a retrain that fails keeps
    the current classifier.  A failure on one case is logged with phase
    ``"error"`` and the stream continues.
    """
    log: list[CycleRecord] = []
    for case_id, (instance, features) in enumerate(stream):
        seed = config.seed + case_id
        features = np.asarray(features, dtype=float)
        predicted, proposed, phase, oracle = -1, None, "reuse", None
        try:
            oracle = swp.brute_force_solve(instance)
            try:
                predicted, _ = retrieve(memory, classifier, features)
                proposed = reuse(memory, predicted, instance, features, config.solver, seed)
            except NoExperience:
                phase = "full_solve"
            if proposed is None:
                final = full_solve(instance, features, config.oracle_mode, config.solver, seed, oracle)
                accepted = False
            else:
                final, accepted = revise(proposed, instance, config.oracle_mode, memory.config,
                                         config.solver, seed, oracle)
            kept = retain(memory, final)
        except (QcbrError, ValueError):
            log.append(CycleRecord(case_id, "error", predicted, -1 if oracle is None else oracle.label,
                                   math.nan, math.nan, False, False, -1, -1))
            continue
        log.append(CycleRecord(
            case_id, phase, predicted, oracle.label,
            math.nan if proposed is None else proposed.energy, final.energy, accepted, kept,
            -1 if proposed is None else proposed.class_label, final.class_label,
        ))
        if (case_id + 1) % config.retrain_every == 0 and len(memory.labels) > 1:
            X, y = memory.arrays()
            iters = config.initial_iterations if classifier is None else config.retrain_iterations
            try:
                classifier = fit_classifier(X, y, memory.num_classes, config.classifier,
                                            seed=seed, warm=classifier, max_iterations=iters)
            except QcbrError:
                pass  # too little data for the feature pipeline; keep the current classifier
    return log, classifier


def dataset_stream(ds: swp.SwpDataset, limit: Optional[int] = None):
    count = len(ds) if limit is None else min(limit, len(ds))
    for i in range(count):
        yield ds.instance(i), ds.cases[i].features


DEFAULT_CHECKPOINTS = (20, 50, 100, 240, 340, 480, 500, 580)


def windowed_correctness(log: Sequence[CycleRecord], checkpoints=DEFAULT_CHECKPOINTS,
                         stage: str = "proposed") -> list[tuple[int, int, float]]:
    """Correctness over the cases between consecutive checkpoints.

    ``stage="proposed"`` scores the reuse proposal (a case solved without
    experience counts as a miss); ``stage="final"`` scores the revised case.
    Returns ``(start, end, fraction)`` per window, ``end`` inclusive and 1-based.
    """
    if stage not in ("proposed", "final"):
        raise InvalidArgument("stage must be 'proposed' or 'final'")
    hits = np.array([
        (r.label_proposed if stage == "proposed" else r.label_final) == r.label_true
        for r in log
    ], dtype=float)
    out, prev = [], 0
    for cp in checkpoints:
        end = min(cp, len(hits))
        if end > prev:
            out.append((prev + 1, end, float(hits[prev:end].mean())))
        prev = end
    return out


def write_log(log: Sequence[CycleRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in log:
            w.writerow(r.row())


# ---------------------------------------------------------------------------
# KNN baseline and cross-validation


def knn_predict(train_X, train_y, test_X, k: int) -> np.ndarray:
    """Majority label of the k nearest training points (Euclidean); ties go to the smallest label."""
    train_X = np.atleast_2d(np.asarray(train_X, dtype=float))
    train_y = np.asarray(train_y, dtype=int)
    test_X = np.atleast_2d(np.asarray(test_X, dtype=float))
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    if train_y.size == 0:
        raise NoExperience("KNN needs at least one training case")
    k = min(k, train_y.size)
    d2 = ((test_X[:, None, :] - train_X[None, :, :]) ** 2).sum(axis=-1)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    width = int(train_y.max()) + 1
    # argmax returns the first maximum, i.e. the smallest tied label
    return np.array([np.argmax(np.bincount(train_y[row], minlength=width)) for row in nearest])


def knn_baseline(train_cases: Sequence[Case], test_features, k: int = 5) -> int:
    X = [c.features for c in train_cases]
    y = [c.class_label for c in train_cases]
    return int(knn_predict(X, y, test_features, k)[0])


def kfold_indices(num_samples: int, folds: int = 10, seed: int = 0) -> list[np.ndarray]:
    """Shuffled, near-equal test folds covering every sample once."""
    if not 2 <= folds <= num_samples:
        raise InvalidArgument(f"folds must lie in [2, {num_samples}]")
    perm = np.random.default_rng(seed).permutation(num_samples)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def leave_one_out_indices(num_samples: int) -> list[np.ndarray]:
    return [np.array([i]) for i in range(num_samples)]


def cross_validate(fit_predict, X, y, test_folds: Sequence[np.ndarray]) -> list[float]:
    """Accuracy per fold of ``fit_predict(train_X, train_y, test_X, fold) -> labels``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    scores = []
    for f, test in enumerate(test_folds):
        mask = np.ones(y.size, dtype=bool)
        mask[test] = False
        pred = fit_predict(X[mask], y[mask], X[test], f)
        scores.append(float(np.mean(np.asarray(pred) == y[test])))
    return scores


def classifier_fit_predict(num_classes: int, settings: ClassifierSettings, seed: int = 0):
    """A ``cross_validate`` callback that trains a fresh classifier per fold."""
    def fit_predict(train_X, train_y, test_X, fold):
        clf = fit_classifier(train_X, train_y, num_classes, settings, seed=seed + fold)
        return clf.predict_batch(test_X)
    return fit_predict


def knn_fit_predict(k: int):
    """A ``cross_validate`` callback for the KNN baseline."""
    def fit_predict(train_X, train_y, test_X, fold):
        return knn_predict(train_X, train_y, test_X, k)
    return fit_predict


def majority_baseline(y) -> float:
    y = np.asarray(y, dtype=int)
    return float(np.bincount(y).max() / y.size)


# ---------------------------------------------------------------------------
# persistence


def _case_to_dict(c: Case) -> dict:
    return {"features": c.features.tolist(), "class_label": c.class_label,
            "initial_point": c.initial_point.tolist(), "energy": c.energy,
            "routes": c.routes.tolist(), "solved_by": c.solved_by.value}


def _case_from_dict(d: dict) -> Case:
    return Case(np.array(d["features"], dtype=float), d["class_label"],
                np.array(d["initial_point"], dtype=float), d["energy"],
                np.array(d["routes"], dtype=int), d["solved_by"])


def classifier_to_dict(clf: CaseClassifier) -> dict:
    return {"model": model_to_dict(clf.model),
            "preprocessor": None if clf.preprocessor is None else preprocessor_to_dict(clf.preprocessor)}


def classifier_from_dict(doc: dict) -> CaseClassifier:
    pre = doc.get("preprocessor")
    return CaseClassifier(model_from_dict(doc["model"]),
                          None if pre is None else preprocessor_from_dict(pre))


def memory_to_dict(memory: CaseMemory, classifier: Optional[CaseClassifier] = None) -> dict:
    cfg = memory.config
    return {
        "format": "qcbr.case-memory",
        "version": FORMAT_VERSION,
        "num_classes": memory.num_classes,
        "retain": {"per_class_cap": cfg.per_class_cap,
                   "novelty_min_distance": cfg.novelty_min_distance,
                   "energy_tolerance": cfg.energy_tolerance,
                   "accept_fraction": cfg.accept_fraction},
        "cases": [_case_to_dict(c) for c in memory.cases],
        "classifier": None if classifier is None else classifier_to_dict(classifier),
    }


def memory_from_dict(doc: dict) -> tuple[CaseMemory, Optional[CaseClassifier]]:
    if doc.get("format") != "qcbr.case-memory":
        raise InvalidArgument("not a case memory document")
    memory = CaseMemory(int(doc["num_classes"]), RetainConfig(**doc["retain"]),
                        [_case_from_dict(c) for c in doc["cases"]])
    clf = doc.get("classifier")
    return memory, None if clf is None else classifier_from_dict(clf)


def save_memory(memory: CaseMemory, path, classifier: Optional[CaseClassifier] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(memory_to_dict(memory, classifier), fh, indent=1)


def load_memory(path) -> tuple[CaseMemory, Optional[CaseClassifier]]:
    with open(path, encoding="utf-8") as fh:
        return memory_from_dict(json.load(fh))
