import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcbr import casemem as cm
from qcbr import swp
from qcbr.casemem import Case, CaseMemory, OracleMode, RetainConfig, SolvedBy
from qcbr.errors import InvalidArgument, NoExperience
from qcbr.optim import OptimizerConfig
from qcbr.vqe import basis_point

DEPTH = cm.SolverSettings().depth


@pytest.fixture(scope="module")
def dataset():
    return swp.generate_dataset(4, 3, 60, seed=7)


def oracle_case(ds, i):
    return cm.full_solve(ds.instance(i), ds.cases[i].features, OracleMode.BRUTE_FORCE)


def make_case(label, features, energy, n_vars=12):
    return Case(np.asarray(features, dtype=float), label, np.zeros(3 * n_vars), energy,
                np.zeros((4, 4)), SolvedBy.ORACLE)


# ---------------------------------------------------------------------------
# retrieve


def test_retrieve_on_empty_memory_signals_no_experience():
    with pytest.raises(NoExperience):
        cm.retrieve(CaseMemory(6), None, np.zeros(8))


def test_retrieve_with_one_class_returns_it():
    memory = CaseMemory(6, cases=[make_case(4, np.zeros(8), 1.0), make_case(4, np.ones(8), 2.0)])
    label, cases = cm.retrieve(memory, None, np.full(8, -0.3))
    assert label == 4 and len(cases) == 2


def test_retrieve_needs_a_classifier_for_several_classes():
    memory = CaseMemory(6, cases=[make_case(0, np.zeros(8), 1.0), make_case(1, np.ones(8), 1.0)])
    with pytest.raises(NoExperience):
        cm.retrieve(memory, None, np.zeros(8))


def test_trained_classifier_retrieves_labels_of_stored_cases(dataset):
    memory = CaseMemory(6)
    for i in range(40):
        cm.retain(memory, oracle_case(dataset, i))
    X, y = memory.arrays()
    settings = cm.ClassifierSettings(num_layers=8)
    clf = cm.fit_classifier(X, y, 6, settings, seed=0, max_iterations=150)
    hits = [cm.retrieve(memory, clf, c.features)[0] == c.class_label for c in memory.cases]
    assert np.mean(hits) >= 0.9


# ---------------------------------------------------------------------------
# reuse


def test_reuse_rejects_zero_shots(dataset):
    memory = CaseMemory(6, cases=[oracle_case(dataset, 0)])
    with pytest.raises(InvalidArgument):
        cm.reuse(memory, memory.cases[0].class_label, dataset.instance(0), dataset.cases[0].features,
                 k_shots=0)


def test_reuse_of_an_empty_class_signals_no_experience(dataset):
    case = oracle_case(dataset, 0)
    memory = CaseMemory(6, cases=[case])
    other = (case.class_label + 1) % 6
    with pytest.raises(NoExperience):
        cm.reuse(memory, other, dataset.instance(0), case.features)


def test_reuse_from_the_optimum_stays_within_tolerance(dataset):
    inst = dataset.instance(3)
    stored = oracle_case(dataset, 3)
    memory = CaseMemory(6, cases=[stored])
    proposed = cm.reuse(memory, stored.class_label, inst, stored.features, seed=1)
    tolerance = RetainConfig().tolerance_for(swp.brute_force_solve(inst))
    assert proposed.energy <= stored.energy + tolerance
    assert proposed.solved_by is SolvedBy.VQE_WARM


def test_reuse_starts_from_the_mean_initial_point(dataset, monkeypatch):
    seen = {}
    real = cm.vqe_minimize

    def spy(problem, depth, optimizer, initial_point=None, **kw):
        seen["start"] = np.array(initial_point)
        return real(problem, depth, optimizer.with_(max_iterations=2), initial_point=initial_point, **kw)

    monkeypatch.setattr(cm, "vqe_minimize", spy)
    base = oracle_case(dataset, 5)
    v = np.linspace(-1, 1, base.initial_point.size)
    memory = CaseMemory(6, cases=[
        Case(base.features, base.class_label, v, base.energy, base.routes, base.solved_by),
        Case(base.features + 0.5, base.class_label, v, base.energy, base.routes, base.solved_by),
    ])
    cm.reuse(memory, base.class_label, dataset.instance(5), base.features)
    np.testing.assert_array_equal(seen["start"], v)


# ---------------------------------------------------------------------------
# revise


def test_revise_accepts_the_reference_itself(dataset):
    inst = dataset.instance(2)
    reference = oracle_case(dataset, 2)
    final, accepted = cm.revise(reference, inst, OracleMode.BRUTE_FORCE)
    assert accepted and final is reference


def test_revise_rejects_a_large_gap(dataset):
    inst = dataset.instance(2)
    oracle = swp.brute_force_solve(inst)
    reference = oracle_case(dataset, 2)
    tolerance = RetainConfig().tolerance_for(oracle)
    bad = Case(reference.features, (reference.class_label + 1) % 6, reference.initial_point,
               reference.energy + 10 * tolerance, reference.routes, SolvedBy.VQE_WARM)
    final, accepted = cm.revise(bad, inst, OracleMode.BRUTE_FORCE)
    assert not accepted
    assert final.class_label == reference.class_label and final.energy == reference.energy
    assert final.solved_by is SolvedBy.ORACLE


def test_infinite_tolerance_always_accepts(dataset):
    inst = dataset.instance(2)
    reference = oracle_case(dataset, 2)
    bad = Case(reference.features, 0, reference.initial_point, reference.energy + 1e6,
               reference.routes, SolvedBy.VQE_WARM)
    final, accepted = cm.revise(bad, inst, OracleMode.BRUTE_FORCE, RetainConfig(energy_tolerance=math.inf))
    assert accepted and final is bad


def test_revise_with_full_eigensolver(dataset):
    inst = swp.random_instance(3, 2, seed=1)
    oracle = swp.brute_force_solve(inst)
    features = swp.instance_features(inst)
    settings = cm.SolverSettings(full_optimizer=OptimizerConfig(max_iterations=150))
    wrong = [lab for lab in range(3) if lab != oracle.label][0]
    routes, cost = swp.solution_for_label(inst, wrong)
    proposal = cm._case_from_routes(inst, features, routes, settings.depth, SolvedBy.VQE_WARM)
    final, _ = cm.revise(proposal, inst, OracleMode.VQE_FULL, settings=settings)
    assert final.solved_by in (SolvedBy.VQE_FULL, SolvedBy.VQE_WARM)
    assert final.energy <= proposal.energy + RetainConfig().tolerance_for(oracle)


# ---------------------------------------------------------------------------
# retain


def test_empty_class_is_retained():
    memory = CaseMemory(6)
    assert cm.retain(memory, make_case(2, np.zeros(8), 3.0))
    assert memory.index == {2: [0]}


def test_duplicate_with_equal_energy_is_not_retained():
    memory = CaseMemory(6, cases=[make_case(2, np.zeros(8), 3.0)])
    assert not cm.retain(memory, make_case(2, np.zeros(8), 3.0))
    assert len(memory) == 1


def test_duplicate_with_better_energy_replaces_the_worst():
    memory = CaseMemory(6, cases=[make_case(2, np.zeros(8), 3.0)])
    assert cm.retain(memory, make_case(2, np.zeros(8), 1.0))
    assert len(memory) == 1 and memory.cases[0].energy == 1.0


def test_full_class_evicts_its_worst_case():
    cfg = RetainConfig(per_class_cap=3)
    memory = CaseMemory(6, cfg, [make_case(1, np.full(8, i), e) for i, e in enumerate((2.0, 5.0, 3.0))])
    assert cm.retain(memory, make_case(1, np.full(8, 10.0), 4.0))
    assert sorted(c.energy for c in memory.class_cases(1)) == [2.0, 3.0, 4.0]
    assert not cm.retain(memory, make_case(1, np.full(8, 20.0), 4.5))
    memory.check()


@given(st.lists(st.tuples(st.integers(0, 2), st.floats(-1, 1), st.floats(0, 10)), max_size=60),
       st.integers(1, 4))
def test_memory_never_exceeds_its_capacity(stream, cap):
    memory = CaseMemory(3, RetainConfig(per_class_cap=cap, novelty_min_distance=0.05))
    for label, x, energy in stream:
        cm.retain(memory, make_case(label, np.full(8, x), energy))
        memory.check()
    assert len(memory) <= 3 * cap


def test_retain_config_validation():
    with pytest.raises(InvalidArgument):
        RetainConfig(per_class_cap=0)
    with pytest.raises(InvalidArgument):
        RetainConfig(novelty_min_distance=-1)
    with pytest.raises(InvalidArgument):
        make_case(0, np.zeros(8), math.nan)


# ---------------------------------------------------------------------------
# the cycle


def short_config(**kw):
    settings = cm.ClassifierSettings(num_layers=2)
    base = dict(retrain_every=5, initial_iterations=10, retrain_iterations=5, classifier=settings,
                solver=cm.SolverSettings(reuse_optimizer=OptimizerConfig(max_iterations=5, a=0.2, c=0.3)))
    base.update(kw)
    return cm.CycleConfig(**base)


def test_single_case_cold_start(dataset):
    memory = CaseMemory(6)
    log, clf = cm.cbr_cycle(memory, None, cm.dataset_stream(dataset, 1), short_config())
    assert len(log) == 1
    assert log[0].phase == "full_solve" and log[0].retained
    assert log[0].label_final == log[0].label_true
    assert len(memory) == 1 and clf is None


def test_cycle_replay_is_identical(dataset):
    logs = []
    for _ in range(2):
        memory = CaseMemory(6)
        log, _ = cm.cbr_cycle(memory, None, cm.dataset_stream(dataset, 15), short_config(seed=3))
        logs.append([r.row() for r in log])
    assert logs[0] == logs[1]


def test_cycle_invariants(dataset):
    memory = CaseMemory(6, RetainConfig(per_class_cap=2))
    log, clf = cm.cbr_cycle(memory, None, cm.dataset_stream(dataset, 20), short_config())
    assert len(log) == 20 and clf is not None
    assert {r.phase for r in log} <= {"full_solve", "reuse"}
    assert len(memory) <= 6 * 2
    memory.check()
    for r in log:
        if r.phase == "reuse":
            assert r.energy_final <= r.energy_proposed + 1e-9 or r.accepted
    for i, case in enumerate(memory.cases):
        assert case.initial_point.size == 12 * (DEPTH + 1)
        if case.solved_by in (SolvedBy.ORACLE, SolvedBy.VQE_FULL):
            bits = [int(case.routes[u, v]) for (u, v) in swp.variable_index(dataset.instance(0))]
            assert swp.decode_routes(bits, dataset.instance(0)).feasible


def test_failing_case_is_logged_and_the_stream_continues(dataset):
    good = (dataset.instance(0), dataset.cases[0].features)
    h = math.sqrt(3) / 2
    bad_patients = [swp.Patient(0, 0, 480, 510), swp.Patient(1, 0, 540, 570), swp.Patient(0.5, h, 600, 630)]
    # equal distances leave the time-window term undefined
    degenerate = (swp.ScheduleInstance(bad_patients, 2, epsilon=0.01), np.zeros(6))
    narrow = (swp.ScheduleInstance(bad_patients, 2, epsilon=0.0), np.zeros(6))
    memory = CaseMemory(6)
    log, _ = cm.cbr_cycle(memory, None, [good, degenerate, narrow, good], short_config())
    assert [r.phase for r in log] == ["full_solve", "error", "error", "reuse"]
    assert log[1].label_true == -1 and log[2].label_true >= 0
    assert len(memory) == 1


def test_retain_rejects_foreign_cases():
    memory = CaseMemory(6, cases=[make_case(0, np.zeros(8), 1.0)])
    with pytest.raises(InvalidArgument):
        cm.retain(memory, make_case(1, np.zeros(6), 1.0))
    with pytest.raises(InvalidArgument):
        cm.retain(memory, make_case(6, np.zeros(8), 1.0))


def test_windowed_correctness():
    def rec(i, prop, final, true=0):
        return cm.CycleRecord(i, "reuse", 0, true, 1.0, 1.0, True, True, prop, final)

    log = [rec(i, 0 if i % 2 else 1, 0) for i in range(10)]
    windows = cm.windowed_correctness(log, (4, 10), "proposed")
    assert windows == [(1, 4, 0.5), (5, 10, 0.5)]
    assert cm.windowed_correctness(log, (4, 10, 20), "final") == [(1, 4, 1.0), (5, 10, 1.0)]
    with pytest.raises(InvalidArgument):
        cm.windowed_correctness(log, (4,), "middle")


# ---------------------------------------------------------------------------
# KNN and cross-validation


def test_knn_exact_match_and_constant_labels():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    assert cm.knn_predict(X, [0, 1, 2], [[1.0, 1.0]], 1)[0] == 1
    assert set(cm.knn_predict(X, [3, 3, 3], np.random.default_rng(0).normal(size=(5, 2)), 3)) == {3}


def test_knn_ties_go_to_the_smallest_label():
    X = np.array([[-1.0], [1.0]])
    assert cm.knn_predict(X, [4, 2], [[0.0]], 2)[0] == 2


def test_knn_on_cases_and_empty_training_set():
    cases = [make_case(1, np.zeros(8), 1.0), make_case(0, np.ones(8), 1.0)]
    assert cm.knn_baseline(cases, np.full(8, 0.9), k=1) == 0
    with pytest.raises(NoExperience):
        cm.knn_baseline([], np.zeros(8))
    with pytest.raises(InvalidArgument):
        cm.knn_baseline(cases, np.zeros(8), k=0)


@given(st.integers(2, 40), st.integers(0, 100))
def test_kfold_partitions_every_sample_once(n, seed):
    folds = cm.kfold_indices(n, min(10, n), seed)
    merged = np.sort(np.concatenate(folds))
    np.testing.assert_array_equal(merged, np.arange(n))
    assert max(f.size for f in folds) - min(f.size for f in folds) <= 1


def test_cross_validate_with_knn_and_majority():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 0.3, (20, 2)), rng.normal(3, 0.3, (20, 2))])
    y = np.repeat([0, 1], 20)
    scores = cm.cross_validate(cm.knn_fit_predict(3), X, y, cm.kfold_indices(40, 5, 0))
    assert np.mean(scores) == 1.0
    assert len(cm.cross_validate(cm.knn_fit_predict(1), X, y, cm.leave_one_out_indices(40))) == 40
    assert cm.majority_baseline([0, 0, 1]) == pytest.approx(2 / 3)


# ---------------------------------------------------------------------------
# persistence


def test_memory_round_trip(tmp_path, dataset):
    memory = CaseMemory(6, RetainConfig(per_class_cap=4))
    for i in range(12):
        cm.retain(memory, oracle_case(dataset, i))
    X, y = dataset.X[:40], dataset.y[:40]
    clf = cm.fit_classifier(X, y, 6, cm.ClassifierSettings(num_layers=2, dims=2), max_iterations=5)
    cm.save_memory(memory, tmp_path / "m.json", clf)
    again, clf2 = cm.load_memory(tmp_path / "m.json")
    assert again.config == memory.config
    assert [cm._case_to_dict(c) for c in again.cases] == [cm._case_to_dict(c) for c in memory.cases]
    np.testing.assert_array_equal(clf2.predict_batch(X), clf.predict_batch(X))
    with pytest.raises(InvalidArgument):
        cm.memory_from_dict({"format": "other"})
