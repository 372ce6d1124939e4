"""Command-line entry point: dataset generation, classifier benchmarks, solving and the CBR cycle.

Every command writes ``manifest.json`` into its output directory with the
full set of resolved arguments; ``qcbr replay <manifest>`` reruns it.
Exit codes: 0 success, 2 invalid arguments, 3 infeasible or degenerate
instance, 4 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, swp
from .casemem import (DEFAULT_CHECKPOINTS, CaseMemory, ClassifierSettings, CycleConfig, OracleMode,
                      RetainConfig, SolverSettings, cbr_cycle, classifier_fit_predict,
                      classifier_to_dict, cross_validate, dataset_stream, fit_classifier,
                      full_solve, kfold_indices, knn_fit_predict, leave_one_out_indices,
                      load_memory, majority_baseline, retrieve, reuse, save_memory,
                      windowed_correctness, write_log)
from .errors import (CapacityError, DegenerateInstance, Infeasible, InvalidArgument, NoExperience,
                     OptimizationFailure)
from .optim import OptimizerConfig, OptimizerKind
from .vqc import Entanglement
from .vqe import warm_vs_cold_benchmark

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4


# ---------------------------------------------------------------------------
# shared helpers


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def write_manifest(out: Path, args, resolved: dict, outputs: Sequence[str]) -> None:
    """Record the parsed arguments (enough to replay) plus the derived configuration."""
    doc = {
        "format": "qcbr.manifest",
        "version": 1,
        "package_version": __version__,
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "resolved": _jsonable(resolved),
        "outputs": list(outputs),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def _optimizer(kind: str, iterations: int, a: Optional[float], c: Optional[float]) -> OptimizerConfig:
    base = OptimizerConfig(kind=OptimizerKind(kind), max_iterations=iterations)
    changes = {k: v for k, v in (("a", a), ("c", c)) if v is not None}
    return base.with_(**changes) if changes else base


def _load_instance(args) -> swp.ScheduleInstance:
    if args.instance:
        with open(args.instance, encoding="utf-8") as fh:
            return swp.instance_from_dict(json.load(fh))
    if args.dataset:
        ds = swp.load_dataset(args.dataset)
        if not 0 <= args.case < len(ds):
            raise InvalidArgument(f"case {args.case} outside the dataset's {len(ds)} cases")
        return ds.instance(args.case)
    return swp.random_instance(args.patients, args.workers, args.instance_seed,
                               epsilon=args.epsilon, include_depot=args.depot)


def _print_routes(instance: swp.ScheduleInstance, routes) -> None:
    for w, route in enumerate(routes):
        stops = " -> ".join(f"P{p + 1}" for p in route)
        if instance.include_depot:
            stops = f"depot -> {stops} -> depot"
        print(f"  worker {w + 1}: {stops}")


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    ds = swp.generate_dataset(args.patients, args.workers, args.cases, args.seed,
                              overlap_degree=args.overlap, epsilon=args.epsilon,
                              include_depot=args.depot)
    out = _out_dir(args)
    swp.save_dataset(ds, out / "dataset.json")
    swp.write_dataset_csv(ds, out / "dataset.csv")
    outputs = ["dataset.json", "dataset.csv"]
    counts = np.bincount(ds.y, minlength=ds.num_classes)
    print(f"{len(ds)} cases, {ds.num_classes} solution classes")
    for label, count in enumerate(counts):
        print(f"  class {label} {swp.partition_of(label, ds.num_patients, ds.num_workers)}: {count}")
    if args.plot and len(ds):
        from .plotting import plot_class_histogram
        plot_class_histogram(ds.y, ds.num_classes, out / "class_histogram.png")
        outputs.append("class_histogram.png")
    write_manifest(out, args, {"num_classes": ds.num_classes,
                               "class_counts": counts.tolist()}, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    ds = swp.load_dataset(args.dataset)
    X, y = ds.X, ds.y
    sizes = args.sizes or [len(ds)]
    if any(not 2 <= s <= len(ds) for s in sizes):
        raise InvalidArgument(f"sizes must lie in [2, {len(ds)}]")
    if args.dims not in (2, X.shape[1]):
        raise InvalidArgument(f"dims must be 2 or the raw width {X.shape[1]}")
    optimizer = _optimizer(args.optimizer, args.iterations, args.a, args.c)
    settings = {L: ClassifierSettings(num_layers=L, dims=args.dims, entanglement=args.entanglement,
                                      angle_range=args.angle_range, optimizer=optimizer)
                for L in args.layers}
    out = _out_dir(args)
    fold_rows, summary, comparison = [], [], []

    def record(method, layers, n, scores):
        for f, s in enumerate(scores):
            fold_rows.append([method, layers, args.dims, n, f, _fmt(s)])
        row = {"method": method, "layers": layers, "dims": args.dims, "num_cases": n,
               "folds": len(scores), "accuracy_mean": float(np.mean(scores)),
               "accuracy_std": float(np.std(scores))}
        comparison.append(row)
        print(f"  {method:>10s} n={n:4d}: {row['accuracy_mean']:.3f} +/- {row['accuracy_std']:.3f}")
        return row

    for n in sizes:
        Xn, yn = X[:n], y[:n]
        folds = leave_one_out_indices(n) if args.loo else kfold_indices(n, args.folds, args.seed)
        for L, cfg in settings.items():
            fit_predict = classifier_fit_predict(ds.num_classes, cfg, seed=args.seed)
            summary.append(record("vqc", L, n, cross_validate(fit_predict, Xn, yn, folds)))
        for k in args.knn:
            record(f"knn{k}", "", n, cross_validate(knn_fit_predict(k), Xn, yn, folds))
        record("majority", "", n, [majority_baseline(yn)])

    header = ["method", "layers", "dims", "num_cases", "folds", "accuracy_mean", "accuracy_std"]
    as_rows = [[r[h] if not isinstance(r[h], float) else _fmt(r[h]) for h in header]
               for r in summary]
    _write_rows(out / "accuracy.csv", header + ["entanglement", "optimizer"],
                [row + [Entanglement(args.entanglement).value, optimizer.kind.value] for row in as_rows])
    _write_rows(out / "comparison.csv", header,
                [[r[h] if not isinstance(r[h], float) else _fmt(r[h]) for h in header]
                 for r in comparison])
    _write_rows(out / "folds.csv", ["method", "layers", "dims", "num_cases", "fold", "accuracy"],
                fold_rows)
    outputs = ["accuracy.csv", "comparison.csv", "folds.csv"]
    if args.save_model:
        for L, cfg in settings.items():
            clf = fit_classifier(X, y, ds.num_classes, cfg, seed=args.seed)
            name = f"model_L{L}.json"
            with open(out / name, "w", encoding="utf-8") as fh:
                json.dump(classifier_to_dict(clf), fh, indent=1)
            outputs.append(name)
    if args.plot:
        from .plotting import plot_accuracy
        plot_accuracy([dict(r, method=f"{r['method']}{r['layers']} n={r['num_cases']}")
                       for r in comparison], out / "accuracy.png")
        outputs.append("accuracy.png")
    resolved = {
        "preprocess": "none" if args.dims == X.shape[1] else "pca+ica",
        "split": "leave-one-out" if args.loo else f"{args.folds}-fold",
        "classifier": {L: asdict(cfg) for L, cfg in settings.items()},
        "num_classes": ds.num_classes,
    }
    write_manifest(out, args, resolved, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args) -> int:
    instance = _load_instance(args)
    features = swp.instance_features(instance)
    settings = SolverSettings(depth=args.depth, k_shots=args.shots,
                              full_optimizer=_optimizer(args.optimizer, args.iterations, args.a, args.c))
    mode, _, memory_path = args.mode.partition(":")
    resolved: dict = {"solver": asdict(settings), "mode": mode}
    if mode == "brute":
        oracle = swp.brute_force_solve(instance)
        routes, cost, label, solved_by = oracle.routes, oracle.cost, oracle.label, "ORACLE"
    elif mode in ("vqe", "warm"):
        case = None
        if mode == "warm":
            if not memory_path:
                raise InvalidArgument("warm mode needs a memory file: warm:<path>")
            try:
                if not Path(memory_path).exists():
                    raise NoExperience(f"memory file {memory_path} does not exist yet")
                memory, classifier = load_memory(memory_path)
                label, _ = retrieve(memory, classifier, features)
                case = reuse(memory, label, instance, features, settings, seed=args.seed)
            except NoExperience as exc:
                print(f"no experience ({exc}); falling back to a full solve")
                resolved["fallback"] = "full_solve"
        if case is None:
            case = full_solve(instance, features, OracleMode.VQE_FULL, settings, seed=args.seed)
        routes = [r for r in swp.decode_routes(_bits_of_matrix(case.routes, instance), instance).routes]
        cost, label, solved_by = case.energy, case.class_label, case.solved_by.value
    else:
        raise InvalidArgument(f"unknown mode {args.mode!r}; use vqe, brute or warm:<memory>")
    print(f"{solved_by}: class {label}, cost {cost:.6g}")
    _print_routes(instance, routes)
    if args.out:
        out = _out_dir(args)
        doc = {"mode": args.mode, "solved_by": solved_by, "class_label": int(label),
               "cost": float(cost), "routes": [list(map(int, r)) for r in routes],
               "instance": swp.instance_to_dict(instance)}
        with open(out / "solution.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
        write_manifest(out, args, resolved, ["solution.json"])
    return EXIT_OK


def _bits_of_matrix(matrix: np.ndarray, instance: swp.ScheduleInstance) -> list[int]:
    index = swp.variable_index(instance)
    bits = [0] * len(index)
    for (u, v), k in index.items():
        bits[k] = int(matrix[u, v])
    return bits


# ---------------------------------------------------------------------------
# cycle


def cmd_cycle(args) -> int:
    ds = swp.load_dataset(args.dataset)
    optimizer = _optimizer(args.optimizer, args.initial_iterations, None, None)
    config = CycleConfig(
        oracle_mode=args.oracle,
        retrain_every=args.retrain_every,
        retrain_iterations=args.retrain_iterations,
        initial_iterations=args.initial_iterations,
        classifier=ClassifierSettings(num_layers=args.layers, dims=args.dims,
                                      angle_range=args.angle_range, optimizer=optimizer),
        solver=SolverSettings(depth=args.depth, k_shots=args.k_shots,
                              reuse_optimizer=OptimizerConfig(max_iterations=args.reuse_iterations,
                                                              a=0.2, c=0.3)),
        seed=args.seed,
    )
    retain_cfg = RetainConfig(per_class_cap=args.per_class_cap,
                              novelty_min_distance=args.novelty,
                              energy_tolerance=args.energy_tolerance)
    memory = CaseMemory(ds.num_classes, retain_cfg)
    log, classifier = cbr_cycle(memory, None, dataset_stream(ds, args.cases), config)
    out = _out_dir(args)
    write_log(log, out / "cycle_log.csv")
    save_memory(memory, out / "memory.json", classifier)
    proposed = windowed_correctness(log, DEFAULT_CHECKPOINTS, "proposed")
    final = windowed_correctness(log, DEFAULT_CHECKPOINTS, "final")
    _write_rows(out / "windows.csv", ["start", "end", "correct_proposed", "correct_final"],
                [[p[0], p[1], _fmt(p[2]), _fmt(f[2])] for p, f in zip(proposed, final)])
    print("window        proposed  final")
    for p, f in zip(proposed, final):
        print(f"  {p[0]:4d}-{p[1]:<4d}  {p[2]:8.3f}  {f[2]:5.3f}")
    outputs = ["cycle_log.csv", "memory.json", "windows.csv"]
    if args.plot:
        from .plotting import plot_learning_curve
        plot_learning_curve(proposed, final, out / "learning_curve.png")
        outputs.append("learning_curve.png")
    resolved = {"cycle": asdict(config), "retain": asdict(retain_cfg),
                "checkpoints": list(DEFAULT_CHECKPOINTS), "memory_size": len(memory),
                "errors": sum(r.phase == "error" for r in log)}
    write_manifest(out, args, resolved, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# vqe-bench


def cmd_vqe_bench(args) -> int:
    instance = _load_instance(args)
    problem = swp.qubo_to_ising(swp.build_qubo(instance))
    optimizer = _optimizer("SPSA", args.iterations, args.a, args.c)
    result = warm_vs_cold_benchmark(problem, args.depth, optimizer, args.trials, seed=args.seed)
    out = _out_dir(args)
    result.write_csv(out / "vqe_bench.csv")
    _write_rows(out / "thresholds.csv", ["trial", "cold_iterations", "warm_iterations"],
                [[r.trial, r.cold_iterations, r.warm_iterations] for r in result.rows])
    print(f"{problem.num_vars} variables, ground {result.ground:.6g}, highest {result.highest:.6g}")
    print(f"median iterations to threshold: cold {result.median_cold:g}, warm {result.median_warm:g}")
    outputs = ["vqe_bench.csv", "thresholds.csv"]
    if args.plot:
        from .plotting import plot_energy_traces
        level = result.ground + 0.05 * (result.highest - result.ground)
        plot_energy_traces(result.rows, result.ground, level, out / "energy_traces.png")
        outputs.append("energy_traces.png")
    resolved = {"optimizer": asdict(optimizer), "num_vars": problem.num_vars,
                "instance": swp.instance_to_dict(instance),
                "median_cold": result.median_cold, "median_warm": result.median_warm}
    write_manifest(out, args, resolved, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay


def cmd_replay(args) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "qcbr.manifest":
        raise InvalidArgument(f"{args.manifest} is not a manifest")
    recorded = dict(doc["args"])
    if args.out is not None:
        recorded["out"] = args.out
    command = recorded["command"]
    if command == "replay":
        raise InvalidArgument("cannot replay a replay manifest")
    namespace = argparse.Namespace(**recorded)
    return COMMANDS[command](namespace)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "solve": cmd_solve,
    "cycle": cmd_cycle,
    "vqe-bench": cmd_vqe_bench,
    "replay": cmd_replay,
}


# ---------------------------------------------------------------------------
# parser


def _add_instance_source(p: argparse.ArgumentParser, patients: int, workers: int) -> None:
    p.add_argument("--instance", help="instance JSON file")
    p.add_argument("--dataset", help="dataset JSON file (used with --case)")
    p.add_argument("--case", type=int, default=0, help="case index within --dataset")
    p.add_argument("--patients", type=int, default=patients, help="random instance size")
    p.add_argument("--workers", type=int, default=workers)
    p.add_argument("--instance-seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.005, help="time-window weight")
    p.add_argument("--depot", action="store_true", help="add a shared depot node")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcbr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a labeled SWP dataset")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--workers", type=int, required=True)
    p.add_argument("--cases", type=int, required=True)
    p.add_argument("--overlap", type=float, default=0.5, help="overlap degree in [0, 1]")
    p.add_argument("--epsilon", type=float, default=0.005, help="time-window weight")
    p.add_argument("--depot", action="store_true")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="out/generate")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("train", help="cross-validate the quantum classifier against KNN")
    p.add_argument("--dataset", required=True)
    p.add_argument("--layers", type=_int_list, default=[8], help="comma-separated layer counts")
    p.add_argument("--entanglement", choices=[e.value for e in Entanglement], default="NONE")
    p.add_argument("--optimizer", choices=[k.value for k in OptimizerKind], default="FD_QUASI_NEWTON")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--a", type=float, default=None, help="SPSA step gain")
    p.add_argument("--c", type=float, default=None, help="SPSA perturbation gain")
    p.add_argument("--dims", type=int, default=8, help="2 runs PCA + ICA first")
    p.add_argument("--angle-range", type=float, default=1.0, help="initial angles ~ U(-r, r)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--loo", action="store_true", help="leave-one-out instead of k-fold")
    p.add_argument("--sizes", type=_int_list, default=[], help="evaluate on the first N cases")
    p.add_argument("--knn", type=_int_list, default=[5], help="KNN baselines, comma-separated k")
    p.add_argument("--no-model", dest="save_model", action="store_false",
                   help="skip fitting the final model on the whole dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/train")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("solve", help="solve one instance")
    _add_instance_source(p, 3, 2)
    p.add_argument("--mode", default="brute", help="vqe, brute or warm:<memory.json>")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--optimizer", choices=[k.value for k in OptimizerKind], default="SPSA")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--shots", type=int, default=8, help="shots per evaluation in warm reuse")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="optional report directory")

    p = sub.add_parser("cycle", help="run the CBR cycle over a dataset stream")
    p.add_argument("--dataset", required=True)
    p.add_argument("--cases", type=int, default=None, help="stream only the first N cases")
    p.add_argument("--oracle", choices=[o.value for o in OracleMode], default="BRUTE_FORCE")
    p.add_argument("--retrain-every", type=int, default=20)
    p.add_argument("--initial-iterations", type=int, default=50)
    p.add_argument("--retrain-iterations", type=int, default=10)
    p.add_argument("--optimizer", choices=[k.value for k in OptimizerKind], default="FD_QUASI_NEWTON")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dims", type=int, default=8)
    p.add_argument("--angle-range", type=float, default=1.0)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--k-shots", type=int, default=8)
    p.add_argument("--reuse-iterations", type=int, default=40)
    p.add_argument("--per-class-cap", type=int, default=32)
    p.add_argument("--novelty", type=float, default=0.1)
    p.add_argument("--energy-tolerance", type=float, default=None,
                   help="absolute acceptance tolerance (default 5%% of the cost range)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/cycle")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("vqe-bench", help="paired warm and cold eigensolver runs")
    _add_instance_source(p, 3, 2)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--iterations", type=int, default=600)
    p.add_argument("--a", type=float, default=0.005, help="SPSA step gain")
    p.add_argument("--c", type=float, default=0.1, help="SPSA perturbation gain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/vqe-bench")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write to this directory instead")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (Infeasible, DegenerateInstance) as exc:
        kind = "infeasible" if isinstance(exc, Infeasible) else "degenerate"
        print(f"{kind}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OptimizationFailure, CapacityError, NoExperience) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidArgument, ValueError, FileNotFoundError) as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
