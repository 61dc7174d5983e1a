"""Command-line front end.

Subcommands mirror the pipeline stages (ingest, sleep-fit, profile,
bn-learn, consensus, predict), plus synth for generated data and run for
the whole pipeline. Each stage consumes the previous stage's files, so any
stage can be re-run in isolation. Exit codes: 0 success, 1 stage failure,
2 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import bayesnet, consensus, evaluate, ingest, pipeline, profiles, sleepmix, synth
from .pipeline import ConfigError, StageError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stayup",
        description="Detect stay-up-late sleep patterns from event logs and "
                    "analyze them with consensus Bayesian networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic data from a known truth")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--students", type=int, default=2000)
    p.add_argument("--nights", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit", choices=["count_vectors", "profiles", "full_logs"],
                   default="full_logs")
    p.add_argument("--truth", choices=["default", "recovery"], default="default")

    p = sub.add_parser("ingest", help="parse raw logs into counts and features")
    p.add_argument("--data", type=Path, required=True, help="directory with the five CSVs")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--min-nights", type=int, default=ingest.DEFAULT_MIN_NIGHTS)
    p.add_argument("--gpa-max", type=float, default=ingest.DEFAULT_GPA_MAX)

    p = sub.add_parser("sleep-fit", help="fit the bedtime mixture and label students")
    p.add_argument("--counts", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--em-restarts", type=int, default=10)
    p.add_argument("--variant", choices=["standard", "paper"], default="standard")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("profile", help="binarize features and sleep labels")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--assignments", type=Path, required=True)
    p.add_argument("--demographics", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--median-scope", choices=["per_cohort", "global"], default="per_cohort")

    p = sub.add_parser("bn-learn", help="learn one network by restarted hill climbing")
    p.add_argument("--profiles", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--ess", type=float, default=1.0)

    p = sub.add_parser("consensus", help="restart ensemble, null model, consensus network")
    p.add_argument("--profiles", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=consensus.DEFAULT_RESTARTS)
    p.add_argument("--fraction", type=float, default=consensus.DEFAULT_TOP_FRACTION)
    p.add_argument("--null-replicas", type=int, default=consensus.DEFAULT_NULL_REPLICAS)
    p.add_argument("--edge-probability", type=float, default=consensus.DEFAULT_EDGE_PROBABILITY)
    p.add_argument("--ess", type=float, default=1.0)

    p = sub.add_parser("predict", help="cross-validated sleep-status predictability")
    p.add_argument("--profiles", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--ess", type=float, default=1.0)
    p.add_argument("--in-sample", action="store_true")

    p = sub.add_parser("run", help="run the full pipeline")
    p.add_argument("--config", type=Path, help="JSON file of PipelineConfig fields")
    p.add_argument("--data", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--cohort", choices=list(pipeline.COHORT_CHOICES))
    p.add_argument("--restarts", type=int)
    p.add_argument("--ess", type=float)
    p.add_argument("--variant", choices=["standard", "paper"])
    p.add_argument("--folds", type=int)
    p.add_argument("--em-restarts", type=int)
    p.add_argument("--null-replicas", type=int)
    p.add_argument("--eval-restarts", type=int)
    p.add_argument("--edge-probability", type=float)
    p.add_argument("--min-nights", type=int)
    p.add_argument("--median-scope", choices=["per_cohort", "global"])
    p.add_argument("--in-sample", action="store_true", default=None)
    p.add_argument("--strict", action="store_true", default=None)

    return parser


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {what}: {path}")
    return path


def _cmd_synth(args) -> int:
    truth = synth.default_ground_truth() if args.truth == "default" else synth.structure_recovery_truth()
    cfg = synth.GeneratorConfig(args.students, args.nights, args.seed, args.emit)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.emit == "full_logs":
        result = synth.generate_full_logs(truth, cfg, args.out)
        for name, path in sorted(result.paths.items()):
            print(f"[synth] wrote {name}: {path}")
    elif args.emit == "profiles":
        table, ids = synth.generate_profiles(truth, cfg)
        rows = [profiles.StudentProfile(sid, *map(int, table.values[i]))
                for i, sid in enumerate(ids)]
        out = args.out / "profiles.csv"
        profiles.write_profiles_csv(out, rows)
        print(f"[synth] wrote {out}")
    else:
        vectors, labels = synth.generate_sleep_data(truth, cfg)
        out = args.out / "sleep_counts.csv"
        ingest.write_sleep_counts_csv(out, vectors, truth.mixture.rates.shape[1])
        labels_path = args.out / "true_components.json"
        labels_path.write_text(json.dumps(labels, indent=2, sort_keys=True))
        print(f"[synth] wrote {out} and {labels_path}")
    return 0


def _cmd_ingest(args) -> int:
    paths = ingest.LogPaths.from_dir(_require(args.data, "data directory"))
    for p in paths.as_dict().values():
        _require(p, "input file")
    store = ingest.parse_logs(paths, strict=args.strict, gpa_max=args.gpa_max)
    night_cfg = ingest.NightWindowConfig()
    observations = ingest.extract_bedtimes(store.sessions, night_cfg)
    counts = ingest.aggregate_sleep_counts(observations, night_cfg, args.min_nights)
    features = ingest.compute_raw_features(store, ingest.infer_study_days(store))
    args.out.mkdir(parents=True, exist_ok=True)
    ingest.write_sleep_counts_csv(args.out / "sleep_counts.csv", counts, night_cfg.bin_count)
    ingest.write_features_csv(args.out / "features.csv", features)
    report = {
        "loaded": store.report.loaded,
        "skipped": store.report.skipped,
        "reasons": store.report.reasons,
        "students_with_counts": len(counts),
        "students_with_features": len(features),
    }
    (args.out / "ingest_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"[ingest] {len(counts)} students with counts, {len(features)} with features")
    return 0


def _cmd_sleep_fit(args) -> int:
    counts = ingest.read_sleep_counts_csv(_require(args.counts, "counts file"))
    literal = args.variant == "paper"
    cfg = sleepmix.MixtureConfig(
        components=args.components,
        restarts=args.em_restarts,
        estep_variant="paper_literal" if literal else "standard",
        mstep_variant="paper_literal" if literal else "exact_map",
        seed=args.seed,
    )
    model, resp, diag = sleepmix.fit(counts, cfg)
    assignments = sleepmix.assign_and_label(resp, model, args.threshold)
    args.out.mkdir(parents=True, exist_ok=True)
    sleepmix.write_model_json(args.out / "model.json", model, cfg)
    sleepmix.write_assignments_csv(args.out / "assignments.csv", assignments)
    n_up = sum(1 for lab in assignments.labels if lab == sleepmix.STAY_UP)
    print(f"[sleep-fit] best restart {diag.best_restart_index}, "
          f"{diag.iterations_used} iterations, converged={diag.converged}")
    print(f"[sleep-fit] {n_up} stay_up / {len(assignments.labels) - n_up} non_stay_up")
    return 0


def _cmd_profile(args) -> int:
    features = ingest.read_features_csv(_require(args.features, "features file"))
    labels = sleepmix.read_assignments_csv(_require(args.assignments, "assignments file"))
    spec = profiles.default_discretization_spec()
    if args.median_scope == "per_cohort":
        if args.demographics is None:
            raise ConfigError("--median-scope per_cohort needs --demographics")
        cohorts: dict[str, list[str]] = {}
        import csv as _csv

        with open(_require(args.demographics, "demographics file"), newline="") as fh:
            for row in _csv.DictReader(fh):
                cohorts.setdefault(row["cohort"], []).append(row["student_id"])
        scopes = sorted(cohorts.items())
    else:
        scopes = [("global", sorted(set(features) | set(labels)))]
    all_rows: list[profiles.StudentProfile] = []
    medians = {}
    for name, members in scopes:
        sub_f = {sid: features[sid] for sid in members if sid in features}
        sub_l = {sid: labels[sid] for sid in members if sid in labels}
        result = profiles.build_profiles(sub_f, sub_l, spec)
        all_rows.extend(result.profiles)
        medians[name] = result.medians
    args.out.mkdir(parents=True, exist_ok=True)
    profiles.write_profiles_csv(args.out / "profiles.csv", all_rows)
    profiles.write_profile_metadata(args.out / "profile_meta.json", spec, medians)
    print(f"[profile] wrote {len(all_rows)} profiles")
    return 0


def _load_table(path: Path) -> bayesnet.DatasetTable:
    rows = profiles.read_profiles_csv(_require(path, "profiles file"))
    table, _ = profiles.profiles_to_table(rows)
    return table


def _cmd_bn_learn(args) -> int:
    table = _load_table(args.profiles)
    constraints = bayesnet.default_layer_constraints()
    cfg = bayesnet.BdeuConfig(args.ess)
    ensemble = consensus.learn_ensemble(
        table, constraints, cfg, n_restarts=args.restarts, seed=args.seed
    )
    dag, score = max(ensemble.members, key=lambda m: m[1])
    cpts = bayesnet.fit_mle(dag, table)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "dag.json").write_text(json.dumps(dag.to_json(), indent=2, sort_keys=True))
    (args.out / "cpts.json").write_text(json.dumps(cpts.to_json(), indent=2, sort_keys=True))
    print(f"[bn-learn] best of {args.restarts} restarts, score {score:.6f}, "
          f"{len(dag.edges())} edges")
    return 0


def _cmd_consensus(args) -> int:
    table = _load_table(args.profiles)
    constraints = bayesnet.default_layer_constraints()
    result, freqs, null, _ = consensus.consensus_pipeline(
        table, constraints, bayesnet.BdeuConfig(args.ess),
        n_restarts=args.restarts, fraction=args.fraction,
        replicas=args.null_replicas, edge_probability=args.edge_probability,
        seed=args.seed,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    payload = {
        **result.to_json(),
        "null": {"mean": null.mean, "std": null.std, "replicas": args.null_replicas},
    }
    (args.out / "consensus.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    consensus.write_edge_frequency_csv(args.out / "edge_frequencies.csv", freqs)
    print(f"[consensus] threshold {null.threshold:.3f}, kept {len(result.dag.edges())} edges")
    return 0


def _cmd_predict(args) -> int:
    table = _load_table(args.profiles)
    constraints = bayesnet.default_layer_constraints()
    experiment = evaluate.PredictionExperiment(
        folds=args.folds,
        mode="in_sample" if args.in_sample else "cross_validated",
        restarts=args.restarts,
    )
    result = evaluate.predict_sleep_experiment(
        table, constraints, bayesnet.BdeuConfig(args.ess), experiment, seed=args.seed
    )
    args.out.mkdir(parents=True, exist_ok=True)
    for k, curve in enumerate(result.curves):
        evaluate.write_roc_csv(args.out / f"roc_fold{k}.csv", curve)
    (args.out / "prediction_report.json").write_text(
        json.dumps(evaluate.report_json(result), indent=2, sort_keys=True)
    )
    print(f"[predict] mean AUC {result.auc_mean:.4f} over {len(result.curves)} fold(s)")
    return 0


def _cmd_run(args) -> int:
    fields = {}
    if args.config is not None:
        fields.update(pipeline.load_config_file(args.config))
    overrides = {
        "data_dir": args.data,
        "out_dir": args.out,
        "seed": args.seed,
        "cohort": args.cohort,
        "restarts": args.restarts,
        "ess": args.ess,
        "variant": args.variant,
        "folds": args.folds,
        "em_restarts": args.em_restarts,
        "null_replicas": args.null_replicas,
        "eval_restarts": args.eval_restarts,
        "edge_probability": args.edge_probability,
        "min_nights": args.min_nights,
        "median_scope": args.median_scope,
        "in_sample": args.in_sample,
        "strict_parse": args.strict,
    }
    fields.update({k: v for k, v in overrides.items() if v is not None})
    if "data_dir" not in fields or "out_dir" not in fields:
        raise ConfigError("run needs --data and --out (or a config file providing them)")
    known = {f.name for f in dataclasses.fields(pipeline.PipelineConfig)}
    unknown = set(fields) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    cfg = pipeline.PipelineConfig(**fields)
    report = pipeline.run_pipeline(cfg)
    print(f"[run] report written to {cfg.out_dir / 'report.json'}")
    for name, entry in sorted(report.get("auc", {}).items()):
        print(f"[run] {name}: mean AUC {entry['auc_mean']:.4f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "sleep-fit": _cmd_sleep_fit,
    "profile": _cmd_profile,
    "bn-learn": _cmd_bn_learn,
    "consensus": _cmd_consensus,
    "predict": _cmd_predict,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ingest.IngestError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
