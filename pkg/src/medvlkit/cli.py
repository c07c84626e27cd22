"""Command-line surface: compile / synth / leakcheck / eval / report / study.

All paths are explicit and nothing touches the network. Exit codes: 0 on
success, 2 on validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .codec import TaskKind
from .compiler import (
    SynthSpec,
    TemplateSet,
    check_leakage,
    compile_triplets,
    generate_synthetic_dataset,
    load_manifest,
    read_triplets,
    split_patients,
    write_triplets,
)
from .harness import (
    ReaderStudySession,
    aggregate,
    build_reader_study,
    read_cases,
    read_predictions,
    read_ratings,
    run_eval,
    tally_reader_study,
)
from .metrics import MetricReport

# ValueError covers codec/compiler/harness/metric failures (and JSON decode
# errors); OSError covers missing or unreadable input files.
VALIDATION_ERRORS = (ValueError, OSError)


def _cmd_synth(args) -> int:
    overrides = {}
    if args.spec:
        overrides.update(json.loads(Path(args.spec).read_text()))
    if args.n_images is not None:
        overrides["n_images"] = args.n_images
    if args.seed is not None:
        overrides["seed"] = args.seed
    if "extent" in overrides:
        overrides["extent"] = tuple(overrides["extent"])
    if "classes" in overrides:
        overrides["classes"] = tuple(overrides["classes"])
    spec = SynthSpec(**overrides)
    manifest = generate_synthetic_dataset(spec, args.out)
    print(
        f"wrote {len(manifest.images)} images and manifest.jsonl "
        f"({manifest.dataset_id}) to {args.out}"
    )
    return 0


def _cmd_compile(args) -> int:
    manifest = load_manifest(args.manifest)
    templates = TemplateSet.load(args.templates) if args.templates else TemplateSet.default()
    assignment = split_patients(manifest, seed=args.seed)
    triplets, summary = compile_triplets(manifest, templates, assignment)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_triplets(triplets, out / "triplets.jsonl")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"compiled {summary['n_triplets']} triplets -> {out / 'triplets.jsonl'}")
    for task, count in summary["by_task"].items():
        print(f"  {task}: {count}")
    return 0


def _cmd_leakcheck(args) -> int:
    train = [load_manifest(p) for p in args.train]
    eval_manifests = [load_manifest(p) for p in args.eval]
    report = check_leakage(train, eval_manifests)
    payload = {"leaks": report.to_json(), "clean": report.empty}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if report.empty:
        print("no leakage: train and eval pools share no content hash")
    else:
        print(f"LEAKAGE: {len(report.entries)} shared content hashes")
        for entry in report.entries[:10]:
            print(
                f"  {entry.content_hash}: train={entry.train_dataset_id} "
                f"eval={entry.eval_dataset_id} images={list(entry.image_ids)}"
            )
    return 0


def _cmd_eval(args) -> int:
    triplets = read_triplets(args.gold)
    predictions = read_predictions(args.pred)
    vocabulary = None
    if args.vocab:
        vocabulary = tuple(
            l.strip() for l in Path(args.vocab).read_text().splitlines() if l.strip()
        )
    tasks = [TaskKind(args.task)] if args.task != "all" else sorted(
        {t.task for t in triplets}, key=lambda t: t.value
    )
    for task in tasks:
        report = run_eval(
            triplets,
            predictions,
            task,
            parse_mode=args.mode,
            split=args.split,
            vocabulary=vocabulary,
            dataset_id=args.dataset,
            method=args.method,
        )
        macro = ", ".join(f"{k}={v:.4f}" for k, v in sorted(report.macro.items()))
        print(f"{task.value}: n={report.n_samples} {macro}")
        print(
            f"  parsed={report.counts['predictions_parsed']} "
            f"failures={report.counts['parse_failures']} "
            f"missing={report.counts['missing_predictions']}"
        )
        if args.out:
            out = Path(args.out)
            if len(tasks) > 1:
                # metric columns differ per task, so "all" writes one CSV each
                out = out.with_name(f"{out.stem}.{task.value}{out.suffix}")
            out.write_text(report.to_csv())
            print(f"wrote {out}")
    return 0


def _cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        reports.append(MetricReport.from_csv(Path(path).read_text()))
    table = aggregate(reports, layout=args.layout, metric=args.metric)
    if args.out:
        Path(args.out).write_text(table)
        print(f"wrote {args.out}")
    else:
        print(table)
    return 0


def _cmd_study_build(args) -> int:
    cases = read_cases(args.cases)
    sessions, key = build_reader_study(cases, seed=args.seed, raters=args.raters)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for session in sessions:
        path = out / f"{session.session_id}.json"
        path.write_text(json.dumps(session.to_json(), indent=2, sort_keys=True) + "\n")
        print(f"wrote {path} ({len(session.cases)} cases)")
    key_path = Path(args.key) if args.key else out / "key.json"
    key_path.write_text(json.dumps(key, indent=2, sort_keys=True) + "\n")
    print(f"sealed key -> {key_path} (store separately from sessions)")
    return 0


def _cmd_study_tally(args) -> int:
    sessions = [
        ReaderStudySession.from_json(json.loads(Path(p).read_text())) for p in args.sessions
    ]
    ratings = read_ratings(args.ratings)
    key = json.loads(Path(args.key).read_text())
    stats = tally_reader_study(sessions, ratings, key)
    payload = json.dumps(stats, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n")
        print(f"wrote {args.out}")
    excl = stats["preference_rate_model_excluding_ties"]
    print(
        f"model preferred: {stats['model']}/{stats['n_ratings']} "
        f"(excluding ties: {'undefined' if excl is None else f'{excl:.4f}'}, "
        f"overall: {stats['preference_rate_model_overall']:.4f}, "
        f"ties: {stats['tie']})"
    )
    print(
        f"mean errors: {stats['mean_errors']:.3f}, "
        f"mean omissions: {stats['mean_omissions']:.3f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medvlkit",
        description="Compile, serialize and evaluate multi-task medical VL datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shapes dataset")
    p.add_argument("--spec", help="JSON file with SynthSpec fields")
    p.add_argument("--n-images", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("compile", help="compile a manifest into triplets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--templates", help="JSON template set (default: builtin)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compile)

    p = sub.add_parser("leakcheck", help="content-hash leakage between pools")
    p.add_argument("--train", nargs="+", required=True)
    p.add_argument("--eval", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_leakcheck)

    p = sub.add_parser("eval", help="score predictions against gold triplets")
    p.add_argument("--gold", required=True, help="triplets.jsonl")
    p.add_argument("--pred", required=True, help="predictions.jsonl")
    p.add_argument("--task", default="all",
                   choices=["all"] + [t.value for t in TaskKind])
    p.add_argument("--mode", default="strict", choices=["strict", "lenient"])
    p.add_argument("--split", default=None, choices=[None, "train", "val", "test"])
    p.add_argument("--vocab", help="label vocabulary file, one label per line")
    p.add_argument("--dataset", default="", help="dataset id stamped into the report")
    p.add_argument("--method", default="", help="method name stamped into the report")
    p.add_argument("--out", help="report CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="aggregate report CSVs into a benchmark table")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--layout", default="benchmark", choices=["benchmark"])
    p.add_argument("--metric", default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("study", help="blinded reader study tools")
    study_sub = p.add_subparsers(dest="study_command", required=True)

    b = study_sub.add_parser("build", help="build blinded sessions + sealed key")
    b.add_argument("--cases", required=True, help="cases.jsonl")
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--raters", nargs="+", required=True)
    b.add_argument("--out-dir", required=True)
    b.add_argument("--key", help="key path (default: OUT_DIR/key.json)")
    b.set_defaults(func=_cmd_study_build)

    t = study_sub.add_parser("tally", help="unseal and aggregate ratings")
    t.add_argument("--sessions", nargs="+", required=True)
    t.add_argument("--ratings", required=True)
    t.add_argument("--key", required=True)
    t.add_argument("--out")
    t.set_defaults(func=_cmd_study_tally)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
