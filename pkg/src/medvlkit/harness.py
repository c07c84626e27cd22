"""End-to-end evaluation over gold/prediction files, benchmark table
aggregation, and blinded reader-study construction and tallying.

Predictions arrive as line-delimited JSON {sample_id, raw_text}. Parse
failures are never dropped: they score zero and are counted separately, so
emitting garbage cannot improve a metric.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .codec import ParseError, PointGold, TaskKind, parse_answer
from .compiler import InstructionTriplet
from .geometry import NormalizedBox2D, polygon_dice, polygon_iou
from .metrics import (
    GroundingPair,
    MetricReport,
    acc_at_iou,
    accuracy,
    bleu_n,
    f1,
    mean_iou,
    rouge_l,
    tokenize,
)

logger = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


# ------------------------------------------------------------------ predictions


def read_predictions(path) -> dict[str, str]:
    """Load {sample_id -> raw_text}; duplicates keep the last occurrence
    with a logged warning."""
    out: dict[str, str] = {}
    duplicates = 0
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sample_id = obj["sample_id"]
                raw_text = obj["raw_text"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise EvalError(f"predictions line {lineno}: bad record ({e})") from e
            if sample_id in out:
                duplicates += 1
                logger.warning("duplicate prediction for %s (line %d): last wins", sample_id, lineno)
            out[str(sample_id)] = str(raw_text)
    if duplicates:
        logger.warning("%d duplicate predictions replaced by their last occurrence", duplicates)
    return out


def write_predictions(records: Iterable[tuple[str, str]], path):
    with Path(path).open("w") as fh:
        for sample_id, raw_text in records:
            fh.write(
                json.dumps({"sample_id": sample_id, "raw_text": raw_text},
                           sort_keys=True, separators=(",", ":")) + "\n"
            )


# ------------------------------------------------------------------ evaluation


def _point_region(gold: PointGold) -> NormalizedBox2D:
    if gold.region is not None:
        return gold.region
    p = gold.point
    return NormalizedBox2D(0, p.x, p.y, p.x, p.y)


def _first_box(value) -> NormalizedBox2D | None:
    return value[0] if value else None


def run_eval(
    triplets: list[InstructionTriplet],
    predictions: dict[str, str],
    task: TaskKind,
    parse_mode: str = "strict",
    split: str | None = None,
    vocabulary: tuple[str, ...] | None = None,
    raster: int = 256,
    dataset_id: str = "",
    method: str = "",
) -> MetricReport:
    """Score predictions against the gold triplets of one task.

    Unknown sample_ids are an error; parse failures and missing predictions
    score zero and are surfaced in the report counts. Deterministic: the
    same inputs serialize to byte-identical report files.
    """
    task = TaskKind(task)
    known_ids = {t.sample_id for t in triplets}
    unknown = sorted(set(predictions) - known_ids)
    if unknown:
        raise EvalError(f"predictions reference unknown sample_ids: {unknown[:5]}")

    pool = [t for t in triplets if t.task is task and (split is None or t.split == split)]
    pool.sort(key=lambda t: t.sample_id)
    if not pool:
        raise EvalError(f"no triplets for task {task.value}" + (f" in split {split}" if split else ""))

    if task is TaskKind.CLASSIFICATION_MULTILABEL and vocabulary is None:
        vocabulary = tuple(sorted({l for t in pool for l in t.gold}))

    parsed_values: dict[str, object] = {}
    parse_failures = 0
    missing = 0
    for t in pool:
        raw = predictions.get(t.sample_id)
        if raw is None:
            missing += 1
            continue
        try:
            parsed = parse_answer(raw, task, parse_mode, vocabulary=vocabulary)
            parsed_values[t.sample_id] = parsed.value
        except ParseError as e:
            parse_failures += 1
            logger.debug("parse failure for %s: %s", t.sample_id, e)

    counts = {
        "predictions_parsed": len(parsed_values),
        "parse_failures": parse_failures,
        "missing_predictions": missing,
    }

    per_class: dict[str, dict[str, float]] = {}

    if task in (TaskKind.GROUNDING_BOX2D, TaskKind.GROUNDING_BOX3D, TaskKind.GROUNDING_POINT):
        groups: dict[str, list[GroundingPair]] = {}
        for t in pool:
            value = parsed_values.get(t.sample_id)
            if task is TaskKind.GROUNDING_BOX2D:
                gold_box = _first_box(t.gold)
                pred = _first_box(value) if value else None
                cls_name = f"cls_{gold_box.cls_id}"
                pair = GroundingPair(t.sample_id, pred, gold_box)
            elif task is TaskKind.GROUNDING_BOX3D:
                cls_name = "all"
                pair = GroundingPair(t.sample_id, value, t.gold)
            else:
                cls_name = "all"
                pair = GroundingPair(t.sample_id, value, _point_region(t.gold))
            groups.setdefault(cls_name, []).append(pair)
        for cls_name, pairs in groups.items():
            per_class[cls_name] = {
                "support": len(pairs),
                "acc@0.5": acc_at_iou(pairs, 0.5, raster),
                "miou": mean_iou(pairs, raster),
            }

    elif task is TaskKind.SEGMENTATION_POLYGON:
        dices = []
        ious = []
        for t in pool:
            value = parsed_values.get(t.sample_id)
            if value is None:
                dices.append(0.0)
                ious.append(0.0)
            else:
                dices.append(polygon_dice(value, t.gold, raster))
                ious.append(polygon_iou(value, t.gold, raster))
        per_class["all"] = {
            "support": len(pool),
            "dice": sum(dices) / len(dices),
            "miou": sum(ious) / len(ious),
        }

    elif task is TaskKind.CLASSIFICATION_BINARY:
        preds, golds = [], []
        for t in pool:
            value = parsed_values.get(t.sample_id)
            golds.append(1 if t.gold else 0)
            # a failed/missing prediction never matches gold
            preds.append(1 if value is True else (0 if value is False else 1 - golds[-1]))
        per_class["positive"] = {
            "support": len(pool),
            "accuracy": accuracy(preds, golds),
            "f1": f1(preds, golds),
        }

    elif task is TaskKind.CLASSIFICATION_MULTILABEL:
        for label in vocabulary:
            preds, golds = [], []
            for t in pool:
                value = parsed_values.get(t.sample_id)
                golds.append(1 if label in t.gold else 0)
                pred_set = value if value is not None else ()
                preds.append(1 if label in pred_set else 0)
            per_class[label.replace(",", ";")] = {
                "support": sum(golds),
                "accuracy": accuracy(preds, golds),
                "f1": f1(preds, golds),
            }

    else:  # report / vqa free text
        b1 = b2 = b3 = b4 = rl = 0.0
        for t in pool:
            value = parsed_values.get(t.sample_id)
            if value is None:
                continue
            cand = tokenize(str(value))
            ref = tokenize(t.target)
            scores = bleu_n(cand, ref)
            b1 += scores[0]
            b2 += scores[1]
            b3 += scores[2]
            b4 += scores[3]
            rl += rouge_l(cand, ref)
        n = len(pool)
        per_class["all"] = {
            "support": n,
            "bleu1": b1 / n,
            "bleu2": b2 / n,
            "bleu3": b3 / n,
            "bleu4": b4 / n,
            "rougeL": rl / n,
        }

    return MetricReport.build(
        task=task.value,
        per_class=per_class,
        n_samples=len(pool),
        counts=counts,
        dataset_id=dataset_id,
        method=method,
    )


# ------------------------------------------------------------------ aggregation


def aggregate(reports: list[MetricReport], layout: str = "benchmark", metric: str | None = None) -> str:
    """Dataset-by-method benchmark grid (Markdown) from per-run reports.

    Rows are methods, columns are datasets; cells show the macro value of
    the chosen metric ("—" when a run is missing). Conflicting duplicate
    cells are an error.
    """
    if layout != "benchmark":
        raise EvalError(f"unknown layout {layout!r}; only 'benchmark' is supported")
    if not reports:
        raise EvalError("aggregate needs at least one report")
    if metric is None:
        common = set(reports[0].macro)
        for r in reports[1:]:
            common &= set(r.macro)
        for candidate in ("acc@0.5", "miou", "dice", "f1", "accuracy", "bleu4", "rougeL"):
            if candidate in common:
                metric = candidate
                break
        if metric is None:
            raise EvalError(
                "reports share no known headline metric; pass one explicitly"
            )

    cells: dict[tuple[str, str], float] = {}
    datasets: list[str] = []
    methods: list[str] = []
    for r in reports:
        if metric not in r.macro:
            raise EvalError(f"report for {r.dataset_id or '?'} lacks metric {metric!r}")
        dataset = r.dataset_id or "(dataset?)"
        method = r.method or "(method?)"
        key = (method, dataset)
        value = r.macro[metric]
        if key in cells and abs(cells[key] - value) > 1e-12:
            raise EvalError(
                f"conflicting duplicate cell for method={method}, dataset={dataset}"
            )
        cells[key] = value
        if dataset not in datasets:
            datasets.append(dataset)
        if method not in methods:
            methods.append(method)

    lines = [f"## Benchmark — {metric}", ""]
    lines.append("| method | " + " | ".join(datasets) + " |")
    lines.append("|" + "---|" * (len(datasets) + 1))
    for method in methods:
        row = [method]
        for dataset in datasets:
            value = cells.get((method, dataset))
            row.append("—" if value is None else f"{value:.4f}")
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ reader study


@dataclass(frozen=True)
class StudyCase:
    case_id: str
    image_ref: str
    report_a: str
    report_b: str


@dataclass(frozen=True)
class ReaderStudySession:
    session_id: str
    rater_id: str
    cases: tuple[StudyCase, ...]

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "rater_id": self.rater_id,
            "cases": [
                {
                    "case_id": c.case_id,
                    "image_ref": c.image_ref,
                    "report_a": c.report_a,
                    "report_b": c.report_b,
                }
                for c in self.cases
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReaderStudySession":
        return cls(
            session_id=obj["session_id"],
            rater_id=obj["rater_id"],
            cases=tuple(
                StudyCase(c["case_id"], c["image_ref"], c["report_a"], c["report_b"])
                for c in obj["cases"]
            ),
        )


@dataclass(frozen=True)
class ReaderRating:
    case_id: str
    preference: str  # "A" | "B" | "tie"
    errors: int = 0
    omissions: int = 0
    severity_flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.preference not in ("A", "B", "tie"):
            raise EvalError(f"preference must be A, B or tie, got {self.preference!r}")
        if self.errors < 0 or self.omissions < 0:
            raise EvalError("error/omission counts must be >= 0")


def build_reader_study(cases: list[dict], seed: int, raters: list[str]):
    """Blind A/B sessions plus the sealed key.

    Case order is shuffled by seed; each case's A/B source assignment and
    rater are drawn independently from the same seeded stream. Session
    content never mentions which side is which; only the key file does.
    """
    if not cases:
        raise EvalError("reader study needs at least one case")
    if not raters:
        raise EvalError("reader study needs at least one rater")
    seen = set()
    for case in cases:
        cid = case["case_id"]
        if cid in seen:
            raise EvalError(f"duplicate case id {cid!r}")
        seen.add(cid)

    rng = random.Random(seed)
    order = list(cases)
    rng.shuffle(order)

    assignments: dict[str, str] = {}
    rater_of: dict[str, str] = {}
    per_rater: dict[str, list[StudyCase]] = {r: [] for r in raters}
    for case in order:
        model_side = rng.choice("AB")
        rater = raters[rng.randrange(len(raters))]
        if model_side == "A":
            report_a, report_b = case["model_report"], case["reference_report"]
        else:
            report_a, report_b = case["reference_report"], case["model_report"]
        assignments[case["case_id"]] = model_side
        rater_of[case["case_id"]] = rater
        per_rater[rater].append(
            StudyCase(
                case_id=str(case["case_id"]),
                image_ref=str(case.get("image_ref", "")),
                report_a=report_a,
                report_b=report_b,
            )
        )

    sessions = [
        ReaderStudySession(
            session_id=f"session-{rater}",
            rater_id=rater,
            cases=tuple(per_rater[rater]),
        )
        for rater in raters
    ]
    key = {"seed": seed, "model_side": assignments, "rater": rater_of}
    return sessions, key


def tally_reader_study(
    sessions: list[ReaderStudySession], ratings: list[ReaderRating], key: dict
) -> dict:
    """Unseal the key and aggregate preferences and error/omission counts.

    The model-preference rate is reported both excluding ties (undefined
    when every rating is a tie) and over all ratings.
    """
    case_index: dict[str, str] = {}
    for s in sessions:
        for c in s.cases:
            case_index[c.case_id] = s.rater_id
    model_side = key.get("model_side", {})
    missing_key = sorted(set(case_index) - set(model_side))
    if missing_key:
        raise EvalError(f"key does not cover session cases: {missing_key[:5]}")

    stats = {"model": 0, "reference": 0, "tie": 0}
    per_rater: dict[str, dict] = {
        s.rater_id: {"model": 0, "reference": 0, "tie": 0} for s in sessions
    }
    total_errors = 0
    total_omissions = 0
    for rating in ratings:
        if rating.case_id not in case_index:
            raise EvalError(f"rating for unknown case {rating.case_id!r}")
        rater = case_index[rating.case_id]
        if rating.preference == "tie":
            outcome = "tie"
        elif rating.preference == model_side[rating.case_id]:
            outcome = "model"
        else:
            outcome = "reference"
        stats[outcome] += 1
        per_rater[rater][outcome] += 1
        total_errors += rating.errors
        total_omissions += rating.omissions

    n = len(ratings)
    non_tie = stats["model"] + stats["reference"]

    def rates(block, n_block, non_tie_block):
        return {
            **block,
            "n_ratings": n_block,
            "preference_rate_model_excluding_ties": (
                block["model"] / non_tie_block if non_tie_block else None
            ),
            "preference_rate_model_overall": (block["model"] / n_block if n_block else 0.0),
            "tie_rate": (block["tie"] / n_block if n_block else 0.0),
        }

    out = rates(stats, n, non_tie)
    out["mean_errors"] = total_errors / n if n else 0.0
    out["mean_omissions"] = total_omissions / n if n else 0.0
    out["per_rater"] = {
        rater: rates(block, sum(block.values()), block["model"] + block["reference"])
        for rater, block in sorted(per_rater.items())
    }
    return out


# ------------------------------------------------------------------ study IO


def read_cases(path) -> list[dict]:
    cases = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                for k in ("case_id", "model_report", "reference_report"):
                    if k not in obj:
                        raise EvalError(f"case record missing {k!r}")
                cases.append(obj)
    return cases


def read_ratings(path) -> list[ReaderRating]:
    ratings = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                ratings.append(
                    ReaderRating(
                        case_id=str(obj["case_id"]),
                        preference=obj["preference"],
                        errors=int(obj.get("errors", 0)),
                        omissions=int(obj.get("omissions", 0)),
                        severity_flags=tuple(obj.get("severity_flags", ())),
                    )
                )
    return ratings
