"""Scalar metrics for every reported task family.

Classification: ROC-AUC (Mann-Whitney with half-credit ties), F1, micro and
macro accuracy. Grounding: Acc@IoU-threshold and mean IoU over query/gold
pairs. Segmentation: Dice aggregation. Report generation: BLEU-n and
ROUGE-L. All functions are pure; `MetricReport` carries per-class values
plus counts and serializes to CSV and Markdown.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .geometry import (
    Box3D,
    CanonicalPolygon,
    GridPoint2,
    NormalizedBox2D,
    iou_box2d,
    iou_box3d,
    polygon_iou,
)

logger = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


class UndefinedAUCError(MetricError):
    pass


# ------------------------------------------------------------------ ROC-AUC


@dataclass(frozen=True)
class ScoredBinary:
    score: float
    label: int

    def __post_init__(self):
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise MetricError(f"score must be finite in [0,1], got {self.score!r}")
        if self.label not in (0, 1):
            raise MetricError(f"label must be 0 or 1, got {self.label!r}")


def _tied_ranks(values) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j + 2) / 2.0  # ranks are 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def auc_roc(samples) -> float:
    """Mann-Whitney AUC: (#concordant + 0.5 * #tied) / (#pos * #neg).

    Computed through tied average ranks, which is exactly the pairwise
    statistic. Raises when only one class is present.
    """
    pairs = [s if isinstance(s, ScoredBinary) else ScoredBinary(*s) for s in samples]
    scores = [s.score for s in pairs]
    labels = [s.label for s in pairs]
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs at least one positive and one negative")
    ranks = _tied_ranks(scores)
    rank_sum_pos = sum(r for r, l in zip(ranks, labels) if l == 1)
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# ------------------------------------------------------------------ F1 / accuracy


def _confusion(preds, golds):
    if len(preds) != len(golds):
        raise MetricError(f"length mismatch: {len(preds)} preds vs {len(golds)} golds")
    tp = fp = fn = tn = 0
    for p, g in zip(preds, golds):
        p, g = int(bool(p)), int(bool(g))
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def f1(preds, golds) -> float:
    """2TP / (2TP + FP + FN); 0 when the denominator is 0."""
    tp, fp, fn, _ = _confusion(preds, golds)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def accuracy(preds, golds) -> float:
    tp, fp, fn, tn = _confusion(preds, golds)
    total = tp + fp + fn + tn
    return (tp + tn) / total if total else 0.0


def macro_f1(per_class) -> float:
    """Unweighted mean of per-class F1 over a class -> (preds, golds) map."""
    if not per_class:
        raise MetricError("macro_f1 needs at least one class")
    return sum(f1(p, g) for p, g in per_class.values()) / len(per_class)


def micro_accuracy(per_class) -> float:
    """Accuracy pooled over every (class, sample) decision."""
    preds, golds = [], []
    for p, g in per_class.values():
        preds.extend(p)
        golds.extend(g)
    return accuracy(preds, golds)


def macro_accuracy(per_class) -> float:
    """Unweighted mean of per-class accuracy."""
    if not per_class:
        raise MetricError("macro_accuracy needs at least one class")
    return sum(accuracy(p, g) for p, g in per_class.values()) / len(per_class)


# ------------------------------------------------------------------ grounding


@dataclass(frozen=True)
class GroundingPair:
    """One grounding query: the model's region (or None for a miss) vs gold.

    Same geometric kind on both sides, with one task-shaped exception:
    point predictions are judged by hit-test inside a gold box.
    """

    query_id: str
    predicted: object
    gold: object

    def overlap(self, raster: int = 256) -> float:
        if self.predicted is None:
            return 0.0
        pred, gold = self.predicted, self.gold
        if isinstance(pred, NormalizedBox2D) and isinstance(gold, NormalizedBox2D):
            return iou_box2d(pred, gold)
        if isinstance(pred, Box3D) and isinstance(gold, Box3D):
            return iou_box3d(pred, gold)
        if isinstance(pred, GridPoint2) and isinstance(gold, NormalizedBox2D):
            return 1.0 if gold.contains(pred) else 0.0
        if isinstance(pred, CanonicalPolygon) and isinstance(gold, CanonicalPolygon):
            return polygon_iou(pred, gold, raster)
        raise MetricError(
            f"mismatched grounding kinds for {self.query_id}: "
            f"{type(pred).__name__} vs {type(gold).__name__}"
        )


def acc_at_iou(pairs, threshold: float = 0.5, raster: int = 256) -> float:
    """Fraction of pairs with overlap >= threshold (misses score 0)."""
    pairs = list(pairs)
    if not pairs:
        raise MetricError("acc_at_iou needs at least one pair")
    hits = sum(1 for p in pairs if p.overlap(raster) >= threshold)
    return hits / len(pairs)


def mean_iou(pairs, raster: int = 256) -> float:
    pairs = list(pairs)
    if not pairs:
        raise MetricError("mean_iou needs at least one pair")
    return sum(p.overlap(raster) for p in pairs) / len(pairs)


# ------------------------------------------------------------------ text


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase; punctuation is split off into separate tokens."""
    return _TOKEN_RE.findall(text.lower())


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidate, reference, max_n: int = 4) -> tuple[float, ...]:
    """Cumulative BLEU-1..BLEU-max_n with clipping and brevity penalty.

    Single-reference; BLEU-n is the geometric mean of modified precisions up
    to n, times exp(1 - r/c) when the candidate is shorter than the
    reference. An empty candidate scores 0 with a logged warning.
    """
    if max_n < 1:
        raise MetricError("max_n must be >= 1")
    candidate = list(candidate)
    reference = list(reference)
    c, r = len(candidate), len(reference)
    if c == 0:
        logger.warning("BLEU of empty candidate is 0")
        return (0.0,) * max_n
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    precisions = []
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        clipped = sum(min(count, ref[gram]) for gram, count in cand.items())
        total = sum(cand.values())
        precisions.append(clipped / total if total else 0.0)
    scores = []
    for n in range(1, max_n + 1):
        ps = precisions[:n]
        if any(p == 0.0 for p in ps):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in ps) / n))
    return tuple(scores)


def _lcs_length(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    """LCS F-measure: R = LCS/|ref|, P = LCS/|cand|, F = 2PR/(P+R)."""
    candidate = list(candidate)
    reference = list(reference)
    lcs = _lcs_length(candidate, reference)
    p = lcs / len(candidate) if candidate else 0.0
    r = lcs / len(reference) if reference else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


# ------------------------------------------------------------------ reporting


def _fmt(v: float) -> str:
    return f"{v:.6f}"


@dataclass
class MetricReport:
    """Per-task metric values: one row per class plus the macro summary.

    Built through :meth:`build` so the macro block is always the unweighted
    mean of the per-class values present.
    """

    task: str
    per_class: dict[str, dict[str, float]]
    macro: dict[str, float]
    n_samples: int
    counts: dict[str, int] = field(default_factory=dict)
    dataset_id: str = ""
    method: str = ""

    @classmethod
    def build(cls, task, per_class, n_samples, counts=None, dataset_id="", method=""):
        metric_names = sorted(
            {m for row in per_class.values() for m in row if m != "support"}
        )
        macro = {}
        for name in metric_names:
            values = [row[name] for row in per_class.values() if name in row]
            macro[name] = sum(values) / len(values) if values else 0.0
        return cls(
            task=str(task),
            per_class=per_class,
            macro=macro,
            n_samples=n_samples,
            counts=dict(counts or {}),
            dataset_id=dataset_id,
            method=method,
        )

    def metric_names(self) -> list[str]:
        return sorted(self.macro)

    def to_csv(self) -> str:
        names = self.metric_names()
        header = ["task", "dataset", "method", "class", "support"] + names
        lines = [",".join(header)]

        def row(cls_name, support, values):
            if "," in cls_name:
                raise MetricError(f"class name {cls_name!r} would break the CSV")
            cells = [self.task, self.dataset_id, self.method, cls_name, str(support)]
            cells += [_fmt(values[n]) if n in values else "" for n in names]
            lines.append(",".join(cells))

        for cls_name in sorted(self.per_class):
            values = self.per_class[cls_name]
            row(cls_name, int(values.get("support", 0)), values)
        row("macro", self.n_samples, self.macro)
        for count_name in sorted(self.counts):
            row(f"count:{count_name}", self.counts[count_name], {})
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        names = self.metric_names()
        out = [f"### {self.task}" + (f" — {self.dataset_id}" if self.dataset_id else "")]
        out.append("| class | support | " + " | ".join(names) + " |")
        out.append("|" + "---|" * (len(names) + 2))
        for cls_name in sorted(self.per_class):
            values = self.per_class[cls_name]
            cells = [_fmt(values[n]) if n in values else "—" for n in names]
            out.append(
                f"| {cls_name} | {int(values.get('support', 0))} | " + " | ".join(cells) + " |"
            )
        out.append(
            f"| **macro** | {self.n_samples} | "
            + " | ".join(_fmt(self.macro[n]) for n in names)
            + " |"
        )
        for count_name in sorted(self.counts):
            out.append(f"- {count_name}: {self.counts[count_name]}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        lines = [l for l in text.splitlines() if l.strip()]
        if len(lines) < 2:
            raise MetricError("empty report CSV")
        header = lines[0].split(",")
        names = header[5:]
        per_class: dict[str, dict[str, float]] = {}
        macro: dict[str, float] = {}
        counts: dict[str, int] = {}
        task = dataset = method = ""
        n_samples = 0
        for line in lines[1:]:
            cells = line.split(",")
            task, dataset, method, cls_name, support = cells[:5]
            values = {
                n: float(v) for n, v in zip(names, cells[5:]) if v != ""
            }
            if cls_name == "macro":
                macro = values
                n_samples = int(support)
            elif cls_name.startswith("count:"):
                counts[cls_name[len("count:"):]] = int(support)
            else:
                values["support"] = float(support)
                per_class[cls_name] = values
        return cls(
            task=task,
            per_class=per_class,
            macro=macro,
            n_samples=n_samples,
            counts=counts,
            dataset_id=dataset,
            method=method,
        )
