"""Bidirectional text grammar for every task answer format.

Rendering turns structured gold into the exact target text a model is
trained to emit; parsing inverts it. Strict mode is a full-string decision
procedure that either returns a value satisfying the target type's
invariants or raises with the character offset of the failure (the grammar
is ASCII, so character and byte offsets coincide). Lenient mode extracts
the same structures from surrounding free text, clamping and warning
instead of failing where a reading exists.

The grammar is normative and bit-exact; see docs/answer_grammar.md.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .geometry import (
    GRID_MAX,
    Box3D,
    CanonicalPolygon,
    GeometryError,
    GridPoint2,
    NormalizedBox2D,
    canonical_violations,
)

BOS_TAG = "<BOS>"
EOS_TAG = "<EOS>"
EMPTY_LABEL_TEXT = "no finding"


class TaskKind(str, Enum):
    CLASSIFICATION_BINARY = "classification_binary"
    CLASSIFICATION_MULTILABEL = "classification_multilabel"
    GROUNDING_BOX2D = "grounding_box2d"
    GROUNDING_BOX3D = "grounding_box3d"
    GROUNDING_POINT = "grounding_point"
    SEGMENTATION_POLYGON = "segmentation_polygon"
    REPORT = "report"
    VQA_FREEFORM = "vqa_freeform"


class ParseError(ValueError):
    """Base for answer-text parse failures; carries the failure offset."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class AnswerSyntaxError(ParseError):
    pass


class AnswerRangeError(ParseError):
    pass


@dataclass(frozen=True)
class AnswerText:
    """Rendered answer; only segmentation answers carry BOS/EOS framing."""

    text: str
    framed: bool = False

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class PointGold:
    """Compiler-level gold for point grounding: the target point plus the
    region box used when scoring hit-rates. The rendered answer covers only
    the point."""

    point: GridPoint2
    region: NormalizedBox2D | None = None


@dataclass
class ParsedAnswer:
    task: TaskKind
    value: Any
    mode: str
    warnings: list[str] = field(default_factory=list)


class _Scanner:
    """Cursor over the answer text; failures report the cursor offset."""

    _INT = re.compile(r"\d+")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def expect(self, literal: str):
        if not self.text.startswith(literal, self.pos):
            raise AnswerSyntaxError(f"expected {literal!r}", self.pos)
        self.pos += len(literal)

    def integer(self) -> tuple[int, int]:
        m = self._INT.match(self.text, self.pos)
        if m is None:
            raise AnswerSyntaxError("expected integer", self.pos)
        self.pos = m.end()
        return int(m.group()), m.start()

    def grid_integer(self) -> int:
        value, at = self.integer()
        if value > GRID_MAX:
            raise AnswerRangeError(f"coordinate {value} exceeds {GRID_MAX}", at)
        return value

    def finish(self):
        if self.pos != len(self.text):
            raise AnswerSyntaxError("trailing text after answer", self.pos)


def _warn(warnings: list[str] | None, message: str):
    if warnings is not None:
        warnings.append(message)


def _clamp_grid(value: int, what: str, warnings: list[str] | None) -> int:
    if value > GRID_MAX:
        _warn(warnings, f"{what} {value} clamped to {GRID_MAX}")
        return GRID_MAX
    if value < 0:
        _warn(warnings, f"{what} {value} clamped to 0")
        return 0
    return value


# ------------------------------------------------------------------ binary


def render_binary(answer: bool) -> AnswerText:
    return AnswerText("yes" if answer else "no")


_BINARY_LENIENT = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_binary(text: str, mode: str = "strict", warnings: list[str] | None = None) -> bool:
    if mode == "strict":
        if text == "yes":
            return True
        if text == "no":
            return False
        raise AnswerSyntaxError("expected exactly 'yes' or 'no'", 0)
    matches = _BINARY_LENIENT.findall(text)
    if not matches:
        raise AnswerSyntaxError("no yes/no found in text", 0)
    if len(matches) > 1:
        _warn(warnings, f"{len(matches)} yes/no occurrences; using the first")
    return matches[0].lower() == "yes"


# ------------------------------------------------------------------ 2D boxes


def render_box2d(boxes, center_offsets: bool = False) -> AnswerText:
    """Semicolon-joined "(c, x1, y1, x2, y2)" tuples in canonical order.

    `center_offsets=True` switches to the draft corner-offsets-from-center
    reading; that form drops the absolute position and cannot be parsed
    back, so it is render-only.
    """
    boxes = list(boxes)
    if not boxes:
        raise ValueError("cannot render an empty box list")
    parts = []
    for b in sorted(boxes, key=lambda b: (b.cls_id, b.x1, b.y1)):
        if center_offsets:
            cx = (b.x1 + b.x2) // 2
            cy = (b.y1 + b.y2) // 2
            parts.append(f"({b.cls_id}, {b.x1 - cx}, {b.y1 - cy}, {b.x2 - cx}, {b.y2 - cy})")
        else:
            parts.append(f"({b.cls_id}, {b.x1}, {b.y1}, {b.x2}, {b.y2})")
    return AnswerText("; ".join(parts))


_BOX2D_LENIENT = re.compile(
    r"\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)"
)


def parse_box2d(text: str, mode: str = "strict", warnings: list[str] | None = None):
    """Parse one or more box tuples; returns a tuple of NormalizedBox2D."""
    if mode == "strict":
        sc = _Scanner(text)
        boxes = []
        while True:
            start = sc.pos
            sc.expect("(")
            cls_id, _ = sc.integer()
            fields = []
            for _ in range(4):
                sc.expect(", ")
                fields.append(sc.grid_integer())
            sc.expect(")")
            x1, y1, x2, y2 = fields
            if x1 > x2 or y1 > y2:
                raise AnswerRangeError("box corners not ordered", start)
            boxes.append(NormalizedBox2D(cls_id, x1, y1, x2, y2))
            if sc.pos == len(text):
                break
            sc.expect("; ")
        return tuple(boxes)

    boxes = []
    for m in _BOX2D_LENIENT.finditer(text):
        cls_id = int(m.group(1))
        coords = [_clamp_grid(int(g), "coordinate", warnings) for g in m.groups()[1:]]
        x1, y1, x2, y2 = coords
        if x1 > x2:
            _warn(warnings, f"x corners swapped in {m.group(0)!r}")
            x1, x2 = x2, x1
        if y1 > y2:
            _warn(warnings, f"y corners swapped in {m.group(0)!r}")
            y1, y2 = y2, y1
        boxes.append(NormalizedBox2D(cls_id, x1, y1, x2, y2))
    if not boxes:
        raise AnswerSyntaxError("no box tuple found in text", 0)
    return tuple(boxes)


# ------------------------------------------------------------------ 3D boxes


def render_box3d(b: Box3D) -> AnswerText:
    cx, cy, cz = b.center
    la, lb, lc = b.lengths
    return AnswerText(f"center at [{cx}, {cy}, {cz}], box length is [{la}, {lb}, {lc}]")


_TRIPLE_LENIENT = re.compile(r"\[\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\]")


def parse_box3d(text: str, mode: str = "strict", warnings: list[str] | None = None) -> Box3D:
    if mode == "strict":
        sc = _Scanner(text)
        sc.expect("center at [")
        center = [sc.grid_integer()]
        for _ in range(2):
            sc.expect(", ")
            center.append(sc.grid_integer())
        sc.expect("], box length is [")
        lengths = [sc.integer()[0]]
        for _ in range(2):
            sc.expect(", ")
            lengths.append(sc.integer()[0])
        sc.expect("]")
        sc.finish()
        try:
            return Box3D(tuple(center), tuple(lengths))
        except GeometryError as e:
            raise AnswerRangeError(str(e), 0) from e

    triples = _TRIPLE_LENIENT.findall(text)
    if len(triples) < 2:
        raise AnswerSyntaxError(
            f"need a center and a length triple, found {len(triples)}", 0
        )
    if len(triples) > 2:
        _warn(warnings, f"{len(triples)} bracketed triples; using the first two")
    center = tuple(_clamp_grid(int(v), "center coordinate", warnings) for v in triples[0])
    lengths = []
    for v in triples[1]:
        n = int(v)
        if n < 0:
            _warn(warnings, f"negative length {n} clamped to 0")
            n = 0
        lengths.append(n)
    return Box3D(center, tuple(lengths))


# ------------------------------------------------------------------ points


def render_point(p: GridPoint2) -> AnswerText:
    return AnswerText(f"[{p.x}, {p.y}]")


_POINT_LENIENT = re.compile(r"\[\s*(\d+)\s*,\s*(\d+)\s*\]")


def parse_point(text: str, mode: str = "strict", warnings: list[str] | None = None) -> GridPoint2:
    if mode == "strict":
        sc = _Scanner(text)
        sc.expect("[")
        x = sc.grid_integer()
        sc.expect(", ")
        y = sc.grid_integer()
        sc.expect("]")
        sc.finish()
        return GridPoint2(x, y)

    matches = list(_POINT_LENIENT.finditer(text))
    if not matches:
        raise AnswerSyntaxError("no coordinate pair found in text", 0)
    if len(matches) > 1:
        _warn(warnings, f"{len(matches)} coordinate pairs; using the first")
    m = matches[0]
    return GridPoint2(
        _clamp_grid(int(m.group(1)), "x", warnings),
        _clamp_grid(int(m.group(2)), "y", warnings),
    )


# ------------------------------------------------------------------ polygons


def render_polygon(p: CanonicalPolygon) -> AnswerText:
    coords = " ".join(f"{pt.x} {pt.y}" for pt in p.points)
    return AnswerText(f"{BOS_TAG} {coords} {EOS_TAG}", framed=True)


def _polygon_from_ints(
    values: list[int], warnings: list[str] | None, clamp: bool
) -> CanonicalPolygon:
    if len(values) != 50:
        raise AnswerSyntaxError(
            f"polygon needs 50 integers (25 points), found {len(values)}", 0
        )
    points = []
    for i in range(0, 50, 2):
        x, y = values[i], values[i + 1]
        if clamp:
            x = _clamp_grid(x, "x", warnings)
            y = _clamp_grid(y, "y", warnings)
        points.append(GridPoint2(x, y))
    poly = CanonicalPolygon(tuple(points))
    for violation in canonical_violations(poly):
        _warn(warnings, f"non-canonical polygon: {violation}")
    return poly


def parse_polygon(
    text: str, mode: str = "strict", warnings: list[str] | None = None
) -> CanonicalPolygon:
    """Parse a BOS/EOS-framed coordinate stream.

    Canonical-form violations (orientation, start point) are reported as
    warnings, never errors: model output may be non-canonical but still
    scoreable.
    """
    if mode == "strict":
        sc = _Scanner(text)
        sc.expect(BOS_TAG)
        values = []
        positions = []
        while True:
            sc.expect(" ")
            if text.startswith(EOS_TAG, sc.pos):
                sc.pos += len(EOS_TAG)
                break
            value, at = sc.integer()
            values.append(value)
            positions.append(at)
        sc.finish()
        for value, at in zip(values, positions):
            if value > GRID_MAX:
                raise AnswerRangeError(f"coordinate {value} exceeds {GRID_MAX}", at)
        return _polygon_from_ints(values, warnings, clamp=False)

    m = re.search(re.escape(BOS_TAG) + r"(.*?)" + re.escape(EOS_TAG), text, re.DOTALL)
    region = m.group(1) if m else text
    if m is None:
        _warn(warnings, "BOS/EOS tags missing; scanning whole text")
    values = [int(v) for v in re.findall(r"-?\d+", region)]
    if len(values) > 50:
        _warn(warnings, f"{len(values)} integers found; using the first 50")
        values = values[:50]
    return _polygon_from_ints(values, warnings, clamp=True)


# ------------------------------------------------------------------ labels


def _checked_vocabulary(vocabulary) -> list[str]:
    vocab = list(vocabulary)
    clash = [l for l in vocab if l.lower() == EMPTY_LABEL_TEXT]
    if clash:
        raise ValueError(
            f"vocabulary label {clash[0]!r} collides with the reserved "
            f"empty-set text {EMPTY_LABEL_TEXT!r}"
        )
    return vocab


def render_multilabel(labels, vocabulary) -> AnswerText:
    """Alphabetical comma-joined label names; empty set renders the
    'no finding' convention."""
    vocab = set(_checked_vocabulary(vocabulary))
    labels = sorted(set(labels))
    unknown = [l for l in labels if l not in vocab]
    if unknown:
        raise ValueError(f"labels not in vocabulary: {unknown}")
    if not labels:
        return AnswerText(EMPTY_LABEL_TEXT)
    return AnswerText(", ".join(labels))


def parse_multilabel(
    text: str, vocabulary, mode: str = "strict", warnings: list[str] | None = None
):
    vocab = _checked_vocabulary(vocabulary)
    if mode == "strict":
        if text == EMPTY_LABEL_TEXT:
            return ()
        names = text.split(", ")
        offset = 0
        seen = []
        vocab_set = set(vocab)
        for name in names:
            if name not in vocab_set:
                raise AnswerRangeError(f"unknown label {name!r}", offset)
            if name in seen:
                _warn(warnings, f"duplicate label {name!r}")
            else:
                seen.append(name)
            offset += len(name) + 2
        return tuple(sorted(seen))

    if text.strip().lower() == EMPTY_LABEL_TEXT:
        return ()
    lowered = text.lower()
    found = sorted(label for label in vocab if label.lower() in lowered)
    if not found and EMPTY_LABEL_TEXT not in lowered:
        _warn(warnings, "no vocabulary label matched; treating as empty set")
    return tuple(found)


# ------------------------------------------------------------------ free text


def render_freeform(text: str) -> AnswerText:
    return AnswerText(text)


def parse_freeform(text: str, mode: str = "strict", warnings: list[str] | None = None) -> str:
    return text


# ------------------------------------------------------------------ dispatch

_RENDERERS = {
    TaskKind.CLASSIFICATION_BINARY: render_binary,
    TaskKind.GROUNDING_BOX2D: render_box2d,
    TaskKind.GROUNDING_BOX3D: render_box3d,
    TaskKind.GROUNDING_POINT: render_point,
    TaskKind.SEGMENTATION_POLYGON: render_polygon,
    TaskKind.REPORT: render_freeform,
    TaskKind.VQA_FREEFORM: render_freeform,
}

_PARSERS = {
    TaskKind.CLASSIFICATION_BINARY: parse_binary,
    TaskKind.GROUNDING_BOX2D: parse_box2d,
    TaskKind.GROUNDING_BOX3D: parse_box3d,
    TaskKind.GROUNDING_POINT: parse_point,
    TaskKind.SEGMENTATION_POLYGON: parse_polygon,
    TaskKind.REPORT: parse_freeform,
    TaskKind.VQA_FREEFORM: parse_freeform,
}


def render_answer(task: TaskKind, value, vocabulary=None) -> AnswerText:
    """Render any task's structured answer to its target text."""
    task = TaskKind(task)
    if task is TaskKind.CLASSIFICATION_MULTILABEL:
        if vocabulary is None:
            raise ValueError("multilabel rendering needs a vocabulary")
        return render_multilabel(value, vocabulary)
    if task is TaskKind.GROUNDING_POINT and isinstance(value, PointGold):
        value = value.point
    return _RENDERERS[task](value)


def parse_answer(text: str, task: TaskKind, mode: str = "strict", vocabulary=None) -> ParsedAnswer:
    """Parse model output text for a task; collects warnings on the result."""
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be strict or lenient, got {mode!r}")
    task = TaskKind(task)
    warnings: list[str] = []
    if task is TaskKind.CLASSIFICATION_MULTILABEL:
        if vocabulary is None:
            raise ValueError("multilabel parsing needs a vocabulary")
        value = parse_multilabel(text, vocabulary, mode, warnings)
    else:
        value = _PARSERS[task](text, mode, warnings)
    return ParsedAnswer(task=task, value=value, mode=mode, warnings=warnings)


# ------------------------------------------------------------------ gold JSON


def gold_to_json(task: TaskKind, value):
    """Structured gold -> plain JSON-serializable form (triplet files)."""
    task = TaskKind(task)
    if task is TaskKind.CLASSIFICATION_BINARY:
        return bool(value)
    if task is TaskKind.CLASSIFICATION_MULTILABEL:
        return sorted(value)
    if task is TaskKind.GROUNDING_BOX2D:
        return [[b.cls_id, b.x1, b.y1, b.x2, b.y2] for b in value]
    if task is TaskKind.GROUNDING_BOX3D:
        return {"center": list(value.center), "lengths": list(value.lengths)}
    if task is TaskKind.GROUNDING_POINT:
        if isinstance(value, GridPoint2):
            value = PointGold(point=value)
        out = {"point": [value.point.x, value.point.y]}
        if value.region is not None:
            r = value.region
            out["region"] = [r.cls_id, r.x1, r.y1, r.x2, r.y2]
        return out
    if task is TaskKind.SEGMENTATION_POLYGON:
        return [[p.x, p.y] for p in value.points]
    return str(value)


def gold_from_json(task: TaskKind, obj):
    """Inverse of :func:`gold_to_json`."""
    task = TaskKind(task)
    if task is TaskKind.CLASSIFICATION_BINARY:
        if not isinstance(obj, bool):
            raise ValueError(f"binary gold must be true/false, got {obj!r}")
        return obj
    if task is TaskKind.CLASSIFICATION_MULTILABEL:
        return tuple(sorted(str(l) for l in obj))
    if task is TaskKind.GROUNDING_BOX2D:
        return tuple(NormalizedBox2D(*[int(v) for v in row]) for row in obj)
    if task is TaskKind.GROUNDING_BOX3D:
        return Box3D(tuple(int(v) for v in obj["center"]), tuple(int(v) for v in obj["lengths"]))
    if task is TaskKind.GROUNDING_POINT:
        if isinstance(obj, dict):
            point = GridPoint2(int(obj["point"][0]), int(obj["point"][1]))
            region = None
            if obj.get("region") is not None:
                region = NormalizedBox2D(*[int(v) for v in obj["region"]])
            return PointGold(point=point, region=region)
        return PointGold(point=GridPoint2(int(obj[0]), int(obj[1])))
    if task is TaskKind.SEGMENTATION_POLYGON:
        return CanonicalPolygon(tuple(GridPoint2(int(x), int(y)) for x, y in obj))
    return str(obj)
