"""Dataset manifests, patient-level splits, leakage checks and triplet
compilation, plus a deterministic synthetic-shapes generator for
desk-scale end-to-end runs.

Manifests and triplet streams are line-delimited JSON. A manifest starts
with a header record (schema version, dataset id, modality, label
vocabulary) followed by one record per image; see docs/file_formats.md.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from PIL import Image, ImageDraw

from . import codec
from .codec import PointGold, TaskKind, gold_from_json, gold_to_json, render_answer
from .geometry import (
    CanonicalPolygon,
    GridPoint2,
    NormalizedBox2D,
    RawPolygon,
    canonicalize_polygon,
    normalize_point,
)

SCHEMA_VERSION = 1
MODALITIES = ("xray", "ct", "mri", "ultrasound", "photography", "endoscopy_video")
SPLITS = ("train", "val", "test")
SLOT_NAMES = ("finding", "structure", "class_set", "question")


class CompileError(ValueError):
    pass


class ManifestError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__(
            "manifest validation failed:\n" + "\n".join(f"  - {v}" for v in violations)
        )
        self.violations = violations


# ------------------------------------------------------------------ model


@dataclass(frozen=True)
class Annotation:
    task: TaskKind
    gold: Any
    slots: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    patient_id: str
    content_hash: str
    extent: tuple[int, int]
    annotations: tuple[Annotation, ...] = ()
    frame_index: int | None = None
    official_split: str | None = None
    image_path: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    modality: str
    images: tuple[ImageRecord, ...]
    label_vocabulary: tuple[str, ...] = ()

    def patients(self) -> list[str]:
        return sorted({im.patient_id for im in self.images})

    def has_official_split(self) -> bool:
        return any(im.official_split is not None for im in self.images)


# ------------------------------------------------------------------ manifest IO


def _validate_image_obj(obj, idx, seen_ids, vocabulary, violations) -> ImageRecord | None:
    path = f"images[{idx}]"
    for key in ("image_id", "patient_id", "content_hash", "extent"):
        if key not in obj:
            violations.append(f"{path}: missing field {key!r}")
            return None
    image_id = str(obj["image_id"])
    path = f"images[{idx}]({image_id})"
    if image_id in seen_ids:
        violations.append(f"{path}: duplicate image_id {image_id!r}")
        return None
    seen_ids.add(image_id)
    if not obj["content_hash"]:
        violations.append(f"{path}: content_hash is empty")
        return None
    extent = obj["extent"]
    if (
        not isinstance(extent, (list, tuple))
        or len(extent) != 2
        or any(not isinstance(v, int) or v <= 0 for v in extent)
    ):
        violations.append(f"{path}: extent must be a pair of positive integers")
        return None
    official = obj.get("official_split")
    if official is not None and official not in SPLITS:
        violations.append(f"{path}: official_split {official!r} not in {SPLITS}")
        return None

    annotations = []
    for a_idx, ann in enumerate(obj.get("annotations", [])):
        a_path = f"{path}.annotations[{a_idx}]"
        try:
            task = TaskKind(ann["task"])
        except (KeyError, ValueError) as e:
            violations.append(f"{a_path}: bad task ({e})")
            continue
        try:
            gold = gold_from_json(task, ann["gold"])
        except (KeyError, ValueError, TypeError) as e:
            violations.append(f"{a_path}: gold does not validate for {task.value}: {e}")
            continue
        if task is TaskKind.CLASSIFICATION_MULTILABEL:
            unknown = [l for l in gold if l not in vocabulary]
            if unknown:
                violations.append(f"{a_path}: labels not in vocabulary: {unknown}")
                continue
        slots = {str(k): str(v) for k, v in ann.get("slots", {}).items()}
        bad_slots = [k for k in slots if k not in SLOT_NAMES]
        if bad_slots:
            violations.append(f"{a_path}: unknown slots {bad_slots}; allowed {SLOT_NAMES}")
            continue
        annotations.append(Annotation(task=task, gold=gold, slots=slots))

    return ImageRecord(
        image_id=image_id,
        patient_id=str(obj["patient_id"]),
        content_hash=str(obj["content_hash"]),
        extent=(extent[0], extent[1]),
        annotations=tuple(annotations),
        frame_index=obj.get("frame_index"),
        official_split=official,
        image_path=obj.get("image_path"),
    )


def load_manifest(path) -> DatasetManifest:
    """Load and fully validate a manifest; raises ManifestError listing
    every violation with its record path."""
    path = Path(path)
    if not path.exists():
        raise ManifestError([f"manifest file not found: {path}"])
    violations: list[str] = []
    header = None
    images: list[ImageRecord] = []
    seen_ids: set[str] = set()
    vocabulary: tuple[str, ...] = ()

    with path.open() as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                violations.append(f"line {lineno + 1}: invalid JSON ({e})")
                continue
            record = obj.get("record")
            if header is None:
                if record != "header":
                    violations.append("line 1: first record must be the header")
                    break
                if obj.get("schema_version") != SCHEMA_VERSION:
                    violations.append(
                        f"header: schema_version {obj.get('schema_version')!r} "
                        f"!= supported {SCHEMA_VERSION}"
                    )
                    break
                if not obj.get("dataset_id"):
                    violations.append("header: dataset_id missing or empty")
                if obj.get("modality") not in MODALITIES:
                    violations.append(
                        f"header: modality {obj.get('modality')!r} not in {MODALITIES}"
                    )
                vocabulary = tuple(obj.get("label_vocabulary", []))
                header = obj
                continue
            if record != "image":
                violations.append(f"line {lineno + 1}: unknown record type {record!r}")
                continue
            rec = _validate_image_obj(obj, len(images), seen_ids, vocabulary, violations)
            if rec is not None:
                images.append(rec)

    if header is None and not violations:
        violations.append("manifest is empty")
    if violations:
        raise ManifestError(violations)
    return DatasetManifest(
        dataset_id=str(header["dataset_id"]),
        modality=str(header["modality"]),
        images=tuple(images),
        label_vocabulary=vocabulary,
    )


def save_manifest(manifest: DatasetManifest, path):
    """Write a manifest deterministically (sorted keys, fixed separators)."""
    path = Path(path)
    records = [
        {
            "record": "header",
            "schema_version": SCHEMA_VERSION,
            "dataset_id": manifest.dataset_id,
            "modality": manifest.modality,
            "label_vocabulary": list(manifest.label_vocabulary),
        }
    ]
    for im in manifest.images:
        obj = {
            "record": "image",
            "image_id": im.image_id,
            "patient_id": im.patient_id,
            "content_hash": im.content_hash,
            "extent": list(im.extent),
            "annotations": [
                {
                    "task": a.task.value,
                    "gold": gold_to_json(a.task, a.gold),
                    "slots": dict(sorted(a.slots.items())),
                }
                for a in im.annotations
            ],
        }
        if im.frame_index is not None:
            obj["frame_index"] = im.frame_index
        if im.official_split is not None:
            obj["official_split"] = im.official_split
        if im.image_path is not None:
            obj["image_path"] = im.image_path
        records.append(obj)
    with path.open("w") as fh:
        for obj in records:
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


# ------------------------------------------------------------------ splits


@dataclass(frozen=True)
class SplitAssignment:
    by_patient: dict[str, str]
    ratios: tuple[int, int, int]
    seed: int | None
    source: str = "random"  # random | official

    def split_for(self, image: ImageRecord) -> str:
        if self.source == "official":
            if image.official_split is None:
                raise CompileError(
                    f"image {image.image_id} lacks an official split assignment"
                )
            return image.official_split
        return self.by_patient[image.patient_id]


def _largest_remainder_counts(n: int, ratios) -> list[int]:
    total = sum(ratios)
    exact = [n * r / total for r in ratios]
    base = [math.floor(e) for e in exact]
    leftover = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: exact[i] - base[i], reverse=True)
    for i in order[:leftover]:
        base[i] += 1
    return base


def split_patients(manifest: DatasetManifest, ratios=(7, 1, 2), seed: int = 0) -> SplitAssignment:
    """Deterministic patient-level split (7:1:2 by default).

    When the manifest carries official per-image split flags they are
    passed through untouched; otherwise patients are shuffled by seed and
    cut so each split count is within one of its exact proportion. All
    images of a patient share one split.
    """
    if manifest.has_official_split():
        missing = [im.image_id for im in manifest.images if im.official_split is None]
        if missing:
            raise CompileError(
                f"official split present but missing for images: {missing[:5]}"
            )
        return SplitAssignment(by_patient={}, ratios=tuple(ratios), seed=None, source="official")
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise CompileError(f"ratios must be three positive numbers, got {ratios}")
    patients = manifest.patients()
    if not patients:
        raise CompileError("manifest has no patients")
    rng = random.Random(seed)
    rng.shuffle(patients)
    counts = _largest_remainder_counts(len(patients), ratios)
    by_patient = {}
    cursor = 0
    for split, count in zip(SPLITS, counts):
        for pid in patients[cursor:cursor + count]:
            by_patient[pid] = split
        cursor += count
    return SplitAssignment(by_patient=by_patient, ratios=tuple(ratios), seed=seed)


# ------------------------------------------------------------------ leakage


@dataclass(frozen=True)
class LeakEntry:
    content_hash: str
    train_dataset_id: str
    eval_dataset_id: str
    image_ids: tuple[str, ...]


@dataclass(frozen=True)
class LeakageReport:
    entries: tuple[LeakEntry, ...]

    @property
    def empty(self) -> bool:
        return not self.entries

    def to_json(self) -> list[dict]:
        return [
            {
                "content_hash": e.content_hash,
                "train_dataset_id": e.train_dataset_id,
                "eval_dataset_id": e.eval_dataset_id,
                "image_ids": list(e.image_ids),
            }
            for e in self.entries
        ]


def check_leakage(train: Iterable[DatasetManifest], eval: Iterable[DatasetManifest]) -> LeakageReport:
    """Exact content-hash intersection between the train pool and each
    eval pool. Duplicates inside a single pool are not leakage."""
    train_index: dict[str, dict[str, list[str]]] = {}
    for m in train:
        for im in m.images:
            train_index.setdefault(im.content_hash, {}).setdefault(m.dataset_id, []).append(
                im.image_id
            )
    entries = []
    for m in eval:
        by_hash: dict[str, list[str]] = {}
        for im in m.images:
            by_hash.setdefault(im.content_hash, []).append(im.image_id)
        for content_hash, eval_ids in by_hash.items():
            hit = train_index.get(content_hash)
            if not hit:
                continue
            for train_ds in sorted(hit):
                entries.append(
                    LeakEntry(
                        content_hash=content_hash,
                        train_dataset_id=train_ds,
                        eval_dataset_id=m.dataset_id,
                        image_ids=tuple(sorted(set(hit[train_ds]) | set(eval_ids))),
                    )
                )
    entries.sort(key=lambda e: (e.content_hash, e.train_dataset_id, e.eval_dataset_id))
    return LeakageReport(entries=tuple(entries))


# ------------------------------------------------------------------ templates


DEFAULT_TEMPLATES: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.CLASSIFICATION_BINARY: (
        "Is there a {finding} on {structure}?",
        "Is there a {finding}?",
    ),
    TaskKind.CLASSIFICATION_MULTILABEL: (
        "What findings are present? Choose from: {class_set}.",
    ),
    TaskKind.GROUNDING_BOX2D: (
        "Where is the {finding}? Respond in the format (c, x1, y1, x2, y2).",
        "Locate the {finding} with a bounding box.",
    ),
    TaskKind.GROUNDING_BOX3D: (
        "Where is the {finding} on {structure}?",
    ),
    TaskKind.GROUNDING_POINT: (
        "Point to the {finding}.",
        "Mark the location of the {finding} with a point.",
    ),
    TaskKind.SEGMENTATION_POLYGON: (
        "Segment the {structure} from the image.",
        "Outline the boundary of the {finding}.",
    ),
    TaskKind.REPORT: (
        "What can we get from this medical image?",
        "Describe the findings in this image.",
    ),
    TaskKind.VQA_FREEFORM: (
        "{question}",
    ),
}

_SLOT_RE = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class TemplateSet:
    by_task: dict[TaskKind, tuple[str, ...]]

    @classmethod
    def default(cls) -> "TemplateSet":
        return cls(by_task=dict(DEFAULT_TEMPLATES))

    @classmethod
    def load(cls, path) -> "TemplateSet":
        with Path(path).open() as fh:
            raw = json.load(fh)
        by_task = {}
        for key, templates in raw.items():
            task = TaskKind(key)
            if not templates:
                raise CompileError(f"no templates for task {key}")
            for t in templates:
                bad = [s for s in _SLOT_RE.findall(t) if s not in SLOT_NAMES]
                if bad:
                    raise CompileError(f"template {t!r} uses unknown slots {bad}")
            by_task[task] = tuple(templates)
        return cls(by_task=by_task)

    def applicable(self, task: TaskKind, slots: dict[str, str]) -> list[str]:
        """Templates whose slots are all available, most specific tier only.

        A template using {finding} and {structure} beats one using just
        {finding}; the sample-id hash samples within the winning tier.
        """
        usable = [
            (len(set(_SLOT_RE.findall(t))), t)
            for t in self.by_task.get(task, ())
            if all(s in slots for s in _SLOT_RE.findall(t))
        ]
        if not usable:
            return []
        best = max(n for n, _ in usable)
        return [t for n, t in usable if n == best]


# ------------------------------------------------------------------ triplets


@dataclass(frozen=True)
class InstructionTriplet:
    sample_id: str
    image_ref: str
    task: TaskKind
    instruction: str
    target: str
    gold: Any
    split: str

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "image_ref": self.image_ref,
            "task": self.task.value,
            "instruction": self.instruction,
            "target": self.target,
            "gold": gold_to_json(self.task, self.gold),
            "split": self.split,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InstructionTriplet":
        task = TaskKind(obj["task"])
        return cls(
            sample_id=obj["sample_id"],
            image_ref=obj["image_ref"],
            task=task,
            instruction=obj["instruction"],
            target=obj["target"],
            gold=gold_from_json(task, obj["gold"]),
            split=obj["split"],
        )


def _stable_choice(options: list[str], key: str) -> str:
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return options[int.from_bytes(digest[:8], "big") % len(options)]


def compile_triplets(
    manifest: DatasetManifest,
    template_set: TemplateSet | None = None,
    split_assignment: SplitAssignment | None = None,
) -> tuple[list[InstructionTriplet], dict]:
    """One triplet per (image, annotation); templates are picked
    deterministically by sample-id hash, targets rendered by the codec.

    Output is sorted by sample_id, so compilation order never shows in the
    result. Annotations of one image share the same image_ref, which keeps
    multi-task supervision per specimen intact.
    """
    templates = template_set or TemplateSet.default()
    assignment = split_assignment or split_patients(manifest)
    class_set = ", ".join(manifest.label_vocabulary)

    triplets = []
    by_task: dict[str, int] = {}
    by_split: dict[str, int] = {}
    for image in manifest.images:
        split = assignment.split_for(image)
        image_ref = image.image_path or image.image_id
        for idx, ann in enumerate(image.annotations):
            sample_id = f"{manifest.dataset_id}/{image.image_id}/{idx:03d}-{ann.task.value}"
            slots = dict(ann.slots)
            slots.setdefault("class_set", class_set)
            options = templates.applicable(ann.task, slots)
            if not options:
                raise CompileError(
                    f"no applicable template for task {ann.task.value} "
                    f"with slots {sorted(slots)} (sample {sample_id})"
                )
            template = _stable_choice(options, sample_id)
            instruction = template.format(**slots)
            target = render_answer(ann.task, ann.gold, vocabulary=manifest.label_vocabulary)
            triplets.append(
                InstructionTriplet(
                    sample_id=sample_id,
                    image_ref=image_ref,
                    task=ann.task,
                    instruction=instruction,
                    target=target.text,
                    gold=ann.gold,
                    split=split,
                )
            )
            by_task[ann.task.value] = by_task.get(ann.task.value, 0) + 1
            by_split[split] = by_split.get(split, 0) + 1

    triplets.sort(key=lambda t: t.sample_id)
    summary = {
        "dataset_id": manifest.dataset_id,
        "n_images": len(manifest.images),
        "n_patients": len(manifest.patients()),
        "n_triplets": len(triplets),
        "by_task": dict(sorted(by_task.items())),
        "by_split": dict(sorted(by_split.items())),
    }
    return triplets, summary


def write_triplets(triplets: Iterable[InstructionTriplet], path):
    with Path(path).open("w") as fh:
        for t in triplets:
            fh.write(json.dumps(t.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def read_triplets(path) -> list[InstructionTriplet]:
    out = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(InstructionTriplet.from_json(json.loads(line)))
    return out


# ------------------------------------------------------------------ synthetic data


_PALETTE = {
    "red": (200, 60, 50),
    "green": (70, 170, 90),
    "blue": (60, 90, 200),
    "yellow": (220, 200, 70),
    "purple": (150, 80, 180),
}
_SHAPE_KINDS = ("rectangle", "ellipse", "triangle")


@dataclass(frozen=True)
class SynthSpec:
    n_images: int = 50
    extent: tuple[int, int] = (256, 256)
    classes: tuple[str, ...] = (
        "red rectangle",
        "green ellipse",
        "blue triangle",
        "yellow rectangle",
    )
    max_shapes: int = 3
    seed: int = 0
    image_format: str = "ppm"  # ppm is trivially parseable by downstream tools

    def __post_init__(self):
        if self.n_images < 1:
            raise CompileError("n_images must be >= 1")
        if min(self.extent) < 64:
            raise CompileError(f"extent {self.extent} too small for requested shapes")
        if self.image_format not in ("ppm", "png"):
            raise CompileError(f"image_format must be ppm or png, got {self.image_format}")
        for name in self.classes:
            parts = name.split()
            if len(parts) != 2 or parts[0] not in _PALETTE or parts[1] not in _SHAPE_KINDS:
                raise CompileError(
                    f"class {name!r} must be '<color> <shape>' with color in "
                    f"{sorted(_PALETTE)} and shape in {_SHAPE_KINDS}"
                )
        if not 1 <= self.max_shapes <= len(self.classes):
            raise CompileError("max_shapes must be between 1 and len(classes)")


def _region_phrase(cx: float, cy: float, extent) -> str:
    w, h = extent
    vert = "upper" if cy < h / 3 else ("lower" if cy > 2 * h / 3 else "middle")
    horiz = "left" if cx < w / 3 else ("right" if cx > 2 * w / 3 else "center")
    return f"{vert} {horiz}"


def _shape_geometry(kind: str, extent, rng: random.Random):
    """Pixel-space geometry: (bounds, polygon boundary points or None)."""
    w, h = extent
    size_w = rng.randint(int(0.25 * w), int(0.55 * w))
    size_h = rng.randint(int(0.25 * h), int(0.55 * h))
    x1 = rng.randint(0, w - size_w)
    y1 = rng.randint(0, h - size_h)
    x2, y2 = x1 + size_w, y1 + size_h
    if kind == "rectangle":
        return (x1, y1, x2, y2), None
    if kind == "ellipse":
        cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
        rx, ry = (x2 - x1) / 2, (y2 - y1) / 2
        boundary = tuple(
            (cx + rx * math.cos(2 * math.pi * i / 64), cy + ry * math.sin(2 * math.pi * i / 64))
            for i in range(64)
        )
        return (x1, y1, x2, y2), boundary
    # triangle: apex on the top edge of the bounds
    apex = (rng.randint(x1, x2), y1)
    boundary = (apex, (float(x2), float(y2)), (float(x1), float(y2)))
    return (x1, y1, x2, y2), tuple((float(px), float(py)) for px, py in boundary)


def _normalize_box(cls_id, bounds, extent) -> NormalizedBox2D:
    x1, y1, x2, y2 = bounds
    p1 = normalize_point((x1, y1), extent)
    p2 = normalize_point((x2, y2), extent)
    return NormalizedBox2D(cls_id, p1.x, p1.y, p2.x, p2.y)


def generate_synthetic_dataset(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Render deterministic shape images with exact gold annotations.

    Writes ``out_dir/images/*.{ppm,png}`` and ``out_dir/manifest.jsonl``;
    returns the manifest. Identical specs produce byte-identical manifests
    and images.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(spec.seed)
    w, h = spec.extent

    # patients own 1-4 consecutive images
    patient_of_image: list[str] = []
    patient_idx = 0
    while len(patient_of_image) < spec.n_images:
        size = rng.randint(1, 4)
        pid = f"patient_{patient_idx:04d}"
        patient_of_image.extend([pid] * size)
        patient_idx += 1
    patient_of_image = patient_of_image[: spec.n_images]

    records = []
    for i in range(spec.n_images):
        image_id = f"img_{i:05d}"
        n_shapes = rng.randint(1, spec.max_shapes)
        class_names = rng.sample(list(spec.classes), n_shapes)

        img = Image.new("RGB", (w, h), (24, 24, 28))
        draw = ImageDraw.Draw(img)
        shapes = []
        for name in class_names:
            color_name, kind = name.split()
            bounds, boundary = _shape_geometry(kind, spec.extent, rng)
            color = _PALETTE[color_name]
            if kind == "rectangle":
                draw.rectangle(bounds, fill=color)
            elif kind == "ellipse":
                draw.ellipse(bounds, fill=color)
            else:
                draw.polygon([(int(px), int(py)) for px, py in boundary], fill=color)
            shapes.append((name, bounds, boundary))

        annotations = []
        # one 2D grounding box per image (the first shape)
        name, bounds, _ = shapes[0]
        cls_id = spec.classes.index(name)
        box = _normalize_box(cls_id, bounds, spec.extent)
        annotations.append(
            Annotation(TaskKind.GROUNDING_BOX2D, (box,), {"finding": name})
        )
        # a point-grounding query for the second shape when present
        if len(shapes) > 1:
            name2, bounds2, _ = shapes[1]
            cls2 = spec.classes.index(name2)
            cx = (bounds2[0] + bounds2[2]) / 2
            cy = (bounds2[1] + bounds2[3]) / 2
            center = normalize_point((cx, cy), spec.extent)
            region = _normalize_box(cls2, bounds2, spec.extent)
            annotations.append(
                Annotation(
                    TaskKind.GROUNDING_POINT,
                    PointGold(point=center, region=region),
                    {"finding": name2},
                )
            )
        # polygon segmentation for the first curved shape
        for name_s, _, boundary in shapes:
            if boundary is not None:
                poly = canonicalize_polygon(RawPolygon(boundary, spec.extent))
                annotations.append(
                    Annotation(
                        TaskKind.SEGMENTATION_POLYGON,
                        poly,
                        {"finding": name_s, "structure": name_s},
                    )
                )
                break
        # multilabel: which classes are present
        present = tuple(sorted(n for n, _, _ in shapes))
        annotations.append(Annotation(TaskKind.CLASSIFICATION_MULTILABEL, present, {}))
        # binary yes for a present class, binary no for an absent one
        annotations.append(
            Annotation(TaskKind.CLASSIFICATION_BINARY, True, {"finding": shapes[0][0]})
        )
        absent = [c for c in spec.classes if c not in {n for n, _, _ in shapes}]
        if absent:
            annotations.append(
                Annotation(
                    TaskKind.CLASSIFICATION_BINARY,
                    False,
                    {"finding": rng.choice(sorted(absent))},
                )
            )
        # short deterministic report
        phrases = [
            f"a {n} in the {_region_phrase((b[0] + b[2]) / 2, (b[1] + b[3]) / 2, spec.extent)}"
            for n, b, _ in shapes
        ]
        report = "the image shows " + " and ".join(phrases) + "."
        annotations.append(Annotation(TaskKind.REPORT, report, {}))

        filename = f"{image_id}.{spec.image_format}"
        file_path = images_dir / filename
        img.save(file_path)
        digest = hashlib.sha256(file_path.read_bytes()).hexdigest()
        records.append(
            ImageRecord(
                image_id=image_id,
                patient_id=patient_of_image[i],
                content_hash=f"sha256:{digest}",
                extent=spec.extent,
                annotations=tuple(annotations),
                image_path=f"images/{filename}",
            )
        )

    manifest = DatasetManifest(
        dataset_id=f"synthetic-shapes-seed{spec.seed}",
        modality="photography",
        images=tuple(records),
        label_vocabulary=tuple(sorted(spec.classes)),
    )
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
