import json
import random

import pytest

from medvlkit.codec import PointGold, TaskKind, parse_answer
from medvlkit.compiler import (
    Annotation,
    CompileError,
    DatasetManifest,
    ImageRecord,
    InstructionTriplet,
    ManifestError,
    SynthSpec,
    TemplateSet,
    check_leakage,
    compile_triplets,
    generate_synthetic_dataset,
    load_manifest,
    read_triplets,
    save_manifest,
    split_patients,
    write_triplets,
)
from medvlkit.geometry import GridPoint2, NormalizedBox2D

VOCAB = ("blue triangle", "green ellipse", "red rectangle", "yellow rectangle")


def _image(image_id="img_0", patient="p_0", annotations=(), official=None):
    return ImageRecord(
        image_id=image_id,
        patient_id=patient,
        content_hash=f"sha256:{image_id}",
        extent=(256, 256),
        annotations=tuple(annotations),
        official_split=official,
    )


def _manifest(images, dataset_id="unit", vocabulary=VOCAB):
    return DatasetManifest(
        dataset_id=dataset_id,
        modality="photography",
        images=tuple(images),
        label_vocabulary=tuple(vocabulary),
    )


# ---------------------------------------------------------------- manifest IO


def test_manifest_roundtrip(tmp_path):
    ann = Annotation(
        TaskKind.GROUNDING_BOX2D,
        (NormalizedBox2D(0, 10, 10, 200, 300),),
        {"finding": "red rectangle"},
    )
    m = _manifest([_image(annotations=[ann])])
    path = tmp_path / "m.jsonl"
    save_manifest(m, path)
    loaded = load_manifest(path)
    assert loaded == m


def test_manifest_minimal_valid(tmp_path):
    path = tmp_path / "m.jsonl"
    lines = [
        {"record": "header", "schema_version": 1, "dataset_id": "d", "modality": "xray",
         "label_vocabulary": ["Edema"]},
        {"record": "image", "image_id": "a", "patient_id": "p", "content_hash": "h",
         "extent": [100, 100],
         "annotations": [{"task": "classification_binary", "gold": True, "slots": {"finding": "Edema"}}]},
    ]
    path.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    m = load_manifest(path)
    assert len(m.images) == 1
    assert m.images[0].annotations[0].gold is True


def test_manifest_duplicate_image_id(tmp_path):
    path = tmp_path / "m.jsonl"
    header = {"record": "header", "schema_version": 1, "dataset_id": "d", "modality": "xray"}
    img = {"record": "image", "image_id": "a", "patient_id": "p", "content_hash": "h",
           "extent": [10, 10], "annotations": []}
    path.write_text("\n".join(json.dumps(l) for l in (header, img, img)) + "\n")
    with pytest.raises(ManifestError) as exc:
        load_manifest(path)
    assert any("duplicate image_id 'a'" in v for v in exc.value.violations)


def test_manifest_invalid_box_gold(tmp_path):
    path = tmp_path / "m.jsonl"
    header = {"record": "header", "schema_version": 1, "dataset_id": "d", "modality": "xray"}
    img = {"record": "image", "image_id": "a", "patient_id": "p", "content_hash": "h",
           "extent": [10, 10],
           "annotations": [{"task": "grounding_box2d", "gold": [[0, 300, 10, 100, 20]]}]}
    path.write_text("\n".join(json.dumps(l) for l in (header, img)) + "\n")
    with pytest.raises(ManifestError) as exc:
        load_manifest(path)
    assert any("gold does not validate" in v for v in exc.value.violations)


def test_manifest_schema_version_gate(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps({"record": "header", "schema_version": 99,
                                "dataset_id": "d", "modality": "xray"}) + "\n")
    with pytest.raises(ManifestError) as exc:
        load_manifest(path)
    assert any("schema_version" in v for v in exc.value.violations)


# ---------------------------------------------------------------- splits


def test_split_ten_patients_exact():
    images = [_image(f"img_{i}", f"p_{i}") for i in range(10)]
    assignment = split_patients(_manifest(images), seed=7)
    counts = {s: 0 for s in ("train", "val", "test")}
    for split in assignment.by_patient.values():
        counts[split] += 1
    assert (counts["train"], counts["val"], counts["test"]) == (7, 1, 2)


def test_split_deterministic_and_patient_level():
    images = [_image(f"img_{i}", f"p_{i % 6}") for i in range(18)]
    m = _manifest(images)
    a1 = split_patients(m, seed=3)
    a2 = split_patients(m, seed=3)
    assert a1 == a2
    a3 = split_patients(m, seed=4)
    assert a1 != a3  # different seed reshuffles
    # all images of one patient land in one split
    for im in images:
        assert a1.split_for(im) == a1.by_patient[im.patient_id]


def test_split_counts_within_one():
    for n in (10, 11, 23, 57, 100):
        images = [_image(f"img_{i}", f"p_{i}") for i in range(n)]
        assignment = split_patients(_manifest(images), seed=1)
        counts = {s: 0 for s in ("train", "val", "test")}
        for split in assignment.by_patient.values():
            counts[split] += 1
        for split, ratio in zip(("train", "val", "test"), (7, 1, 2)):
            assert abs(counts[split] - n * ratio / 10) < 1


def test_split_official_passthrough():
    images = [_image(f"img_{i}", f"p_{i}", official="test") for i in range(3)]
    assignment = split_patients(_manifest(images))
    assert assignment.source == "official"
    assert assignment.split_for(images[0]) == "test"


def test_split_bad_ratios():
    with pytest.raises(CompileError):
        split_patients(_manifest([_image()]), ratios=(1, 0, 1))


# ---------------------------------------------------------------- leakage


def test_leakage_disjoint_empty():
    train = _manifest([_image("a", "p", ())], dataset_id="train-ds")
    eval_m = _manifest([_image("b", "q", ())], dataset_id="eval-ds")
    report = check_leakage([train], [eval_m])
    assert report.empty


def test_leakage_planted_duplicate_detected():
    shared = ImageRecord("dup_t", "p", "sha256:LEAK", (10, 10))
    train = _manifest([shared, _image("x", "p")], dataset_id="train-ds")
    eval_img = ImageRecord("dup_e", "q", "sha256:LEAK", (10, 10))
    eval_m = _manifest([eval_img], dataset_id="eval-ds")
    report = check_leakage([train], [eval_m])
    assert not report.empty
    entry = report.entries[0]
    assert entry.content_hash == "sha256:LEAK"
    assert entry.train_dataset_id == "train-ds"
    assert entry.eval_dataset_id == "eval-ds"
    assert set(entry.image_ids) == {"dup_t", "dup_e"}


def test_leakage_within_train_not_reported():
    a = ImageRecord("a", "p", "sha256:SAME", (10, 10))
    b = ImageRecord("b", "p", "sha256:SAME", (10, 10))
    train = _manifest([a, b], dataset_id="train-ds")
    eval_m = _manifest([_image("c", "q")], dataset_id="eval-ds")
    assert check_leakage([train], [eval_m]).empty


# ---------------------------------------------------------------- compile


def _grounded_manifest():
    images = []
    for i in range(6):
        box = NormalizedBox2D(0, 10 * i, 10, 10 * i + 100, 200)
        ann = [
            Annotation(TaskKind.GROUNDING_BOX2D, (box,), {"finding": "red rectangle"}),
            Annotation(TaskKind.CLASSIFICATION_BINARY, i % 2 == 0, {"finding": "red rectangle"}),
        ]
        images.append(_image(f"img_{i}", f"p_{i % 3}", ann))
    return _manifest(images)


def test_compile_paper_prompt_fixtures():
    # the 3D classification/grounding pair uses the branch-structure prompts
    ann = [
        Annotation(TaskKind.CLASSIFICATION_BINARY, True,
                   {"finding": "plaque", "structure": "LM"}),
    ]
    m = _manifest([_image("i0", "p0", ann)], vocabulary=())
    triplets, _ = compile_triplets(m)
    assert triplets[0].instruction == "Is there a plaque on LM?"
    assert triplets[0].target == "yes"


def test_compile_box3d_prompt_fixture():
    from medvlkit.geometry import Box3D

    ann = [
        Annotation(TaskKind.GROUNDING_BOX3D, Box3D((512, 300, 44), (20, 18, 12)),
                   {"finding": "plaque", "structure": "LM"}),
    ]
    m = _manifest([_image("i0", "p0", ann)], vocabulary=())
    triplets, _ = compile_triplets(m)
    assert triplets[0].instruction == "Where is the plaque on LM?"
    assert triplets[0].target == "center at [512, 300, 44], box length is [20, 18, 12]"


def test_compile_targets_roundtrip_to_gold():
    m = _grounded_manifest()
    triplets, summary = compile_triplets(m)
    assert summary["n_triplets"] == len(triplets) == 12
    for t in triplets:
        parsed = parse_answer(t.target, t.task, "strict", vocabulary=VOCAB)
        if t.task is TaskKind.GROUNDING_POINT:
            assert parsed.value == t.gold.point
        else:
            assert parsed.value == t.gold


def test_compile_order_independent():
    m = _grounded_manifest()
    t1, _ = compile_triplets(m)
    shuffled = DatasetManifest(
        dataset_id=m.dataset_id,
        modality=m.modality,
        images=tuple(reversed(m.images)),
        label_vocabulary=m.label_vocabulary,
    )
    t2, _ = compile_triplets(shuffled)
    assert t1 == t2


def test_compile_missing_template_errors():
    ann = [Annotation(TaskKind.GROUNDING_BOX2D, (NormalizedBox2D(0, 0, 0, 10, 10),), {})]
    m = _manifest([_image("i0", "p0", ann)])
    with pytest.raises(CompileError) as exc:
        compile_triplets(m)
    assert "no applicable template" in str(exc.value)


def test_template_set_load_and_unknown_slot(tmp_path):
    path = tmp_path / "templates.json"
    path.write_text(json.dumps({"classification_binary": ["Any {finding} here?"]}))
    ts = TemplateSet.load(path)
    assert ts.by_task[TaskKind.CLASSIFICATION_BINARY] == ("Any {finding} here?",)
    path.write_text(json.dumps({"classification_binary": ["Bad {slot_bad}?"]}))
    with pytest.raises(CompileError):
        TemplateSet.load(path)


def test_triplet_file_roundtrip(tmp_path):
    triplets, _ = compile_triplets(_grounded_manifest())
    path = tmp_path / "triplets.jsonl"
    write_triplets(triplets, path)
    back = read_triplets(path)
    assert back == triplets
    keys = set(json.loads(path.read_text().splitlines()[0]).keys())
    assert keys == {"sample_id", "image_ref", "task", "instruction", "target", "gold", "split"}


# ---------------------------------------------------------------- synthetic


def test_synth_deterministic(tmp_path):
    spec = SynthSpec(n_images=10, seed=1)
    m1 = generate_synthetic_dataset(spec, tmp_path / "a")
    m2 = generate_synthetic_dataset(spec, tmp_path / "b")
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (
        tmp_path / "b" / "manifest.jsonl"
    ).read_bytes()
    assert m1.images[0].content_hash == m2.images[0].content_hash


def test_synth_gold_matches_drawn_pixels(tmp_path):
    import numpy as np
    from PIL import Image

    spec = SynthSpec(n_images=5, seed=3, max_shapes=1)
    manifest = generate_synthetic_dataset(spec, tmp_path)
    background = np.array([24, 24, 28])
    for img_rec in manifest.images:
        box_ann = next(a for a in img_rec.annotations if a.task is TaskKind.GROUNDING_BOX2D)
        box = box_ann.gold[0]
        arr = np.asarray(Image.open(tmp_path / img_rec.image_path).convert("RGB"))
        w, h = img_rec.extent
        colored = np.argwhere((np.abs(arr.astype(int) - background).sum(axis=2)) > 30)
        ys, xs = colored[:, 0], colored[:, 1]
        assert xs.min() >= box.x1 / 1000 * w - 2 and xs.max() <= box.x2 / 1000 * w + 2
        assert ys.min() >= box.y1 / 1000 * h - 2 and ys.max() <= box.y2 / 1000 * h + 2
        # gold polygons are canonical: 25 points
        for a in img_rec.annotations:
            if a.task is TaskKind.SEGMENTATION_POLYGON:
                assert len(a.gold.points) == 25


def test_synth_point_gold_has_region(tmp_path):
    manifest = generate_synthetic_dataset(SynthSpec(n_images=12, seed=5), tmp_path)
    points = [
        a
        for im in manifest.images
        for a in im.annotations
        if a.task is TaskKind.GROUNDING_POINT
    ]
    assert points  # multi-shape images exist at this size
    for ann in points:
        assert isinstance(ann.gold, PointGold)
        assert ann.gold.region is not None
        assert ann.gold.region.contains(ann.gold.point)


def test_synth_compiles_and_roundtrips(tmp_path):
    manifest = generate_synthetic_dataset(SynthSpec(n_images=8, seed=2), tmp_path)
    triplets, summary = compile_triplets(manifest)
    assert summary["by_task"]["grounding_box2d"] == 8
    for t in triplets:
        parsed = parse_answer(t.target, t.task, "strict", vocabulary=manifest.label_vocabulary)
        expected = t.gold.point if isinstance(t.gold, PointGold) else t.gold
        assert parsed.value == expected


def test_synth_spec_validation(tmp_path):
    with pytest.raises(CompileError):
        SynthSpec(extent=(32, 32))
    with pytest.raises(CompileError):
        SynthSpec(classes=("mauve dodecahedron",))
    with pytest.raises(CompileError):
        SynthSpec(image_format="tiff")
