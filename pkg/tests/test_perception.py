"""
Tests for the mock detector, detection filtering, the noisy captioner and the
hashing embedder.
"""

import math

import numpy as np
import pytest

from embodied_captioning.config import CameraConfig, DetectorConfig, NoiseConfig
from embodied_captioning.models import AgentState, Detection, ObjectGT
from embodied_captioning.perception import (
    BOILERPLATE,
    HALLUCINATIONS,
    HashingEmbedder,
    base_corruption_probability,
    box_iou,
    caption,
    corruption_probability,
    cosine,
    detect,
    filter_detections,
    non_max_suppression,
)
from embodied_captioning.scene import observe

QUIET = NoiseConfig(p_attr_swap=0.0, p_category_swap=0.0, p_hallucinate=0.0, p_drop_detail=0.0, p_boilerplate=0.0)
TABLE = ObjectGT(1, "table", ["red", "wooden", "window"], "a red wooden table near the window", [(3, 3, 1)])


def _det(bbox, confidence, width=64, height=64):
    return Detection(
        object_view_id="0:0", logits=np.zeros(6), bbox=bbox, mask=np.empty(0, dtype=np.int64),
        confidence=confidence, width=width, height=height,
    )


def test_box_iou():
    assert box_iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert box_iou((0, 0, 10, 10), (10, 10, 20, 20)) == 0.0
    assert box_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50 / 150)


def test_non_max_suppression_keeps_highest_scores():
    """Test greedy suppression at the IoU threshold."""
    boxes = [(0, 0, 10, 10), (1, 1, 10, 10), (20, 20, 30, 30)]
    assert non_max_suppression(boxes, [0.9, 0.95, 0.5], 0.8) == [1, 2]
    assert non_max_suppression(boxes, [0.9, 0.95, 0.5], 0.9) == [1, 0, 2]


def test_filter_detections_thresholds():
    """Test confidence, area and overlap filtering."""
    dets = [
        _det((0, 0, 20, 20), 0.9),
        _det((1, 1, 20, 20), 0.8),
        _det((30, 30, 60, 60), 0.5),
        _det((40, 0, 45, 5), 0.99),
    ]
    kept = filter_detections(dets, DetectorConfig())
    assert [id(d) for d in kept] == [id(dets[0])]


def test_filter_detections_is_a_fixed_point(rng):
    """Test that filtering filtered detections changes nothing."""
    dets = []
    for _ in range(40):
        x0, y0 = rng.integers(0, 48, size=2)
        w, h = rng.integers(4, 30, size=2)
        dets.append(_det((int(x0), int(y0), int(min(64, x0 + w)), int(min(64, y0 + h))), float(rng.uniform(0.5, 1.0))))
    once = filter_detections(dets)
    assert [id(d) for d in filter_detections(once)] == [id(d) for d in once]
    positions = [i for i, d in enumerate(dets) if any(d is k for k in once)]
    assert positions == sorted(positions)
    assert len(positions) == len(once)


def test_detect_labels_visible_object(box_scene):
    """Test detections of the pillar with and without misclassification."""
    scene = box_scene
    camera = CameraConfig(width=16, height=16, fov=math.pi / 2)
    obs = observe(scene, AgentState((2.0, 2.1, 1.3), 0.0), camera)

    dets = detect(obs, scene, DetectorConfig(misclass_rate=0.0, min_pixels=1), np.random.default_rng(0), step=3)
    assert len(dets) == 1
    det = dets[0]
    assert det.class_index == scene.objects[0].category_index
    assert det.object_id_gt == 5
    assert det.object_view_id == "3:0"
    assert 0.0 <= det.confidence <= 1.0
    assert det.descriptor is not None
    x0, y0, x1, y1 = det.bbox
    assert 0 <= x0 < x1 <= 16 and 0 <= y0 < y1 <= 16

    wrong = detect(obs, scene, DetectorConfig(misclass_rate=1.0, min_pixels=1), np.random.default_rng(0))
    assert wrong[0].class_index != scene.objects[0].category_index

    assert detect(obs, scene, DetectorConfig(min_pixels=10_000), np.random.default_rng(0)) == []


def test_corruption_probability():
    """Test the additive occlusion term, per-object multiplier and clamping."""
    cfg = NoiseConfig(p_attr_swap=0.1, p_category_swap=0.0, p_hallucinate=0.0, p_drop_detail=0.0, occlusion_boost=0.1)
    assert base_corruption_probability(cfg) == pytest.approx(0.1)
    assert corruption_probability(1.0, cfg) == pytest.approx(0.1)
    assert corruption_probability(0.0, cfg, multiplier=2.0) == pytest.approx(0.4)
    assert corruption_probability(0.0, NoiseConfig(p_attr_swap=0.9), multiplier=2.0) == 1.0
    assert corruption_probability(0.0, QUIET) == 0.0
    everything = NoiseConfig(p_attr_swap=0.5, p_category_swap=0.5, p_hallucinate=0.0, p_drop_detail=0.0)
    assert base_corruption_probability(everything) == pytest.approx(0.75)


def test_caption_without_noise_is_the_annotation(rng):
    record = caption((TABLE, 1.0), QUIET, rng)
    assert record.text == TABLE.gt_caption
    assert not record.corrupted
    assert record.object_id_gt == 1


def test_each_corruption_kind(rng):
    """Test the single corruption kinds at probability one."""
    dropped = caption((TABLE, 1.0), NoiseConfig(**{**QUIET.__dict__, "p_drop_detail": 1.0}), rng)
    assert dropped.text == "a red wooden table"
    assert dropped.corrupted

    swapped = caption((TABLE, 1.0), NoiseConfig(**{**QUIET.__dict__, "p_category_swap": 1.0}), rng)
    assert "table" not in swapped.text.split()
    assert swapped.corrupted

    attr = caption((TABLE, 1.0), NoiseConfig(**{**QUIET.__dict__, "p_attr_swap": 1.0}), rng)
    assert attr.text != TABLE.gt_caption
    assert "table" in attr.text.split()

    hallucinated = caption((TABLE, 1.0), NoiseConfig(**{**QUIET.__dict__, "p_hallucinate": 1.0}), rng)
    assert hallucinated.text.startswith(TABLE.gt_caption + " with a ")
    assert hallucinated.text.split()[-1] in HALLUCINATIONS


def test_boilerplate_is_not_a_corruption(rng):
    record = caption((TABLE, 1.0), NoiseConfig(**{**QUIET.__dict__, "p_boilerplate": 1.0}), rng)
    assert any(record.text.startswith(b + " ") for b in BOILERPLATE)
    assert record.text.endswith(TABLE.gt_caption)
    assert not record.corrupted


def test_occlusion_raises_corruption_rate():
    """Test that occluded views are corrupted more often."""
    cfg = NoiseConfig(p_attr_swap=0.2, p_category_swap=0.0, p_hallucinate=0.0, p_drop_detail=0.0, occlusion_boost=0.2)
    rng = np.random.default_rng(7)
    full = sum(caption((TABLE, 1.0), cfg, rng).corrupted for _ in range(2000)) / 2000
    occluded = sum(caption((TABLE, 0.0), cfg, rng).corrupted for _ in range(2000)) / 2000
    assert full == pytest.approx(0.2, abs=0.04)
    assert occluded == pytest.approx(0.4, abs=0.04)


@pytest.mark.parametrize("visible_fraction, occlusion_boost", [(1.0, 0.0), (0.5, 0.2)])
def test_corruption_rate_matches_corruption_probability(visible_fraction, occlusion_boost):
    """Test 10000 views with every kind enabled at an effective probability of 0.3."""
    per_kind = 1.0 - 0.7 ** 0.25 if occlusion_boost == 0 else 1.0 - 0.8 ** 0.25
    cfg = NoiseConfig(
        p_attr_swap=per_kind, p_category_swap=per_kind, p_hallucinate=per_kind, p_drop_detail=per_kind,
        occlusion_boost=occlusion_boost, p_boilerplate=0.0,
    )
    assert corruption_probability(visible_fraction, cfg) == pytest.approx(0.3)
    rng = np.random.default_rng(11)
    records = [caption((TABLE, visible_fraction), cfg, rng) for _ in range(10_000)]
    assert sum(r.corrupted for r in records) / len(records) == pytest.approx(0.3, abs=0.02)
    assert all(r.corrupted == (r.text != TABLE.gt_caption) for r in records)


def test_corruption_that_cannot_change_the_text_is_not_recorded(rng):
    """Test that kinds with nothing to act on leave the caption clean."""
    vase = ObjectGT(1, "vase", [], "a vase", [(3, 3, 1)])
    for kind in ("p_attr_swap", "p_drop_detail"):
        record = caption((vase, 1.0), NoiseConfig(**{**QUIET.__dict__, kind: 1.0}), rng)
        assert record.text == "a vase"
        assert not record.corrupted
    mixed = NoiseConfig(**{**QUIET.__dict__, "p_attr_swap": 1.0, "p_hallucinate": 0.5})
    record = caption((vase, 1.0), mixed, rng)
    assert record.corrupted
    assert record.text.startswith("a vase with a ")


def test_hashing_embedder(embedder):
    """Test unit norm, determinism and the empty text."""
    a = embedder("a red wooden table")
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert np.array_equal(a, HashingEmbedder(256)("a red wooden table"))
    assert cosine(a, embedder("A  Red wooden TABLE")) == pytest.approx(1.0)
    assert not embedder("").any()
    assert cosine(a, embedder("")) == 0.0
    assert cosine(a, embedder("a blue glass tv")) < 1.0


def test_disjoint_buckets_give_zero_cosine():
    """Test "red couch" against "blue table" once their tokens and bigrams share no bucket."""
    def buckets(model, text):
        words = text.split()
        return {model.bucket(w) for w in words} | {model.bucket(f"{a} {b}") for a, b in zip(words, words[1:])}

    model = next(
        m for m in (HashingEmbedder(dim) for dim in range(256, 1024))
        if len(buckets(m, "red couch") | buckets(m, "blue table")) == 6
    )
    assert cosine(model("red couch"), model("blue table")) == 0.0


def test_embedder_cache_is_bounded():
    model = HashingEmbedder(64, cache_size=8)
    for i in range(20):
        model(f"a red couch number {i}")
    assert model.cache_info().currsize == 8
    assert np.array_equal(model("a red couch number 0"), HashingEmbedder(64)("a red couch number 0"))
