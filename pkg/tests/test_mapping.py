"""
Tests for the semantic voxel map, instance clustering and disagreement maps.
"""

import math
import time
from itertools import product

import numpy as np
import pytest

from embodied_captioning.config import CameraConfig, DetectorConfig, NoiseConfig
from embodied_captioning.exceptions import ContractError
from embodied_captioning.mapping import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    OccupancyKnowledge,
    SemanticVoxelMap,
    VoxelCell,
    caption_disagreement,
    cluster_objects,
    disagreement_map,
    integrate,
    mean_pairwise_distance,
    object_disagreement,
    reassociate_views,
)
from embodied_captioning.models import NUM_CLASSES, AgentState, CaptionRecord, ObjectInstance
from embodied_captioning.perception import caption, detect
from embodied_captioning.scene import observe

CAMERA = CameraConfig(width=16, height=16, fov=math.pi / 2)
POSE = AgentState((2.0, 2.1, 1.3), 0.0)


def _cell(label: int, refs=()) -> VoxelCell:
    logits = np.zeros(NUM_CLASSES)
    logits[label] = 1.0
    return VoxelCell(logit_sum=logits, hit_count=1, caption_refs=list(refs))


def _map(cells) -> SemanticVoxelMap:
    svm = SemanticVoxelMap(0.25)
    for voxel, label, refs in cells:
        svm.voxels[voxel] = _cell(label, refs)
    return svm


def flood_fill_components(svm: SemanticVoxelMap):
    """26-connected same-label components by breadth-first search."""
    labels = svm.labels()
    seen, components = set(), []
    for start in sorted(labels):
        if start in seen:
            continue
        component, frontier = {start}, [start]
        seen.add(start)
        while frontier:
            x, y, z = frontier.pop()
            for dx, dy, dz in product((-1, 0, 1), repeat=3):
                n = (x + dx, y + dy, z + dz)
                if n in labels and n not in seen and labels[n] == labels[start]:
                    seen.add(n)
                    component.add(n)
                    frontier.append(n)
        components.append(component)
    return sorted(components, key=min)


def _perceived_map(scene):
    obs = observe(scene, POSE, CAMERA)
    rng = np.random.default_rng(0)
    dets = detect(obs, scene, DetectorConfig(misclass_rate=0.0, min_pixels=1), rng)
    caps = [caption((scene.objects_by_id[d.object_id_gt], d.visible_fraction), NoiseConfig(), rng, POSE) for d in dets]
    svm = SemanticVoxelMap(scene.cell_size)
    integrate(svm, obs, dets, caps)
    return svm, obs, dets, caps


def test_integrate_projects_detections(box_scene):
    """Test that masked pixels land on the object's voxels with its label."""
    svm, _, dets, caps = _perceived_map(box_scene)
    pillar = set(box_scene.objects[0].voxels)
    assert svm.V > 0
    assert set(svm.voxels) <= pillar
    assert caps[0].caption_id == 0
    assert svm.captions[0] is caps[0]
    for cell in svm.voxels.values():
        assert cell.caption_refs == [0]
        assert cell.label == box_scene.objects[0].category_index
    assert sum(cell.hit_count for cell in svm.voxels.values()) == len(dets[0].mask)


def test_integrate_appends_caption_once_per_voxel(box_scene):
    svm, obs, dets, caps = _perceived_map(box_scene)
    again = [CaptionRecord("a tv", 5, POSE)]
    integrate(svm, obs, dets, again)
    assert again[0].caption_id == 1
    assert all(cell.caption_refs == [0, 1] for cell in svm.voxels.values())


def test_integrate_rejects_misaligned_inputs(box_scene):
    svm, obs, dets, _ = _perceived_map(box_scene)
    with pytest.raises(ContractError):
        integrate(svm, obs, dets, [])


def test_cluster_objects_small_example():
    """Test diagonal connectivity, label separation and raster numbering."""
    svm = _map([
        ((5, 5, 1), 0, [3]),
        ((6, 6, 2), 0, [4]),
        ((7, 6, 2), 1, [5]),
        ((0, 0, 1), 2, [1, 2]),
    ])
    instances = cluster_objects(svm)
    assert [i.instance_id for i in instances] == [1, 2, 3]
    assert instances[0].voxels == {(0, 0, 1)}
    assert instances[0].captions == [1, 2]
    assert instances[1].voxels == {(5, 5, 1), (6, 6, 2)}
    assert instances[1].captions == [3, 4]
    assert instances[1].category == "couch"
    assert instances[2].pseudo_label == 1


def test_cluster_objects_matches_flood_fill(rng):
    """Test clustering against a breadth-first oracle on random sparse maps."""
    for _ in range(10):
        cells = []
        for voxel in product(range(6), range(6), range(3)):
            if rng.random() < 0.35:
                cells.append((voxel, int(rng.integers(2)), [len(cells)]))
        svm = _map(cells)
        instances = cluster_objects(svm)
        assert [i.voxels for i in instances] == flood_fill_components(svm)
        assert [i.instance_id for i in instances] == list(range(1, len(instances) + 1))
        for inst in instances:
            refs = sorted(r for v in inst.voxels for r in svm.voxels[v].caption_refs)
            assert inst.captions == refs


@pytest.mark.slow
def test_cluster_objects_matches_flood_fill_on_full_grids():
    """Test a hundred random 16^3 labeled grids against the flood fill, clustering under 10 s."""
    rng = np.random.default_rng(2024)
    elapsed = 0.0
    for _ in range(100):
        occupied = np.argwhere(rng.random((16, 16, 16)) < 0.25)
        labels = rng.integers(3, size=len(occupied))
        svm = _map([(tuple(int(c) for c in v), int(label), [i]) for i, (v, label) in enumerate(zip(occupied, labels))])
        started = time.perf_counter()
        instances = cluster_objects(svm)
        elapsed += time.perf_counter() - started
        assert [i.voxels for i in instances] == flood_fill_components(svm)
    assert elapsed < 10.0


def test_cluster_empty_map():
    assert cluster_objects(SemanticVoxelMap()) == []


def test_map_snapshot_keeps_labels_and_captions(box_scene):
    svm, *_ = _perceived_map(box_scene)
    restored = SemanticVoxelMap.from_dict(svm.to_dict())
    assert restored.labels() == svm.labels()
    assert restored.caption_texts([0]) == svm.caption_texts([0])
    assert [i.voxels for i in cluster_objects(restored)] == [i.voxels for i in cluster_objects(svm)]


def test_mean_pairwise_distance():
    """Test the (1 - cos) / 2 pair distance."""
    assert mean_pairwise_distance([np.array([1.0, 0.0])]) == 0.0
    assert mean_pairwise_distance([np.array([1.0, 0.0]), np.array([0.0, 1.0])]) == pytest.approx(0.5)
    assert mean_pairwise_distance([np.array([1.0, 0.0]), np.array([-1.0, 0.0])]) == pytest.approx(1.0)


def test_caption_disagreement(embedder):
    """Test disagreement of agreeing, single and conflicting caption sets."""
    mixed = ["a red couch", "a glass vase on a shelf", "a red leather couch"]
    assert caption_disagreement(["a red couch", "a red couch"], embedder) == pytest.approx(0.0)
    assert caption_disagreement(["a red couch"], embedder) == 0.0
    assert 0.0 < caption_disagreement(mixed, embedder) <= 1.0


def test_object_disagreement_reads_the_registry(embedder):
    captions = {
        7: CaptionRecord("a red couch", 1, POSE),
        9: CaptionRecord("a glass vase on a shelf", 1, POSE),
    }
    inst = ObjectInstance(3, 0, set(), [7, 9])
    assert object_disagreement(inst, embedder, captions) == pytest.approx(
        caption_disagreement(["a red couch", "a glass vase on a shelf"], embedder)
    )


def test_occupancy_knowledge_is_monotone(box_scene):
    """Test that observed cells are revealed and never forgotten."""
    knowledge = OccupancyKnowledge(box_scene.bounds[:2], box_scene.cell_size, grid_size=16)
    assert knowledge.unknown_count() == 256
    knowledge.update(observe(box_scene, POSE, CAMERA))
    first = knowledge.grid().copy()
    assert set(np.unique(first)) <= {UNKNOWN, FREE, OCCUPIED}
    assert first[7, 10] == OCCUPIED
    assert first[knowledge.world_to_cell(POSE.position)] == FREE

    knowledge.update(observe(box_scene, AgentState(POSE.position, math.pi), CAMERA))
    second = knowledge.grid()
    assert np.all(second[first != UNKNOWN] != UNKNOWN)
    assert knowledge.unknown_count() < int((first == UNKNOWN).sum())


def test_disagreement_map_paints_footprints(box_scene, embedder):
    """Test the disagreement and explored channels."""
    knowledge = OccupancyKnowledge(box_scene.bounds[:2], box_scene.cell_size, grid_size=16)
    instances = [
        ObjectInstance(1, 0, {(3, 5, 1), (3, 5, 2), (4, 5, 1)}, []),
        ObjectInstance(2, 0, {(4, 5, 3), (9, 9, 1)}, []),
    ]
    agent = AgentState((2.0, 2.1, 1.3), 0.5)
    state = disagreement_map(SemanticVoxelMap(), instances, agent, knowledge, embedder, {1: 0.7, 2: 0.2})
    channel = state.disagreement_channel
    assert channel[5, 3] == pytest.approx(0.7)
    assert channel[5, 4] == pytest.approx(0.7)
    assert channel[9, 9] == pytest.approx(0.2)
    assert np.count_nonzero(channel) == 3
    assert state.stacked.shape == (2, 16, 16)
    assert state.explored_channel[knowledge.world_to_cell(agent.position)] == 0.5
    assert state.orientation == 0.5


def test_reassociate_views(box_scene):
    """Test that views follow the instance owning their voxels."""
    svm, *_ = _perceived_map(box_scene)
    instances = cluster_objects(svm)
    views = reassociate_views(svm, instances, CAMERA, DetectorConfig())
    assert len(views) == 1
    view = views[0]
    assert view.instance_id == instances[0].instance_id
    assert view.caption == svm.captions[0].text
    assert view.object_id_gt == 5
    x0, y0, x1, y1 = view.bbox
    assert 0 <= x0 < x1 <= CAMERA.width and 0 <= y0 < y1 <= CAMERA.height
