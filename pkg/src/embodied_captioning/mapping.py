"""
Semantic voxel map: caption-carrying voxels, instance clustering and
disagreement maps for the exploration policy.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from skimage import measure

from .config import CameraConfig, DetectorConfig
from .exceptions import ContractError
from .models import (
    NUM_CLASSES,
    AgentState,
    CaptionRecord,
    Detection,
    ObjectInstance,
    Observation,
    PolicyState,
    Voxel,
)
from .perception import cosine, expand_box, suppress_overlaps
from .scene import backproject

logger = logging.getLogger(__name__)

Embedder = Callable[[str], np.ndarray]

UNKNOWN, FREE, OCCUPIED = -1, 0, 1


@dataclass
class VoxelCell:
    """Accumulated detections of one voxel."""

    logit_sum: np.ndarray
    hit_count: int = 0
    caption_refs: List[int] = field(default_factory=list)

    @property
    def label(self) -> int:
        return int(np.argmax(self.logit_sum))


@dataclass
class ViewRecord:
    """One integrated detection, kept for view re-association."""

    caption_id: int
    pose: AgentState
    bbox: Tuple[int, int, int, int]
    confidence: float
    visible_fraction: float
    descriptor: Optional[np.ndarray]
    voxels: List[Voxel]

    def to_dict(self) -> dict:
        return {
            "captionId": self.caption_id,
            "pose": self.pose.to_dict(),
            "bbox": list(self.bbox),
            "confidence": float(self.confidence),
            "visibleFraction": float(self.visible_fraction),
            "descriptor": None if self.descriptor is None else [float(v) for v in self.descriptor],
            "voxels": [list(v) for v in self.voxels],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ViewRecord":
        descriptor = data.get("descriptor")
        return cls(
            caption_id=data["captionId"],
            pose=AgentState.from_dict(data["pose"]),
            bbox=tuple(data["bbox"]),
            confidence=data["confidence"],
            visible_fraction=data["visibleFraction"],
            descriptor=None if descriptor is None else np.asarray(descriptor, dtype=float),
            voxels=[tuple(v) for v in data["voxels"]],
        )


class SemanticVoxelMap:
    """
    Sparse voxel map holding running logit sums and caption references.

    Captions are kept in a registry keyed by integer ids assigned in
    integration order; voxels refer to them by id.
    """

    def __init__(self, resolution: float = 0.25):
        self.resolution = resolution
        self.voxels: Dict[Voxel, VoxelCell] = {}
        self.captions: Dict[int, CaptionRecord] = {}
        self.views: Dict[int, ViewRecord] = {}

    @property
    def V(self) -> int:
        return len(self.voxels)

    def __len__(self) -> int:
        return len(self.voxels)

    def labels(self) -> Dict[Voxel, int]:
        """Per-voxel pseudo-label: argmax of the summed logits."""
        return {v: cell.label for v, cell in self.voxels.items()}

    def caption_texts(self, caption_ids: Iterable[int]) -> List[str]:
        return [self.captions[i].text for i in caption_ids]

    def to_dict(self) -> dict:
        """Convert the map to a snapshot dictionary."""
        return {
            "resolution": self.resolution,
            "cells": [
                {
                    "voxel": list(v),
                    "logitSum": [float(x) for x in cell.logit_sum],
                    "hitCount": cell.hit_count,
                    "captionRefs": list(cell.caption_refs),
                }
                for v, cell in sorted(self.voxels.items())
            ],
            "captions": [dict(self.captions[i].to_dict(), captionId=i) for i in sorted(self.captions)],
            "views": [self.views[i].to_dict() for i in sorted(self.views)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SemanticVoxelMap":
        """Rebuild a map from a snapshot dictionary."""
        svm = cls(resolution=data.get("resolution", 0.25))
        for cell in data.get("cells", []):
            svm.voxels[tuple(cell["voxel"])] = VoxelCell(
                logit_sum=np.asarray(cell["logitSum"], dtype=float),
                hit_count=cell["hitCount"],
                caption_refs=list(cell["captionRefs"]),
            )
        for record in data.get("captions", []):
            svm.captions[record["captionId"]] = CaptionRecord.from_dict(record)
        for view in data.get("views", []):
            svm.views[view["captionId"]] = ViewRecord.from_dict(view)
        return svm


def integrate(
    svm: SemanticVoxelMap,
    obs: Observation,
    dets: Sequence[Detection],
    caps: Sequence[CaptionRecord],
    pose: Optional[AgentState] = None,
) -> SemanticVoxelMap:
    """
    Project detections into the map.

    Every masked pixel with finite depth adds the detection logits to the
    voxel it hit; the detection's caption id is appended once per voxel.

    Args:
        svm: Map to update in place
        obs: Observation the detections came from
        dets: Filtered detections
        caps: One caption per detection
        pose: Camera pose, ``obs.camera_pose`` by default

    Returns:
        The updated map

    Raises:
        ContractError: If detections and captions are not aligned
    """
    if len(dets) != len(caps):
        raise ContractError(f"{len(dets)} detections but {len(caps)} captions")
    pose = pose or obs.camera_pose
    for det, cap in zip(dets, caps):
        if det.logits.shape != (NUM_CLASSES,):
            raise ContractError(f"Detection logits must have length {NUM_CLASSES}")
        caption_id = len(svm.captions)
        cap.caption_id = caption_id
        svm.captions[caption_id] = cap

        hits = backproject(obs, det.mask, svm.resolution)
        if len(hits) == 0:
            voxels, counts = np.empty((0, 3), dtype=np.int64), np.empty(0, dtype=np.int64)
        else:
            voxels, counts = np.unique(hits, axis=0, return_counts=True)
        touched = []
        for voxel, count in zip(map(tuple, voxels.tolist()), counts.tolist()):
            cell = svm.voxels.get(voxel)
            if cell is None:
                cell = svm.voxels[voxel] = VoxelCell(logit_sum=np.zeros(NUM_CLASSES))
            cell.logit_sum = cell.logit_sum + count * det.logits
            cell.hit_count += count
            cell.caption_refs.append(caption_id)
            touched.append(voxel)

        svm.views[caption_id] = ViewRecord(
            caption_id=caption_id,
            pose=pose,
            bbox=det.bbox,
            confidence=det.confidence,
            visible_fraction=det.visible_fraction,
            descriptor=det.descriptor,
            voxels=touched,
        )
    return svm


def cluster_objects(svm: SemanticVoxelMap) -> List[ObjectInstance]:
    """
    Group same-label voxels into 26-connected instances.

    Instance ids start at 1 and follow the raster order (x, then y, then z)
    of each component's first voxel.
    """
    if not svm.voxels:
        return []
    coords = np.asarray(list(svm.voxels.keys()), dtype=np.int64)
    labels = np.asarray([cell.label for cell in svm.voxels.values()], dtype=np.int64)
    origin = coords.min(axis=0)
    shape = coords.max(axis=0) - origin + 1
    local = coords - origin

    volume = np.zeros(shape, dtype=np.int64)
    volume[local[:, 0], local[:, 1], local[:, 2]] = labels + 1
    components = measure.label(volume, background=0, connectivity=3)

    flat = components.ravel()
    ids, first = np.unique(flat, return_index=True)
    order = [int(i) for _, i in sorted(zip(first.tolist(), ids.tolist())) if i != 0]
    renumber = {old: new for new, old in enumerate(order, start=1)}

    comp_of = components[local[:, 0], local[:, 1], local[:, 2]]
    members: Dict[int, List[Voxel]] = {}
    for voxel, comp in zip(map(tuple, coords.tolist()), comp_of.tolist()):
        members.setdefault(renumber[comp], []).append(voxel)

    instances = []
    for instance_id in sorted(members):
        voxels = members[instance_id]
        refs = set()
        for v in voxels:
            refs.update(svm.voxels[v].caption_refs)
        instances.append(
            ObjectInstance(
                instance_id=instance_id,
                pseudo_label=svm.voxels[voxels[0]].label,
                voxels=set(voxels),
                captions=sorted(refs),
            )
        )
    return instances


def mean_pairwise_distance(vectors: Sequence[np.ndarray]) -> float:
    """Mean ``(1 - cos) / 2`` over unordered pairs; 0 for fewer than two vectors."""
    n = len(vectors)
    if n < 2:
        return 0.0
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += (1.0 - cosine(vectors[i], vectors[j])) / 2.0
    return float(min(1.0, max(0.0, total / (n * (n - 1) / 2))))


def caption_disagreement(texts: Sequence[str], embedder: Embedder) -> float:
    """Mean pairwise ``(1 - cos) / 2`` of the caption embeddings; 0 below two captions."""
    return mean_pairwise_distance([embedder(t) for t in texts])


def object_disagreement(inst: ObjectInstance, embedder: Embedder, captions: Mapping[int, CaptionRecord]) -> float:
    """
    Caption disagreement of one instance in ``[0, 1]``.

    Args:
        inst: Instance whose caption ids are scored
        embedder: Text embedder
        captions: Caption registry the ids refer to
    """
    return caption_disagreement([captions[c].text for c in inst.captions], embedder)


class OccupancyKnowledge:
    """
    The agent's K x K top-down map of known free and occupied space.

    Knowledge is kept per voxel column and read out on the K x K grid, which
    stretches the scene's x/y extent (columns follow x, rows follow y). Cells
    never return to unknown.
    """

    def __init__(self, columns: Tuple[int, int], cell_size: float, grid_size: int = 128):
        self.columns = tuple(columns)
        self.cell_size = cell_size
        self.grid_size = grid_size
        self.column_state = np.full(self.columns, UNKNOWN, dtype=np.int8)
        k = np.arange(grid_size)
        self._col_to_vx = np.minimum((k + 0.5) * self.columns[0] // grid_size, self.columns[0] - 1).astype(np.int64)
        self._row_to_vy = np.minimum((k + 0.5) * self.columns[1] // grid_size, self.columns[1] - 1).astype(np.int64)

    @property
    def extent(self) -> Tuple[float, float]:
        return self.columns[0] * self.cell_size, self.columns[1] * self.cell_size

    def world_to_cell(self, position: Sequence[float]) -> Tuple[int, int]:
        ex, ey = self.extent
        col = int(min(self.grid_size - 1, max(0, math.floor(position[0] / ex * self.grid_size))))
        row = int(min(self.grid_size - 1, max(0, math.floor(position[1] / ey * self.grid_size))))
        return row, col

    def cell_to_world(self, cell: Tuple[int, int]) -> Tuple[float, float]:
        ex, ey = self.extent
        return (cell[1] + 0.5) * ex / self.grid_size, (cell[0] + 0.5) * ey / self.grid_size

    def columns_to_cells(self, column_mask: np.ndarray) -> np.ndarray:
        """Read a per-column boolean mask out on the K x K grid."""
        return column_mask[self._col_to_vx[None, :], self._row_to_vy[:, None]]

    def grid(self) -> np.ndarray:
        """K x K array of ``-1`` unknown, ``0`` free, ``1`` occupied (rows = y)."""
        return self.column_state[self._col_to_vx[None, :], self._row_to_vy[:, None]]

    def mark_free(self, position: Sequence[float]) -> None:
        i, j = (int(math.floor(p / self.cell_size)) for p in position[:2])
        if 0 <= i < self.columns[0] and 0 <= j < self.columns[1] and self.column_state[i, j] == UNKNOWN:
            self.column_state[i, j] = FREE

    def update(self, obs: Observation) -> None:
        """Floor hits reveal free columns; any other hit reveals an occupied column."""
        pixels = np.flatnonzero(np.isfinite(obs.depth.ravel()))
        if len(pixels):
            voxels = backproject(obs, pixels, self.cell_size)
            inside = (
                (voxels[:, 0] >= 0)
                & (voxels[:, 0] < self.columns[0])
                & (voxels[:, 1] >= 0)
                & (voxels[:, 1] < self.columns[1])
            )
            voxels = voxels[inside]
            floor = voxels[:, 2] == 0
            occupied = voxels[~floor]
            free = voxels[floor]
            state = self.column_state
            free_cols = state[free[:, 0], free[:, 1]] == UNKNOWN
            state[free[free_cols, 0], free[free_cols, 1]] = FREE
            state[occupied[:, 0], occupied[:, 1]] = OCCUPIED
        self.mark_free(obs.camera_pose.position)

    def unknown_count(self) -> int:
        return int((self.grid() == UNKNOWN).sum())


def disagreement_map(
    svm: SemanticVoxelMap,
    instances: Sequence[ObjectInstance],
    agent: AgentState,
    explored: OccupancyKnowledge,
    embedder: Embedder,
    values: Optional[Mapping[int, float]] = None,
) -> PolicyState:
    """
    Policy state: per-instance disagreement painted onto the instance
    footprints (max-reduced over height and overlaps) plus the explored map.

    Args:
        svm: Map holding the caption registry
        instances: Instances from :func:`cluster_objects`
        agent: Current agent state
        explored: Occupancy knowledge defining the K x K grid
        embedder: Text embedder
        values: Precomputed disagreement per instance id
    """
    k = explored.grid_size
    channel = np.zeros((k, k))
    for inst in instances:
        value = values[inst.instance_id] if values is not None else object_disagreement(inst, embedder, svm.captions)
        if value <= 0:
            continue
        footprint = np.zeros(explored.columns, dtype=bool)
        xy = np.asarray([(v[0], v[1]) for v in inst.voxels], dtype=np.int64)
        ok = (xy[:, 0] >= 0) & (xy[:, 0] < explored.columns[0]) & (xy[:, 1] >= 0) & (xy[:, 1] < explored.columns[1])
        footprint[xy[ok, 0], xy[ok, 1]] = True
        cells = explored.columns_to_cells(footprint)
        channel[cells] = np.maximum(channel[cells], min(1.0, value))

    explored_channel = (explored.grid() != UNKNOWN).astype(float)
    row, col = explored.world_to_cell(agent.position)
    explored_channel[row, col] = 0.5
    return PolicyState(disagreement_channel=channel, explored_channel=explored_channel, orientation=agent.yaw)


# View re-association


@dataclass
class DatasetView:
    """One view of an instance paired with its caption, for fine-tuning."""

    instance_id: int
    caption_id: int
    caption: str
    descriptor: np.ndarray
    bbox: Tuple[int, int, int, int]
    pose: AgentState
    object_id_gt: int = -1

    def to_dict(self) -> dict:
        return {
            "instanceId": self.instance_id,
            "captionId": self.caption_id,
            "caption": self.caption,
            "descriptor": [float(v) for v in self.descriptor],
            "bbox": list(self.bbox),
            "pose": self.pose.to_dict(),
            "objectIdGt": self.object_id_gt,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetView":
        return cls(
            instance_id=data["instanceId"],
            caption_id=data["captionId"],
            caption=data["caption"],
            descriptor=np.asarray(data["descriptor"], dtype=float),
            bbox=tuple(data["bbox"]),
            pose=AgentState.from_dict(data["pose"]),
            object_id_gt=data.get("objectIdGt", -1),
        )


def project_voxels(
    voxels: Iterable[Voxel], pose: AgentState, camera: CameraConfig, cell_size: float
) -> Optional[Tuple[int, int, int, int]]:
    """Tight pixel box of the voxel centres in front of the camera, or None."""
    centres = (np.asarray(list(voxels), dtype=float) + 0.5) * cell_size
    if centres.size == 0:
        return None
    rel = centres - np.asarray(pose.position)[None, :]
    forward = np.array([math.cos(pose.yaw), math.sin(pose.yaw), 0.0])
    right = np.array([math.sin(pose.yaw), -math.cos(pose.yaw), 0.0])
    depth = rel @ forward
    front = depth > 1e-6
    if not front.any():
        return None
    f = (camera.width / 2.0) / math.tan(camera.fov / 2.0)
    u = f * (rel[front] @ right) / depth[front] + camera.width / 2.0
    v = camera.height / 2.0 - f * rel[front, 2] / depth[front]
    inside = (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    if not inside.any():
        return None
    u, v = u[inside], v[inside]
    return int(np.floor(u.min())), int(np.floor(v.min())), int(np.floor(u.max())) + 1, int(np.floor(v.max())) + 1


def reassociate_views(
    svm: SemanticVoxelMap,
    instances: Sequence[ObjectInstance],
    camera: Optional[CameraConfig] = None,
    detector: Optional[DetectorConfig] = None,
) -> List[DatasetView]:
    """
    Assign every integrated view to the instance owning most of its voxels,
    re-derive its box from the instance voxels and repeat the IoU filter
    per camera pose.

    Returns:
        Surviving views ordered by caption id
    """
    camera = camera or CameraConfig()
    detector = detector or DetectorConfig()
    owner: Dict[Voxel, int] = {}
    by_id = {inst.instance_id: inst for inst in instances}
    for inst in instances:
        for v in inst.voxels:
            owner[v] = inst.instance_id

    candidates: Dict[Tuple, List[Tuple[int, Detection]]] = {}
    for caption_id in sorted(svm.views):
        view = svm.views[caption_id]
        votes: Dict[int, int] = {}
        for v in view.voxels:
            if v in owner:
                votes[owner[v]] = votes.get(owner[v], 0) + 1
        if not votes:
            continue
        instance_id = min(votes, key=lambda i: (-votes[i], i))
        tight = project_voxels(by_id[instance_id].voxels, view.pose, camera, svm.resolution)
        if tight is None:
            continue
        bbox = expand_box(tight, detector.bbox_expansion, camera.width, camera.height)
        proxy = Detection(
            object_view_id=str(caption_id),
            logits=np.zeros(NUM_CLASSES),
            bbox=bbox,
            mask=np.empty(0, dtype=np.int64),
            confidence=view.confidence,
            width=camera.width,
            height=camera.height,
        )
        key = (view.pose.position, view.pose.yaw, view.pose.step_index)
        candidates.setdefault(key, []).append((instance_id, proxy))

    dataset = []
    for entries in candidates.values():
        kept = {id(d) for d in suppress_overlaps([d for _, d in entries], detector.nms_iou)}
        for instance_id, det in entries:
            if id(det) not in kept:
                continue
            caption_id = int(det.object_view_id)
            view = svm.views[caption_id]
            record = svm.captions[caption_id]
            descriptor = view.descriptor if view.descriptor is not None else np.zeros(0)
            dataset.append(
                DatasetView(
                    instance_id=instance_id,
                    caption_id=caption_id,
                    caption=record.text,
                    descriptor=np.asarray(descriptor, dtype=float),
                    bbox=det.bbox,
                    pose=view.pose,
                    object_id_gt=record.object_id_gt,
                )
            )
    dataset.sort(key=lambda d: d.caption_id)
    return dataset
