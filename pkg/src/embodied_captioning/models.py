"""
Data models for the embodied captioning lab.
"""

from dataclasses import dataclass, field
from datetime import datetime
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from dateutil import parser

CATEGORIES: Tuple[str, ...] = ("couch", "potted plant", "bed", "toilet", "tv", "table")
NUM_CLASSES = len(CATEGORIES)

Voxel = Tuple[int, int, int]
Cell = Tuple[int, int]


@dataclass
class ObjectGT:
    """Ground-truth object instance of a synthetic scene."""

    id: int
    category: str
    attribute_tokens: List[str]
    gt_caption: str
    voxels: List[Voxel]
    noise_multiplier: float = 1.0

    @property
    def category_index(self) -> int:
        """Index of the category among the detectable classes."""
        return CATEGORIES.index(self.category)

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectGT":
        """Create an ObjectGT instance from a dictionary."""
        return cls(
            id=data["id"],
            category=data["category"],
            attribute_tokens=list(data.get("attributeTokens", [])),
            gt_caption=data["gtCaption"],
            voxels=[tuple(v) for v in data.get("voxels", [])],
            noise_multiplier=data.get("noiseMultiplier", 1.0),
        )

    def to_dict(self) -> dict:
        """Convert ObjectGT instance to a dictionary."""
        return {
            "id": self.id,
            "category": self.category,
            "attributeTokens": list(self.attribute_tokens),
            "gtCaption": self.gt_caption,
            "voxels": [list(v) for v in self.voxels],
            "noiseMultiplier": self.noise_multiplier,
        }


@dataclass
class Scene:
    """Synthetic environment: occupancy voxels plus ground-truth objects.

    ``voxel_occupancy`` is indexed ``[x, y, z]`` with ``z`` pointing up; voxel
    ``(i, j, k)`` covers ``[i*c, (i+1)*c) x [j*c, (j+1)*c) x [k*c, (k+1)*c)``
    for cell size ``c``. Scenes are treated as immutable once generated.
    """

    voxel_occupancy: np.ndarray = field(repr=False)
    objects: List[ObjectGT]
    bounds: Tuple[int, int, int]
    seed: int
    cell_size: float = 0.25

    @cached_property
    def owner(self) -> np.ndarray:
        """Object id owning each voxel, ``-1`` for free space and structure."""
        owner = np.full(self.bounds, -1, dtype=np.int32)
        for obj in self.objects:
            idx = np.asarray(obj.voxels, dtype=np.int64).reshape(-1, 3)
            owner[idx[:, 0], idx[:, 1], idx[:, 2]] = obj.id
        return owner

    @cached_property
    def objects_by_id(self) -> Dict[int, ObjectGT]:
        return {obj.id: obj for obj in self.objects}

    @cached_property
    def surface(self) -> np.ndarray:
        """Occupied voxels with at least one free (or out-of-bounds) face neighbour."""
        padded = np.pad(self.voxel_occupancy, 1, constant_values=False)
        core = padded[1:-1, 1:-1, 1:-1]
        enclosed = np.ones_like(core)
        for axis in range(3):
            for shift in (1, -1):
                enclosed &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
        return core & ~enclosed

    @cached_property
    def surface_counts(self) -> Dict[int, int]:
        """Number of surface voxels per object id."""
        owner = self.owner
        ids, counts = np.unique(owner[self.surface & (owner >= 0)], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    @property
    def extent(self) -> Tuple[float, float, float]:
        """Scene size in meters along x, y, z."""
        return tuple(n * self.cell_size for n in self.bounds)

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        """Create a Scene instance from a dictionary."""
        bounds = tuple(data["bounds"])
        occupancy = np.zeros(int(np.prod(bounds)), dtype=bool)
        occupancy[np.asarray(data.get("occupied", []), dtype=np.int64)] = True
        return cls(
            voxel_occupancy=occupancy.reshape(bounds),
            objects=[ObjectGT.from_dict(o) for o in data.get("objects", [])],
            bounds=bounds,
            seed=data["seed"],
            cell_size=data.get("cellSize", 0.25),
        )

    def to_dict(self) -> dict:
        """Convert Scene instance to a dictionary."""
        return {
            "bounds": list(self.bounds),
            "cellSize": self.cell_size,
            "seed": self.seed,
            "occupied": [int(i) for i in np.flatnonzero(self.voxel_occupancy.ravel())],
            "objects": [o.to_dict() for o in self.objects],
        }


@dataclass(frozen=True)
class AgentState:
    """Agent pose in world coordinates (meters, radians)."""

    position: Tuple[float, float, float]
    yaw: float
    step_index: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "AgentState":
        """Create an AgentState instance from a dictionary."""
        return cls(
            position=tuple(float(p) for p in data["position"]),
            yaw=float(data["yaw"]),
            step_index=int(data.get("stepIndex", 0)),
        )

    def to_dict(self) -> dict:
        """Convert AgentState instance to a dictionary."""
        return {
            "position": [float(p) for p in self.position],
            "yaw": float(self.yaw),
            "stepIndex": self.step_index,
        }


@dataclass(frozen=True)
class Action:
    """Agent action: ``forward`` by ``amount`` meters or ``rotate`` by ``amount`` radians."""

    kind: str
    amount: float

    def __str__(self) -> str:
        return f"{self.kind}:{self.amount:.6f}"


@dataclass
class VisibleFragment:
    """Pixels of one object seen in an observation."""

    object_id: int
    pixels: np.ndarray = field(repr=False)
    visible_fraction: float


@dataclass
class Observation:
    """Rendered view: per-pixel ray distances plus symbolic object fragments.

    ``depth`` has shape ``(height, width)``; pixel ``(row, col)`` has flat index
    ``row * width + col`` in fragment pixel sets.
    """

    depth: np.ndarray = field(repr=False)
    visible_fragments: List[VisibleFragment]
    camera_pose: AgentState
    fov: float
    width: int
    height: int


@dataclass
class Detection:
    """Detector output for one object in one view."""

    object_view_id: str
    logits: np.ndarray
    bbox: Tuple[int, int, int, int]
    mask: np.ndarray = field(repr=False)
    confidence: float
    width: int = 64
    height: int = 64
    visible_fraction: float = 0.0
    descriptor: Optional[np.ndarray] = field(default=None, repr=False)
    object_id_gt: int = -1

    @property
    def class_index(self) -> int:
        return int(np.argmax(self.logits))

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.bbox
        return max(0, x1 - x0) * max(0, y1 - y0)

    def mask_array(self) -> np.ndarray:
        """Boolean ``(height, width)`` view of the mask pixel indices."""
        mask = np.zeros(self.width * self.height, dtype=bool)
        mask[self.mask] = True
        return mask.reshape(self.height, self.width)

    @classmethod
    def from_dict(cls, data: dict) -> "Detection":
        """Create a Detection instance from a dictionary."""
        descriptor = data.get("descriptor")
        return cls(
            object_view_id=data["objectViewId"],
            logits=np.asarray(data["logits"], dtype=float),
            bbox=tuple(data["bbox"]),
            mask=np.asarray(data["mask"], dtype=np.int64),
            confidence=float(data["confidence"]),
            width=data.get("width", 64),
            height=data.get("height", 64),
            visible_fraction=float(data.get("visibleFraction", 0.0)),
            descriptor=np.asarray(descriptor, dtype=float) if descriptor is not None else None,
            object_id_gt=data.get("objectIdGt", -1),
        )

    def to_dict(self) -> dict:
        """Convert Detection instance to a dictionary."""
        return {
            "objectViewId": self.object_view_id,
            "logits": [float(v) for v in self.logits],
            "bbox": [int(v) for v in self.bbox],
            "mask": [int(v) for v in self.mask],
            "confidence": float(self.confidence),
            "width": self.width,
            "height": self.height,
            "visibleFraction": float(self.visible_fraction),
            "descriptor": None if self.descriptor is None else [float(v) for v in self.descriptor],
            "objectIdGt": self.object_id_gt,
        }


@dataclass
class CaptionRecord:
    """Caption produced for one detection.

    ``object_id_gt`` and ``corrupted`` are ground truth of the simulator and
    must only be read by evaluation code.
    """

    text: str
    object_id_gt: int
    view_pose: AgentState
    corrupted: bool = False
    caption_id: int = -1
    visible_fraction: float = 1.0

    @classmethod
    def from_dict(cls, data: dict) -> "CaptionRecord":
        """Create a CaptionRecord instance from a dictionary."""
        return cls(
            text=data["text"],
            object_id_gt=data.get("objectIdGt", -1),
            view_pose=AgentState.from_dict(data["viewPose"]),
            corrupted=data.get("corrupted", False),
            caption_id=data.get("captionId", -1),
            visible_fraction=data.get("visibleFraction", 1.0),
        )

    def to_dict(self) -> dict:
        """Convert CaptionRecord instance to a dictionary."""
        return {
            "text": self.text,
            "objectIdGt": self.object_id_gt,
            "viewPose": self.view_pose.to_dict(),
            "corrupted": self.corrupted,
            "captionId": self.caption_id,
            "visibleFraction": float(self.visible_fraction),
        }


@dataclass
class ObjectInstance:
    """Connected component of same-label voxels with its pooled captions."""

    instance_id: int
    pseudo_label: int
    voxels: set = field(repr=False)
    captions: List[int] = field(default_factory=list)

    @property
    def category(self) -> str:
        return CATEGORIES[self.pseudo_label]

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectInstance":
        """Create an ObjectInstance from a dictionary."""
        return cls(
            instance_id=data["instanceId"],
            pseudo_label=data["pseudoLabel"],
            voxels={tuple(v) for v in data.get("voxels", [])},
            captions=list(data.get("captions", [])),
        )

    def to_dict(self) -> dict:
        """Convert ObjectInstance to a dictionary."""
        return {
            "instanceId": self.instance_id,
            "pseudoLabel": self.pseudo_label,
            "voxels": [list(v) for v in sorted(self.voxels)],
            "captions": list(self.captions),
        }


@dataclass
class PolicyState:
    """Policy input: disagreement and explored channels plus agent yaw."""

    disagreement_channel: np.ndarray = field(repr=False)
    explored_channel: np.ndarray = field(repr=False)
    orientation: float = 0.0

    @property
    def stacked(self) -> np.ndarray:
        """The ``2 x K x K`` channel stack."""
        return np.stack([self.disagreement_channel, self.explored_channel])


@dataclass
class GoalEvent:
    """Goal selection, arrival, failure or timeout during an episode."""

    kind: str
    cell: Optional[Cell] = None
    reason: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "GoalEvent":
        """Create a GoalEvent from a dictionary."""
        cell = data.get("cell")
        return cls(kind=data["kind"], cell=tuple(cell) if cell is not None else None, reason=data.get("reason"))

    def to_dict(self) -> dict:
        """Convert GoalEvent to a dictionary."""
        return {"kind": self.kind, "cell": list(self.cell) if self.cell is not None else None, "reason": self.reason}


@dataclass
class EpisodeRecord:
    """Everything that happened at one episode step."""

    step: int
    agent: AgentState
    action: str
    n_fragments: int
    detections: List[Detection] = field(default_factory=list)
    captions: List[CaptionRecord] = field(default_factory=list)
    goal_events: List[GoalEvent] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeRecord":
        """Create an EpisodeRecord from a dictionary."""
        return cls(
            step=data["step"],
            agent=AgentState.from_dict(data["agent"]),
            action=data.get("action", ""),
            n_fragments=data.get("nFragments", 0),
            detections=[Detection.from_dict(d) for d in data.get("detections", [])],
            captions=[CaptionRecord.from_dict(c) for c in data.get("captions", [])],
            goal_events=[GoalEvent.from_dict(g) for g in data.get("goalEvents", [])],
        )

    def to_dict(self) -> dict:
        """Convert EpisodeRecord to a dictionary."""
        return {
            "step": self.step,
            "agent": self.agent.to_dict(),
            "action": self.action,
            "nFragments": self.n_fragments,
            "detections": [d.to_dict() for d in self.detections],
            "captions": [c.to_dict() for c in self.captions],
            "goalEvents": [g.to_dict() for g in self.goal_events],
        }


@dataclass
class EpisodeLog:
    """Ordered step records of one exploration episode."""

    policy: str
    seed: int
    n_steps: int
    start: AgentState
    records: List[EpisodeRecord] = field(default_factory=list)
    scene_seed: Optional[int] = None
    completed_early: bool = False

    @property
    def captions(self) -> List[CaptionRecord]:
        return [c for r in self.records for c in r.captions]

    def header(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "nSteps": self.n_steps,
            "start": self.start.to_dict(),
            "sceneSeed": self.scene_seed,
            "completedEarly": self.completed_early,
        }

    @classmethod
    def from_parts(cls, header: dict, records: List[dict]) -> "EpisodeLog":
        """Rebuild an EpisodeLog from its JSONL header and record lines."""
        return cls(
            policy=header["policy"],
            seed=header["seed"],
            n_steps=header["nSteps"],
            start=AgentState.from_dict(header["start"]),
            records=[EpisodeRecord.from_dict(r) for r in records],
            scene_seed=header.get("sceneSeed"),
            completed_early=header.get("completedEarly", False),
        )


@dataclass
class CaptionTally:
    """Distinct captions with their frequencies, most frequent first."""

    entries: List[Tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def total(self) -> int:
        return sum(f for f, _ in self.entries)


@dataclass
class PseudoCaption:
    """Consensus caption distilled for one object instance."""

    text: str
    instance_id: int
    method: str
    source_model: str = "offline"
    fallback: bool = False
    truncated: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "PseudoCaption":
        """Create a PseudoCaption from a dictionary."""
        return cls(
            text=data["text"],
            instance_id=data["instanceId"],
            method=data["method"],
            source_model=data.get("sourceModel", "offline"),
            fallback=data.get("fallback", False),
            truncated=data.get("truncated", False),
        )

    def to_dict(self) -> dict:
        """Convert PseudoCaption to a dictionary."""
        return {
            "text": self.text,
            "instanceId": self.instance_id,
            "method": self.method,
            "sourceModel": self.source_model,
            "fallback": self.fallback,
            "truncated": self.truncated,
        }


@dataclass
class LlmRequest:
    """Completion request sent to a remote LLM."""

    prompt: str
    model: str
    temperature: float = 0.0
    max_tokens: int = 64

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "prompt": self.prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass
class LlmReply:
    """Raw LLM reply, kept verbatim for audit."""

    raw_text: str
    latency: float = 0.0
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None

    @classmethod
    def from_dict(cls, data: dict, latency: float = 0.0) -> "LlmReply":
        """Create an LlmReply from a completion response body."""
        usage = data.get("usage") or {}
        text = data.get("text")
        if text is None and data.get("choices"):
            text = data["choices"][0].get("text", "")
        return cls(
            raw_text=text or "",
            latency=latency,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )


@dataclass
class InstanceScores:
    """Metric scores of one instance, percent scale except CIDEr."""

    bleu4: float
    meteor: float
    rouge_l: float
    cider: float
    cosine: float

    def to_dict(self) -> dict:
        return {"B4": self.bleu4, "M": self.meteor, "R_L": self.rouge_l, "CI": self.cider, "CS": self.cosine}


@dataclass
class MetricsReport:
    """Per-instance scores and corpus means of one run."""

    per_instance: Dict[str, InstanceScores]
    means: Dict[str, float]
    excluded: List[str] = field(default_factory=list)
    labels: Dict[str, str] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.per_instance)

    def to_dict(self) -> dict:
        """Convert MetricsReport to a dictionary."""
        return {
            "labels": dict(self.labels),
            "count": self.count,
            "means": dict(self.means),
            "excluded": list(self.excluded),
            "perInstance": {k: v.to_dict() for k, v in sorted(self.per_instance.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        """Create a MetricsReport from a dictionary."""
        per_instance = {
            k: InstanceScores(v["B4"], v["M"], v["R_L"], v["CI"], v["CS"])
            for k, v in data.get("perInstance", {}).items()
        }
        return cls(
            per_instance=per_instance,
            means=dict(data.get("means", {})),
            excluded=list(data.get("excluded", [])),
            labels=dict(data.get("labels", {})),
        )


@dataclass
class ArtifactEntry:
    """One emitted file with its content hash."""

    phase: str
    path: str
    sha256: str
    schema: Optional[str] = None

    def to_dict(self) -> dict:
        return {"phase": self.phase, "path": self.path, "sha256": self.sha256, "schema": self.schema}

    @classmethod
    def from_dict(cls, data: dict) -> "ArtifactEntry":
        return cls(phase=data["phase"], path=data["path"], sha256=data["sha256"], schema=data.get("schema"))


@dataclass
class RunManifest:
    """Reproducibility record of one pipeline run."""

    config_hash: str
    artifact_versions: Dict[str, str]
    artifacts: List[ArtifactEntry] = field(default_factory=list)
    skipped: Dict[str, str] = field(default_factory=dict)
    deviations: List[str] = field(default_factory=list)
    labels: Dict[str, Any] = field(default_factory=dict)
    started_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None
    failure: Optional[Dict[str, Any]] = None

    def outputs(self, phase: str) -> List[ArtifactEntry]:
        return [a for a in self.artifacts if a.phase == phase]

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        """Create a RunManifest instance from a dictionary."""
        return cls(
            config_hash=data["configHash"],
            artifact_versions=dict(data.get("artifactVersions", {})),
            artifacts=[ArtifactEntry.from_dict(a) for a in data.get("artifacts", [])],
            skipped=dict(data.get("skipped", {})),
            deviations=list(data.get("deviations", [])),
            labels=dict(data.get("labels", {})),
            started_at=parser.parse(data["startedAt"]) if data.get("startedAt") else None,
            finished_at=parser.parse(data["finishedAt"]) if data.get("finishedAt") else None,
            failure=data.get("failure"),
        )

    def to_dict(self) -> dict:
        """Convert RunManifest instance to a dictionary."""
        return {
            "configHash": self.config_hash,
            "artifactVersions": dict(self.artifact_versions),
            "artifacts": [a.to_dict() for a in self.artifacts],
            "skipped": dict(self.skipped),
            "deviations": list(self.deviations),
            "labels": dict(self.labels),
            "startedAt": self.started_at.isoformat() if self.started_at else None,
            "finishedAt": self.finished_at.isoformat() if self.finished_at else None,
            "failure": self.failure,
        }
