"""
Run configuration: YAML loading, environment interpolation and validation.
"""

import hashlib
import json
import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

POLICIES = ("random", "frontier", "cla")
METHODS = ("ldcps", "ldcps-offline", "eco", "ic3")
OPTIMIZERS = ("sgd", "adamw")

_PLACEHOLDER = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")

DEFAULT_SYNONYMS: Dict[str, List[str]] = {
    "red": ["maroon", "orange"],
    "blue": ["navy", "teal"],
    "green": ["olive", "teal"],
    "white": ["beige", "gray"],
    "black": ["gray", "navy"],
    "brown": ["beige", "maroon"],
    "gray": ["white", "black"],
    "yellow": ["orange", "beige"],
    "wooden": ["metal", "plastic"],
    "leather": ["fabric", "velvet"],
    "metal": ["wooden", "glass"],
    "fabric": ["leather", "velvet"],
    "ceramic": ["plastic", "glass"],
    "glass": ["plastic", "metal"],
}


@dataclass
class SceneSpec:
    """Parameters of the synthetic scene generator (sizes in cells)."""

    bounds: Tuple[int, int, int] = (40, 40, 12)
    cell_size: float = 0.25
    rooms: Tuple[int, int] = (2, 2)
    n_objects: int = 10
    door_width: int = 4
    clearance: int = 1
    heterogeneous_noise: bool = True
    noise_multiplier_range: Tuple[float, float] = (0.25, 2.0)
    max_attempts: int = 400
    path: Optional[str] = None


@dataclass
class CameraConfig:
    width: int = 64
    height: int = 64
    fov: float = math.pi / 2
    max_range: float = 10.0
    mount_height: float = 1.3


@dataclass
class AgentConfig:
    forward_step: float = 0.25
    turn_angle: float = math.pi / 6
    initial_spin: bool = True


@dataclass
class DetectorConfig:
    """Mock detector noise and the detection-filtering thresholds."""

    misclass_rate: float = 0.05
    min_pixels: int = 10
    confidence_threshold: float = 0.7
    confidence_floor: float = 0.5
    full_view_fraction: float = 0.3
    confidence_noise: float = 0.05
    logit_scale: float = 4.0
    logit_noise: float = 0.5
    area_threshold: float = 8000.0
    area_reference: Tuple[int, int] = (640, 480)
    nms_iou: float = 0.8
    bbox_expansion: int = 10
    descriptor_noise: float = 0.05


@dataclass
class NoiseConfig:
    """Caption corruption model.

    A view is corrupted with probability
    ``clamp(noise_multiplier * (p_base + occlusion_boost * (1 - visible_fraction)))``
    where ``p_base = 1 - prod(1 - p_kind)``; the ``p_kind`` values also weigh
    which single corruption a corrupted view receives.
    """

    p_attr_swap: float = 0.12
    p_category_swap: float = 0.08
    p_hallucinate: float = 0.08
    p_drop_detail: float = 0.08
    occlusion_boost: float = 0.3
    p_boilerplate: float = 0.2
    synonym_table: Dict[str, List[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_SYNONYMS.items()})


@dataclass
class ExplorationConfig:
    policy: str = "frontier"
    n_steps: int = 300
    grid_size: int = 128
    unknown_penalty: float = 2.0
    staleness_timeout: int = 25
    cla_radius: int = 16
    cla_standoff: int = 10
    revisit_radius: int = 6
    look_around_steps: int = 6
    embedding_dim: int = 256


@dataclass
class ConsensusConfig:
    method: str = "ldcps-offline"
    eco_alpha: float = 0.5
    word_limit: int = 20
    include_class: bool = False
    max_in_flight: int = 4
    boilerplate: List[str] = field(default_factory=lambda: ["a picture of", "a photo of", "an image of"])


@dataclass
class LlmConfig:
    """Remote service settings; the key is read from ``api_key_env``."""

    endpoint: Optional[str] = None
    model: str = "offline"
    temperature: float = 0.0
    max_tokens: int = 64
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5
    api_key_env: str = "EMBODIED_CAPTIONING_API_KEY"
    endpoint_env: str = "EMBODIED_CAPTIONING_ENDPOINT"

    @property
    def api_key(self) -> Optional[str]:
        return os.environ.get(self.api_key_env)

    def resolved_endpoint(self) -> Optional[str]:
        return self.endpoint or os.environ.get(self.endpoint_env)


@dataclass
class LossConfig:
    """Fine-tuning hyperparameters."""

    lambda_tr: float = 0.1
    margin: float = 2.0
    distance: str = "euclidean"
    learning_rate: float = 5e-4
    weight_decay: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    patience: int = 3
    optimizer: str = "sgd"
    feature_dim: int = 16
    max_length: int = 12
    val_fraction: float = 0.25
    init_scale: float = 0.1


@dataclass
class RunConfig:
    """Complete configuration of one pipeline run."""

    scene: SceneSpec = field(default_factory=SceneSpec)
    camera: CameraConfig = field(default_factory=CameraConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "RunConfig":
        """Create a RunConfig from a (possibly partial) dictionary."""
        config = _build(cls, data or {})
        config.validate()
        return config

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        """
        Check value ranges and cross-field constraints.

        Raises:
            ConfigError: If any setting is out of range
        """
        noise = self.noise
        for name in ("p_attr_swap", "p_category_swap", "p_hallucinate", "p_drop_detail", "p_boilerplate"):
            _check_probability(f"noise.{name}", getattr(noise, name))
        _check_probability("detector.misclass_rate", self.detector.misclass_rate)
        _check_probability("detector.confidence_threshold", self.detector.confidence_threshold)
        _check_probability("detector.confidence_floor", self.detector.confidence_floor)
        _check_probability("consensus.eco_alpha", self.consensus.eco_alpha)
        if noise.occlusion_boost < 0:
            raise ConfigError("noise.occlusion_boost must be non-negative")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.exploration.policy not in POLICIES:
            raise ConfigError(f"Unknown policy '{self.exploration.policy}'", details={"allowed": list(POLICIES)})
        if self.consensus.method not in METHODS:
            raise ConfigError(f"Unknown consensus method '{self.consensus.method}'", details={"allowed": list(METHODS)})
        if self.loss.optimizer not in OPTIMIZERS:
            raise ConfigError(f"Unknown optimizer '{self.loss.optimizer}'")
        if self.loss.margin <= 0:
            raise ConfigError("loss.margin must be positive")
        if self.loss.lambda_tr < 0:
            raise ConfigError("loss.lambda_tr must be non-negative")
        if self.loss.distance != "euclidean":
            raise ConfigError("Only the euclidean triplet distance is supported")
        for name in ("n_steps", "cla_radius", "cla_standoff", "revisit_radius", "look_around_steps"):
            if getattr(self.exploration, name) < 0:
                raise ConfigError(f"exploration.{name} must be non-negative")
        if self.scene.path is not None and not Path(self.scene.path).exists():
            raise ConfigError(f"Scene file not found: {self.scene.path}")

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, secrets excluded."""
        data = self.to_dict()
        data.pop("output_dir", None)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"Section for {cls.__name__} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name in known else None
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value or {})
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def interpolate_env(text: str) -> str:
    """
    Replace ``${VAR}`` and ``${VAR:-default}`` placeholders from the environment.

    Raises:
        ConfigError: If a variable without default is unset
    """

    def substitute(match: re.Match) -> str:
        name, default = match.group(1), match.group(2)
        value = os.environ.get(name)
        if value is not None:
            return value
        if default is not None:
            return default
        raise ConfigError(f"Environment variable '{name}' is not set")

    return _PLACEHOLDER.sub(substitute, text)


def load_config(path: Union[str, Path, None] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load a RunConfig from a YAML file.

    Args:
        path: YAML file; defaults are used when omitted
        overrides: Dotted keys (``"exploration.policy"``) applied after loading

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: If the file is missing, malformed or invalid
    """
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = yaml.safe_load(interpolate_env(path.read_text(encoding="utf-8"))) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Malformed config file {path}: {e}")
        logger.debug("Loaded config from %s", path)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return RunConfig.from_dict(data)
