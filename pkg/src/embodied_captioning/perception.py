"""
Mock detector and captioner, detection filtering and the hashing text embedder.
"""

import functools
import logging
import re
from typing import List, Optional, Sequence, Tuple

import mmh3
import numpy as np

from .config import DetectorConfig, NoiseConfig
from .models import CATEGORIES, NUM_CLASSES, AgentState, CaptionRecord, Detection, ObjectGT, Observation, Scene
from .scene import COLORS, CONTEXTS, MATERIALS

logger = logging.getLogger(__name__)

HALLUCINATIONS = ("pillow", "lamp", "cat", "book", "vase", "blanket")
BOILERPLATE = ("a picture of", "a photo of")
ATTRIBUTE_DIM = 32
DESCRIPTOR_DIM = NUM_CLASSES + ATTRIBUTE_DIM + 1

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> List[str]:
    """Lowercase and split on non-alphanumerics."""
    return _TOKEN.findall(text.lower())


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


# Detection


def expand_box(box: Tuple[int, int, int, int], margin: int, width: int, height: int) -> Tuple[int, int, int, int]:
    """Grow ``(x0, y0, x1, y1)`` by ``margin`` pixels per side and clamp to the image."""
    x0, y0, x1, y1 = box
    return (max(0, x0 - margin), max(0, y0 - margin), min(width, x1 + margin), min(height, y1 + margin))


def box_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two ``(x0, y0, x1, y1)`` boxes."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def non_max_suppression(boxes: Sequence[Sequence[float]], scores: Sequence[float], iou_thresh: float) -> List[int]:
    """
    Greedy NMS.

    Args:
        boxes: Boxes as ``(x0, y0, x1, y1)``
        scores: Score of every box
        iou_thresh: Boxes overlapping a kept box with IoU at or above this are dropped

    Returns:
        Kept indices, highest score first (input order breaks ties)
    """
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    keep: List[int] = []
    while order:
        best = order.pop(0)
        keep.append(best)
        order = [i for i in order if box_iou(boxes[best], boxes[i]) < iou_thresh]
    return keep


def attribute_hash(tokens: Sequence[str], dim: int = ATTRIBUTE_DIM, seed: int = 17) -> np.ndarray:
    """Signed feature hashing of attribute tokens."""
    vec = np.zeros(dim)
    for token in tokens:
        h = mmh3.hash(token, seed, signed=False)
        vec[h % dim] += 1.0 if (h // dim) % 2 == 0 else -1.0
    return vec


def view_descriptor(
    class_index: int, attribute_tokens: Sequence[str], visible_fraction: float, rng: np.random.Generator, noise: float
) -> np.ndarray:
    """Detected-class one-hot, signed attribute hash and visible fraction, with per-view jitter."""
    one_hot = np.zeros(NUM_CLASSES)
    one_hot[class_index] = 1.0
    descriptor = np.concatenate([one_hot, attribute_hash(attribute_tokens), [visible_fraction]])
    if noise > 0:
        descriptor = descriptor + rng.normal(0.0, noise, descriptor.shape)
    return descriptor


def detect(
    obs: Observation, scene: Scene, cfg: Optional[DetectorConfig], rng: np.random.Generator, step: int = 0
) -> List[Detection]:
    """
    Mock instance segmentation of one observation.

    Args:
        obs: Observation from :func:`scene.observe`
        scene: Scene the observation came from
        cfg: Detector noise parameters
        rng: Random generator
        step: Step index used in the opaque ``object_view_id``

    Returns:
        One Detection per fragment with at least ``cfg.min_pixels`` pixels
    """
    cfg = cfg or DetectorConfig()
    detections = []
    for k, fragment in enumerate(obs.visible_fragments):
        if len(fragment.pixels) < cfg.min_pixels:
            continue
        obj = scene.objects_by_id[fragment.object_id]
        label = obj.category_index
        if rng.random() < cfg.misclass_rate:
            others = [i for i in range(NUM_CLASSES) if i != label]
            label = others[int(rng.integers(len(others)))]
        logits = rng.normal(0.0, cfg.logit_noise, NUM_CLASSES)
        logits[label] = logits.max() + cfg.logit_scale

        vf = fragment.visible_fraction
        visibility = min(1.0, vf / cfg.full_view_fraction) if cfg.full_view_fraction > 0 else 1.0
        confidence = cfg.confidence_floor + (1.0 - cfg.confidence_floor) * visibility
        confidence = float(np.clip(confidence + rng.normal(0.0, cfg.confidence_noise), 0.0, 1.0))

        rows, cols = np.divmod(fragment.pixels, obs.width)
        tight = (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)
        detections.append(
            Detection(
                object_view_id=f"{step}:{k}",
                logits=logits,
                bbox=expand_box(tight, cfg.bbox_expansion, obs.width, obs.height),
                mask=np.asarray(fragment.pixels, dtype=np.int64),
                confidence=confidence,
                width=obs.width,
                height=obs.height,
                visible_fraction=vf,
                descriptor=view_descriptor(label, obj.attribute_tokens, vf, rng, cfg.descriptor_noise),
                object_id_gt=obj.id,
            )
        )
    return detections


def area_threshold(cfg: DetectorConfig, width: int, height: int) -> float:
    """Area threshold rescaled from the reference resolution."""
    ref_w, ref_h = cfg.area_reference
    return cfg.area_threshold * (width * height) / (ref_w * ref_h)


def suppress_overlaps(dets: List[Detection], iou_thresh: float) -> List[Detection]:
    """NMS on detection boxes; survivors keep their input order."""
    keep = set(non_max_suppression([d.bbox for d in dets], [d.confidence for d in dets], iou_thresh))
    return [d for i, d in enumerate(dets) if i in keep]


def filter_detections(dets: List[Detection], cfg: Optional[DetectorConfig] = None) -> List[Detection]:
    """
    Drop low-confidence and small detections, then suppress overlapping boxes.

    The result keeps the input order and is a fixed point: filtering it again
    returns it unchanged.
    """
    cfg = cfg or DetectorConfig()
    kept = [
        d
        for d in dets
        if d.confidence >= cfg.confidence_threshold and d.area >= area_threshold(cfg, d.width, d.height)
    ]
    return suppress_overlaps(kept, cfg.nms_iou)


# Captioning


def _replace_word(text: str, old: str, new: str) -> str:
    return re.sub(rf"\b{re.escape(old)}\b", new, text, count=1)


def _contains_word(text: str, word: str) -> bool:
    return re.search(rf"\b{re.escape(word)}\b", text) is not None


CORRUPTION_KINDS = ("drop_detail", "attr_swap", "category_swap", "hallucinate")


def _kind_probabilities(cfg: NoiseConfig) -> np.ndarray:
    return np.array([getattr(cfg, f"p_{kind}") for kind in CORRUPTION_KINDS], dtype=float)


def base_corruption_probability(cfg: NoiseConfig) -> float:
    """Chance that at least one kind would fire if the kinds were drawn independently."""
    return float(1.0 - np.prod(1.0 - _kind_probabilities(cfg)))


def corruption_probability(visible_fraction: float, cfg: NoiseConfig, multiplier: float = 1.0) -> float:
    """
    Per-view probability that a caption is corrupted.

    ``clamp(multiplier * (p_base + occlusion_boost * (1 - visible_fraction)))``,
    and 0 when every corruption kind is disabled.
    """
    base = base_corruption_probability(cfg)
    if base <= 0:
        return 0.0
    scaled = multiplier * (base + cfg.occlusion_boost * (1.0 - visible_fraction))
    return float(min(1.0, max(0.0, scaled)))


def _swappable_attributes(text: str, obj: ObjectGT, cfg: NoiseConfig) -> List[str]:
    return [
        t for t in obj.attribute_tokens
        if (t in COLORS or t in MATERIALS or cfg.synonym_table.get(t)) and _contains_word(text, t)
    ]


def _swap_attribute(text: str, obj: ObjectGT, cfg: NoiseConfig, rng: np.random.Generator) -> str:
    present = _swappable_attributes(text, obj, cfg)
    if not present:
        return text
    word = present[int(rng.integers(len(present)))]
    alternatives = [w for w in cfg.synonym_table.get(word, []) if w != word]
    if not alternatives:
        pool = COLORS if word in COLORS else MATERIALS
        alternatives = [w for w in pool if w != word]
    return _replace_word(text, word, alternatives[int(rng.integers(len(alternatives)))])


def _swap_category(text: str, obj: ObjectGT, rng: np.random.Generator) -> str:
    others = [c for c in CATEGORIES if c != obj.category]
    return _replace_word(text, obj.category, others[int(rng.integers(len(others)))])


def _drop_detail(text: str, obj: ObjectGT) -> str:
    for phrase in CONTEXTS.values():
        if phrase in text:
            return normalize_text(text.replace(phrase, ""))
    for token in reversed(obj.attribute_tokens):
        if _contains_word(text, token):
            return normalize_text(_replace_word(text, token, ""))
    return text


def _applicable_kinds(text: str, obj: ObjectGT, cfg: NoiseConfig) -> List[bool]:
    """Which kinds would change ``text``, in :data:`CORRUPTION_KINDS` order."""
    return [
        _drop_detail(text, obj) != text,
        bool(_swappable_attributes(text, obj, cfg)),
        _contains_word(text, obj.category) and any(c != obj.category for c in CATEGORIES),
        True,
    ]


def _corrupt(kind: str, text: str, obj: ObjectGT, cfg: NoiseConfig, rng: np.random.Generator) -> str:
    if kind == "drop_detail":
        return _drop_detail(text, obj)
    if kind == "attr_swap":
        return _swap_attribute(text, obj, cfg, rng)
    if kind == "category_swap":
        return _swap_category(text, obj, rng)
    return f"{text} with a {HALLUCINATIONS[int(rng.integers(len(HALLUCINATIONS)))]}"


def caption(
    view: Tuple[ObjectGT, float],
    cfg: Optional[NoiseConfig],
    rng: np.random.Generator,
    pose: Optional[AgentState] = None,
) -> CaptionRecord:
    """
    Noisy caption of one object view.

    One draw per view decides, with :func:`corruption_probability`, whether
    the annotation caption is corrupted. A corrupted view gets exactly one
    corruption, its kind chosen among the kinds that change the text with
    weights ``p_drop_detail``, ``p_attr_swap``, ``p_category_swap`` and
    ``p_hallucinate``. A boilerplate prefix may be prepended; it is not a
    corruption.

    Args:
        view: Object and its visible fraction in the view
        cfg: Noise model
        rng: Random generator
        pose: Camera pose of the view

    Returns:
        CaptionRecord; ``corrupted`` is set iff the text was changed by a
        corruption
    """
    cfg = cfg or NoiseConfig()
    obj, visible_fraction = view
    clean = normalize_text(obj.gt_caption)
    text = clean

    if rng.random() < corruption_probability(visible_fraction, cfg, obj.noise_multiplier):
        weights = _kind_probabilities(cfg) * np.array(_applicable_kinds(text, obj, cfg), dtype=float)
        if weights.sum() > 0:
            kind = CORRUPTION_KINDS[int(rng.choice(len(CORRUPTION_KINDS), p=weights / weights.sum()))]
            text = normalize_text(_corrupt(kind, text, obj, cfg, rng))
    corrupted = bool(text) and text != clean

    if rng.random() < cfg.p_boilerplate:
        text = f"{BOILERPLATE[int(rng.integers(len(BOILERPLATE)))]} {text}"

    return CaptionRecord(
        text=normalize_text(text) or clean,
        object_id_gt=obj.id,
        view_pose=pose if pose is not None else AgentState((0.0, 0.0, 0.0), 0.0),
        corrupted=corrupted,
        visible_fraction=float(visible_fraction),
    )


# Embedding


class HashingEmbedder:
    """
    Deterministic sentence embedder.

    Unigrams hash into ``dim`` buckets with weight 1 and bigrams with weight
    0.5 (unsigned murmur3); the sum is L2-normalized. Text without tokens
    maps to the zero vector. The last ``cache_size`` distinct texts are
    memoized.
    """

    def __init__(self, dim: int = 256, seed: int = 0, cache_size: int = 4096):
        self.dim = dim
        self.seed = seed
        self._cached_embed = functools.lru_cache(maxsize=cache_size)(self._embed)

    def bucket(self, token: str) -> int:
        return mmh3.hash(token, self.seed, signed=False) % self.dim

    def _embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        vec = np.zeros(self.dim)
        for token in tokens:
            vec[self.bucket(token)] += 1.0
        for a, b in zip(tokens, tokens[1:]):
            vec[self.bucket(f"{a} {b}")] += 0.5
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        vec.setflags(write=False)
        return vec

    def embed(self, text: str) -> np.ndarray:
        return self._cached_embed(text)

    def cache_info(self):
        return self._cached_embed.cache_info()

    __call__ = embed


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector is zero."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
