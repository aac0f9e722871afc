"""
Pseudo-caption consensus per object instance: LD-CPS (LLM or offline medoid),
ECO and IC3.
"""

import asyncio
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import ConsensusConfig, LlmConfig
from .exceptions import ContractError, RemoteServiceError, ReplyParseError
from .llm import LlmModule
from .metrics import pool_cider
from .models import CATEGORIES, CaptionTally, LlmRequest, ObjectInstance, PseudoCaption
from .perception import HashingEmbedder, cosine, tokenize
from .prompts import build_ic3_prompt, build_ldcps_prompt

logger = logging.getLogger(__name__)

Embedder = Callable[[str], np.ndarray]

DEFAULT_BOILERPLATE = ("a picture of", "a photo of", "an image of")

_CAPTION_TAG = re.compile(r"<Caption>(.*?)</Caption>", re.DOTALL)
_TIE = 1e-12


def _prefix_pattern(patterns: Sequence[str]) -> "re.Pattern":
    alternatives = "|".join(r"\s+".join(map(re.escape, p.split())) for p in patterns)
    return re.compile(rf"^\s*(?:(?:{alternatives})(?=\s|$)\s*)+", re.IGNORECASE)


def _clean(text: str, prefix: "re.Pattern") -> str:
    while True:
        out = prefix.sub("", text)
        out = re.sub(r"[\s.]+$", "", out)
        out = " ".join(out.lower().split())
        if out == text:
            return out
        text = out


def preprocess_captions(caps: Sequence[str], boilerplate: Sequence[str] = DEFAULT_BOILERPLATE) -> List[str]:
    """
    Strip leading boilerplate and trailing periods, lowercase, collapse
    whitespace; captions that end up empty are dropped.
    """
    prefix = _prefix_pattern(boilerplate)
    cleaned = (_clean(c, prefix) for c in caps)
    return [c for c in cleaned if c]


def tally(caps: Sequence[str]) -> CaptionTally:
    """Group identical captions; most frequent first, ties lexicographic."""
    counts = Counter(caps)
    return CaptionTally(sorted(((n, c) for c, n in counts.items()), key=lambda e: (-e[0], e[1])))


def parse_llm_reply(raw: str, word_limit: Optional[int] = 20) -> Tuple[str, bool]:
    """
    Extract the first ``<Caption>...</Caption>`` span.

    Args:
        raw: Verbatim reply text
        word_limit: Maximum number of words kept, ``None`` for no limit

    Returns:
        Tuple of (caption text, truncated flag)

    Raises:
        ReplyParseError: If no non-empty tagged span is present
    """
    match = _CAPTION_TAG.search(raw or "")
    if match is None:
        raise ReplyParseError("No <Caption> tag in reply", details={"raw": raw})
    words = match.group(1).split()
    if not words:
        raise ReplyParseError("Empty <Caption> tag in reply", details={"raw": raw})
    truncated = word_limit is not None and len(words) > word_limit
    if truncated:
        logger.warning("LLM caption has %d words, truncated to %d", len(words), word_limit)
        words = words[:word_limit]
    return " ".join(words), truncated


def medoid_scores(t: CaptionTally, embedder: Embedder) -> List[float]:
    """Frequency-weighted cosine support of every tally entry."""
    vecs = [embedder(c) for _, c in t.entries]
    freqs = np.array([f for f, _ in t.entries], dtype=float)
    sims = np.array([[cosine(a, b) for b in vecs] for a in vecs])
    return list(sims @ freqs)


def medoid_consensus(t: CaptionTally, embedder: Embedder, instance_id: int = 0) -> PseudoCaption:
    """
    Offline LD-CPS: the tally member with the largest frequency-weighted
    similarity to all captions. Ties go to the more frequent caption, then
    the lexicographically smaller one.
    """
    if not t.entries:
        raise ContractError("Medoid consensus needs a non-empty tally")
    scores = medoid_scores(t, embedder)
    best = max(scores)
    candidates = [(f, c) for (f, c), s in zip(t.entries, scores) if s >= best - _TIE * max(1.0, abs(best))]
    _, text = min(candidates, key=lambda e: (-e[0], e[1]))
    return PseudoCaption(text=text, instance_id=instance_id, method="ldcps-medoid")


def cider_consensus(caps: Sequence[str]) -> List[float]:
    """CIDEr of every caption against all the other captions of the instance."""
    return pool_cider(caps)


def eco_select(
    caps: Sequence[str],
    image_proxy: np.ndarray,
    embedder: Embedder,
    alpha: float = 0.5,
    instance_id: int = 0,
) -> PseudoCaption:
    """
    ECO selection: ``alpha * cos(caption, image proxy) + (1 - alpha) * CIDEr
    consensus``; the highest-scoring caption is returned.
    """
    if not caps:
        raise ContractError("ECO needs at least one caption")
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"ECO weight must lie in [0, 1], got {alpha}")
    consensus = cider_consensus(caps)
    scores = [alpha * cosine(embedder(c), image_proxy) + (1 - alpha) * s for c, s in zip(caps, consensus)]
    best = max(scores)
    text = min(c for c, s in zip(caps, scores) if s >= best - _TIE * max(1.0, abs(best)))
    return PseudoCaption(text=text, instance_id=instance_id, method="eco")


def _is_subsequence(short: List[str], long: List[str]) -> bool:
    it = iter(long)
    return all(tok in it for tok in short)


def offline_summary(caps: Sequence[str]) -> str:
    """
    Concatenate the distinct captions with "and", dropping every caption whose
    tokens form a subsequence of another kept caption.
    """
    distinct = list(dict.fromkeys(caps))
    kept = []
    for i, cap in enumerate(distinct):
        toks = tokenize(cap)
        covered = any(
            j != i and _is_subsequence(toks, tokenize(other)) and len(tokenize(other)) > len(toks)
            for j, other in enumerate(distinct)
        )
        if not covered:
            kept.append(cap)
    return " and ".join(kept)


async def ic3_summarize(
    caps: Sequence[str],
    llm: Optional[LlmModule] = None,
    llm_cfg: Optional[LlmConfig] = None,
    instance_id: int = 0,
) -> PseudoCaption:
    """
    IC3 baseline. Without an LLM module the summary is the offline
    containment-deduplicated concatenation.

    Raises:
        ContractError: If no caption is given
        RemoteServiceError: If the LLM call fails after the client's retries
        ReplyParseError: If the reply carries no caption tag
    """
    if not caps:
        raise ContractError("IC3 needs at least one caption")
    if llm is None:
        return PseudoCaption(text=offline_summary(caps), instance_id=instance_id, method="ic3")
    llm_cfg = llm_cfg or LlmConfig()
    request = LlmRequest(build_ic3_prompt(caps), llm_cfg.model, llm_cfg.temperature, llm_cfg.max_tokens)
    reply = await llm.complete(request)
    text, _ = parse_llm_reply(reply.raw_text, word_limit=None)
    return PseudoCaption(text=text, instance_id=instance_id, method="ic3", source_model=llm_cfg.model)


async def ldcps_llm(
    t: CaptionTally,
    llm: LlmModule,
    embedder: Embedder,
    cfg: ConsensusConfig,
    llm_cfg: LlmConfig,
    instance_id: int = 0,
    object_class: Optional[str] = None,
) -> PseudoCaption:
    """LD-CPS through the LLM; parse or remote failures fall back to the medoid."""
    prompt = build_ldcps_prompt(t, object_class if cfg.include_class else None)
    request = LlmRequest(prompt, llm_cfg.model, llm_cfg.temperature, llm_cfg.max_tokens)
    try:
        reply = await llm.complete(request)
        text, truncated = parse_llm_reply(reply.raw_text, cfg.word_limit)
    except (ReplyParseError, RemoteServiceError) as e:
        logger.info("Instance %d: LLM consensus failed (%s), using medoid", instance_id, e)
        fallback = medoid_consensus(t, embedder, instance_id)
        fallback.fallback = True
        return fallback
    return PseudoCaption(
        text=text, instance_id=instance_id, method="ldcps-llm", source_model=llm_cfg.model, truncated=truncated
    )


@dataclass
class ConsensusResult:
    """Pseudo-captions per instance and the instances skipped with a reason."""

    pseudo: Dict[int, PseudoCaption] = field(default_factory=dict)
    skipped: Dict[int, str] = field(default_factory=dict)

    @property
    def fallbacks(self) -> List[int]:
        return sorted(i for i, p in self.pseudo.items() if p.fallback)


async def pseudo_caption_all(
    instances: Sequence[ObjectInstance],
    caption_texts: Mapping[int, str],
    method: str,
    cfg: Optional[ConsensusConfig] = None,
    llm: Optional[LlmModule] = None,
    llm_cfg: Optional[LlmConfig] = None,
    embedder: Optional[Embedder] = None,
    proxies: Optional[Mapping[int, str]] = None,
) -> ConsensusResult:
    """
    Pseudo-caption every instance.

    Args:
        instances: Instances from clustering
        caption_texts: Caption text by caption id
        method: ``ldcps``, ``ldcps-offline``, ``eco`` or ``ic3``
        cfg: Consensus settings
        llm: LLM module, required for ``ldcps`` and used by ``ic3`` when given
        llm_cfg: Model name and sampling settings for LLM requests
        embedder: Sentence embedder, hashing embedder by default
        proxies: ECO image-proxy text per instance; the instance category
            is used when absent

    Returns:
        ConsensusResult with pseudo-captions and skipped instances

    Raises:
        ContractError: If ``ldcps`` is requested without an LLM module
    """
    cfg = cfg or ConsensusConfig()
    llm_cfg = llm_cfg or LlmConfig()
    embedder = embedder or HashingEmbedder()
    proxies = proxies or {}
    if method == "ldcps" and llm is None:
        raise ContractError("Method 'ldcps' needs an LLM module")

    result = ConsensusResult()
    semaphore = asyncio.Semaphore(max(1, cfg.max_in_flight))

    async def resolve(inst: ObjectInstance) -> None:
        caps = preprocess_captions([caption_texts[c] for c in inst.captions], cfg.boilerplate)
        if not caps:
            result.skipped[inst.instance_id] = "no captions"
            logger.warning("Instance %d has no usable captions, skipped", inst.instance_id)
            return
        t = tally(caps)
        if method == "ldcps-offline":
            pseudo = medoid_consensus(t, embedder, inst.instance_id)
        elif method == "eco":
            proxy = embedder(proxies.get(inst.instance_id, CATEGORIES[inst.pseudo_label]))
            pseudo = eco_select(caps, proxy, embedder, cfg.eco_alpha, inst.instance_id)
        elif method == "ic3":
            async with semaphore:
                pseudo = await ic3_summarize(caps, llm, llm_cfg, inst.instance_id)
        else:
            async with semaphore:
                pseudo = await ldcps_llm(t, llm, embedder, cfg, llm_cfg, inst.instance_id, inst.category)
        result.pseudo[inst.instance_id] = pseudo

    await asyncio.gather(*(resolve(inst) for inst in instances))
    result.pseudo = dict(sorted(result.pseudo.items()))
    result.skipped = dict(sorted(result.skipped.items()))
    if result.fallbacks:
        logger.info("%d of %d instances resolved by medoid fallback", len(result.fallbacks), len(result.pseudo))
    return result
