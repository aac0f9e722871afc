"""
Caption evaluation measures on a shared tokenizer (lowercase, split on
non-alphanumerics). BLEU-4, METEOR-lite, ROUGE-L and embedding cosine are on
a percent scale; CIDEr uses the standard x10 scale.
"""

import logging
import math
import warnings
from collections import Counter
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from nltk.stem.porter import PorterStemmer
from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu

from .exceptions import DegenerateCorpusError, EvaluationError
from .models import InstanceScores, MetricsReport
from .perception import cosine, tokenize

logger = logging.getLogger(__name__)

Embedder = Callable[[str], np.ndarray]

BLEU_EPSILON = 1e-9
ROUGE_BETA = 1.2
CIDER_SCALE = 10.0

METRIC_NOTES = {
    "B4": "BLEU-4, uniform weights, brevity penalty, zero n-gram counts smoothed with epsilon 1e-9",
    "M": "METEOR-lite: exact then Porter-stem unigram matches, Fmean = 10PR/(R+9P), "
    "penalty 0.5*(chunks/matches)^3; no WordNet synonyms or paraphrases",
    "R_L": "ROUGE-L F-measure with beta 1.2",
    "CI": "CIDEr (n=1..4, tf-idf over the reference corpus, n-grams unseen in any reference weigh 0, "
    "mean cosine x10, no length penalty or clipping)",
    "CS": "100 * max(0, cosine) of hashed bag-of-words+bigram embeddings",
    "SP": "SPICE not computed",
}

_smoothing = SmoothingFunction(epsilon=BLEU_EPSILON).method1
_stemmer = PorterStemmer()


def bleu4(pred: str, refs: Sequence[str]) -> float:
    """Sentence BLEU-4 of ``pred`` against ``refs`` in percent; 0 for an empty prediction."""
    hypothesis = tokenize(pred)
    references = [tokenize(r) for r in refs if tokenize(r)]
    if not hypothesis or not references:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        score = sentence_bleu(references, hypothesis, weights=(0.25, 0.25, 0.25, 0.25), smoothing_function=_smoothing)
    return 100.0 * float(score)


def my_lcs(string: Sequence[str], sub: Sequence[str]) -> int:
    """Length of the longest common subsequence of two token lists."""
    if len(string) < len(sub):
        sub, string = string, sub
    lengths = [[0] * (len(sub) + 1) for _ in range(len(string) + 1)]
    for j in range(1, len(sub) + 1):
        for i in range(1, len(string) + 1):
            if string[i - 1] == sub[j - 1]:
                lengths[i][j] = lengths[i - 1][j - 1] + 1
            else:
                lengths[i][j] = max(lengths[i - 1][j], lengths[i][j - 1])
    return lengths[len(string)][len(sub)]


def rouge_l(pred: str, ref: str, beta: float = ROUGE_BETA) -> float:
    """LCS-based F-measure in percent."""
    p, r = tokenize(pred), tokenize(ref)
    if not p or not r:
        return 0.0
    lcs = my_lcs(r, p)
    if lcs == 0:
        return 0.0
    prec, rec = lcs / len(p), lcs / len(r)
    return 100.0 * ((1 + beta ** 2) * prec * rec) / (rec + beta ** 2 * prec)


def _align(pred: List[str], ref: List[str]) -> List[Tuple[int, int]]:
    """Exact matches first, then Porter-stem matches, left to right."""
    used_p, used_r, pairs = set(), set(), []
    for stage in (lambda w: w, _stemmer.stem):
        p_forms = [stage(w) for w in pred]
        r_forms = [stage(w) for w in ref]
        for i, form in enumerate(p_forms):
            if i in used_p:
                continue
            for j, other in enumerate(r_forms):
                if j not in used_r and form == other:
                    used_p.add(i)
                    used_r.add(j)
                    pairs.append((i, j))
                    break
    return sorted(pairs)


def meteor_lite(pred: str, ref: str) -> float:
    """
    Simplified METEOR in percent.

    Identical sentences of ``n`` tokens score ``100 * (1 - 0.5 / n**3)``.
    """
    p, r = tokenize(pred), tokenize(ref)
    if not p or not r:
        return 0.0
    pairs = _align(p, r)
    m = len(pairs)
    if m == 0:
        return 0.0
    prec, rec = m / len(p), m / len(r)
    fmean = 10 * prec * rec / (rec + 9 * prec)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return 100.0 * fmean * (1 - penalty)


def cider_precook(text: str, n: int = 4) -> Dict[Tuple[str, ...], int]:
    """n-gram counts (orders 1..n) of a sentence."""
    words = tokenize(text)
    counts: Counter = Counter()
    for k in range(1, n + 1):
        for i in range(len(words) - k + 1):
            counts[tuple(words[i:i + k])] += 1
    return dict(counts)


def _counts_to_vec(counts: Mapping[Tuple[str, ...], int], df: Mapping, log_n: float, n: int) -> List[Dict]:
    """tf-idf vectors per order; n-grams absent from the references weigh 0."""
    vec = [dict() for _ in range(n)]
    for ngram, tf in counts.items():
        frequency = df.get(ngram, 0)
        if frequency > 0:
            vec[len(ngram) - 1][ngram] = float(tf) * (log_n - math.log(float(frequency)))
    return vec


def _sim(a: Dict, b: Dict) -> float:
    norm_a = math.sqrt(sum(v * v for v in a.values()))
    norm_b = math.sqrt(sum(v * v for v in b.values()))
    if norm_a == 0 or norm_b == 0:
        return 0.0
    return sum(v * b.get(k, 0.0) for k, v in a.items()) / (norm_a * norm_b)


def cider(
    preds: Mapping[str, str], refs: Mapping[str, Sequence[str]], n: int = 4
) -> Tuple[float, Dict[str, float]]:
    """
    Corpus CIDEr.

    Document frequencies count, for every n-gram, the instances whose
    references contain it; the corpus size ``N`` is the number of instances.
    Prediction n-grams found in no reference weigh 0, so duplicating every
    instance leaves the scores unchanged.

    Args:
        preds: Prediction per instance key
        refs: Reference captions per instance key (same keys as ``preds``)
        n: Highest n-gram order

    Returns:
        Tuple of (mean score, score per instance)

    Raises:
        DegenerateCorpusError: If fewer than two instances are given
    """
    keys = sorted(preds)
    if len(keys) < 2:
        raise DegenerateCorpusError(f"CIDEr needs at least 2 instances, got {len(keys)}")
    ref_counts = {k: [cider_precook(r, n) for r in refs[k]] for k in keys}
    df: Counter = Counter()
    for k in keys:
        for ngram in set(g for counts in ref_counts[k] for g in counts):
            df[ngram] += 1
    log_n = math.log(float(len(keys)))

    scores = {}
    for k in keys:
        vec = _counts_to_vec(cider_precook(preds[k], n), df, log_n, n)
        ref_vecs = [_counts_to_vec(c, df, log_n, n) for c in ref_counts[k]]
        if not ref_vecs:
            scores[k] = 0.0
            continue
        per_order = np.zeros(n)
        for rv in ref_vecs:
            per_order += [_sim(vec[i], rv[i]) for i in range(n)]
        per_order /= len(ref_vecs)
        scores[k] = float(np.mean(per_order) * CIDER_SCALE)
    return float(np.mean(list(scores.values()))), scores


def pool_cider(texts: Sequence[str], n: int = 4) -> List[float]:
    """
    CIDEr of every text against all the other texts of the pool.

    Each text is one document of the pool: ``N`` is the pool size and an
    n-gram's document frequency is the number of texts containing it.
    Pools of fewer than two texts score 0.
    """
    if len(texts) < 2:
        return [0.0] * len(texts)
    counts = [cider_precook(t, n) for t in texts]
    df = Counter(g for c in counts for g in c)
    log_n = math.log(float(len(texts)))
    vecs = [_counts_to_vec(c, df, log_n, n) for c in counts]
    scores = []
    for i, vec in enumerate(vecs):
        sims = [np.mean([_sim(vec[k], other[k]) for k in range(n)]) for j, other in enumerate(vecs) if j != i]
        scores.append(float(np.mean(sims) * CIDER_SCALE))
    return scores


def embed_cosine(pred: str, ref: str, embedder: Embedder) -> float:
    """``100 * max(0, cosine)`` of the two embeddings."""
    a, b = embedder(pred), embedder(ref)
    if not np.any(a) or not np.any(b):
        logger.warning("Zero embedding in cosine score (pred=%r, ref=%r)", pred, ref)
        return 0.0
    return 100.0 * max(0.0, cosine(a, b))


def evaluate_run(
    predictions: Mapping[str, str],
    annotations: Mapping[str, str],
    embedder: Embedder,
    labels: Optional[Mapping[str, str]] = None,
) -> MetricsReport:
    """
    Score predictions against annotations per instance.

    Annotated instances without a prediction are listed as excluded and left
    out of the means.

    Raises:
        EvaluationError: If no instance has both a prediction and an annotation
    """
    shared = sorted(set(predictions) & set(annotations))
    if not shared:
        raise EvaluationError("Predictions and annotations share no instance")
    excluded = sorted(set(annotations) - set(predictions))
    if excluded:
        logger.warning("%d annotated instances have no prediction", len(excluded))

    try:
        _, cider_scores = cider({k: predictions[k] for k in shared}, {k: [annotations[k]] for k in shared})
    except DegenerateCorpusError:
        logger.warning("CIDEr undefined on a single-instance corpus, reported as 0")
        cider_scores = {k: 0.0 for k in shared}

    per_instance = {}
    for key in shared:
        pred, ref = predictions[key], annotations[key]
        per_instance[key] = InstanceScores(
            bleu4=bleu4(pred, [ref]),
            meteor=meteor_lite(pred, ref),
            rouge_l=rouge_l(pred, ref),
            cider=cider_scores[key],
            cosine=embed_cosine(pred, ref, embedder),
        )
    means = {
        name: float(np.mean([getattr(s, attr) for s in per_instance.values()]))
        for name, attr in (("B4", "bleu4"), ("M", "meteor"), ("R_L", "rouge_l"), ("CI", "cider"), ("CS", "cosine"))
    }
    return MetricsReport(per_instance=per_instance, means=means, excluded=excluded, labels=dict(labels or {}))
