"""
Tests for the caption metrics against hand computations and brute-force
oracles.
"""

import itertools
import math
from collections import Counter

import pytest

from embodied_captioning.exceptions import DegenerateCorpusError, EvaluationError
from embodied_captioning.metrics import (
    METRIC_NOTES,
    bleu4,
    cider,
    embed_cosine,
    evaluate_run,
    meteor_lite,
    my_lcs,
    rouge_l,
)


def brute_force_cider(preds, refs, n=4):
    """Plain tf-idf enumeration, one order at a time."""
    def grams(text, k):
        words = text.lower().split()
        return Counter(tuple(words[i:i + k]) for i in range(len(words) - k + 1))

    keys = sorted(preds)
    scores = {}
    for key in keys:
        per_order = []
        for k in range(1, n + 1):
            df = Counter()
            for other in keys:
                df.update({g for r in refs[other] for g in grams(r, k)})

            def weights(counts):
                return {g: tf * (math.log(len(keys)) - math.log(df[g])) for g, tf in counts.items() if df[g] > 0}

            def cos(a, b):
                na = math.sqrt(sum(v * v for v in a.values()))
                nb = math.sqrt(sum(v * v for v in b.values()))
                return 0.0 if na == 0 or nb == 0 else sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)

            pred_w = weights(grams(preds[key], k))
            per_order.append(sum(cos(pred_w, weights(grams(r, k))) for r in refs[key]) / len(refs[key]))
        scores[key] = 10.0 * sum(per_order) / n
    return scores


def test_bleu4_hand_computation():
    """Test clipped precisions 5/5, 3/4, 2/3, 1/2 with brevity penalty exp(-0.2)."""
    expected = 100.0 * math.exp(-0.2) * (1.0 * 0.75 * (2 / 3) * 0.5) ** 0.25
    assert bleu4("a red couch in room", ["a red couch in the room"]) == pytest.approx(expected, abs=1e-6)


def test_bleu4_edge_cases():
    assert bleu4("a red leather couch", ["a red leather couch"]) == pytest.approx(100.0)
    assert bleu4("x y z w", ["a b c d"]) <= 1e-6
    assert bleu4("", ["a red couch"]) == 0.0


def test_lcs():
    assert my_lcs("a b c d".split(), "a x c d".split()) == 3
    assert my_lcs([], ["a"]) == 0


def test_rouge_l():
    """Test LCS 2 of 3 on both sides: F = 2/3 for every beta."""
    assert rouge_l("a b c", "a x c") == pytest.approx(200.0 / 3)
    assert rouge_l("a red couch", "a red couch") == pytest.approx(100.0)
    assert rouge_l("a b", "c d") == 0.0
    assert rouge_l("", "a b") == 0.0


def test_rouge_l_uneven_lengths():
    p, r, beta = 2 / 2, 2 / 4, 1.2
    expected = 100.0 * (1 + beta ** 2) * p * r / (r + beta ** 2 * p)
    assert rouge_l("red couch", "a red leather couch") == pytest.approx(expected)


@pytest.mark.parametrize("n", [1, 3, 6])
def test_meteor_identity(n):
    sentence = " ".join(f"w{i}" for i in range(n))
    assert meteor_lite(sentence, sentence) == pytest.approx(100.0 * (1 - 0.5 / n ** 3))


def test_meteor_hand_computation():
    """Test two contiguous matches: P = 2/3, R = 1/2, one chunk."""
    fmean = 10 * (2 / 3) * 0.5 / (0.5 + 9 * (2 / 3))
    assert meteor_lite("the red couch", "a red couch here") == pytest.approx(100.0 * fmean * (1 - 0.5 / 8))


def test_meteor_stems_and_disjoint():
    assert meteor_lite("couches", "couch") == pytest.approx(50.0)
    assert meteor_lite("a b", "c d") == 0.0
    assert meteor_lite("", "c d") == 0.0


def test_cider_matches_brute_force():
    """Test a two-instance corpus against plain tf-idf enumeration."""
    preds = {"1": "a red couch", "2": "a blue tv on the wall"}
    refs = {"1": ["a red leather couch", "a red couch"], "2": ["a black tv by the wall"]}
    mean, scores = cider(preds, refs)
    oracle = brute_force_cider(preds, refs)
    for key in preds:
        assert scores[key] == pytest.approx(oracle[key], abs=1e-6)
    assert mean == pytest.approx(sum(oracle.values()) / 2, abs=1e-6)
    assert scores["1"] > 0


def test_cider_edge_cases():
    _, scores = cider({"1": "a red couch", "2": "x y"}, {"1": ["a red couch"], "2": ["a tv"]})
    assert scores["2"] == 0.0
    with pytest.raises(DegenerateCorpusError):
        cider({"1": "a red couch"}, {"1": ["a red couch"]})


def test_embed_cosine(embedder):
    assert embed_cosine("a red couch", "a red couch", embedder) == pytest.approx(100.0)
    assert embed_cosine("", "a red couch", embedder) == 0.0
    assert 0.0 <= embed_cosine("a red couch", "a glass tv", embedder) < 100.0


def test_evaluate_run(embedder):
    """Test per-instance scores, means and excluded instances."""
    predictions = {"0": "a red couch", "1": "a blue tv", "7": "a lamp"}
    annotations = {"0": "a red couch", "1": "a black tv", "2": "a bed"}
    report = evaluate_run(predictions, annotations, embedder, labels={"0": "couch"})
    assert sorted(report.per_instance) == ["0", "1"]
    assert report.excluded == ["2"]
    assert report.per_instance["0"].rouge_l == pytest.approx(100.0)
    assert report.means["R_L"] == pytest.approx(
        (report.per_instance["0"].rouge_l + report.per_instance["1"].rouge_l) / 2
    )
    assert set(report.means) == {"B4", "M", "R_L", "CI", "CS"}
    assert report.labels == {"0": "couch"}


def test_evaluate_run_degenerate_inputs(embedder):
    single = evaluate_run({"0": "a red couch"}, {"0": "a red couch"}, embedder)
    assert single.per_instance["0"].cider == 0.0
    with pytest.raises(EvaluationError):
        evaluate_run({"0": "a"}, {"1": "b"}, embedder)


def test_metric_notes_cover_every_measure():
    assert set(METRIC_NOTES) == {"B4", "M", "R_L", "CI", "CS", "SP"}


# Ten prediction / annotation pairs; each pair shares at least one 4-gram.
PAIRS = [
    ("a red leather couch near the window", "a red leather couch by the wall"),
    ("a blue metal tv on the wall", "a big blue metal tv on a wall"),
    ("a white ceramic toilet in the corner", "a white ceramic toilet next to the door"),
    ("a green potted plant by the wall", "a green potted plant in the corner by the wall"),
    ("a brown wooden table on the rug", "a brown wooden table on the rug"),
    ("a gray fabric bed near the window", "a large gray fabric bed near the window"),
    ("a yellow glass vase on the table", "a yellow glass vase"),
    ("a black leather couch with a pillow", "a black leather couch in the corner"),
    ("a wooden table next to the door", "a small wooden table next to the door"),
    ("a red fabric couch in the corner", "a red fabric couch on the rug in the corner"),
]


def _ngrams(words, k):
    return Counter(tuple(words[i:i + k]) for i in range(len(words) - k + 1))


def brute_force_bleu4(pred, ref):
    """Clipped precisions and brevity penalty for one reference without zero counts."""
    p, r = pred.split(), ref.split()
    log_sum = 0.0
    for k in range(1, 5):
        ref_grams = _ngrams(r, k)
        matched = sum(min(c, ref_grams[g]) for g, c in _ngrams(p, k).items())
        log_sum += math.log(matched / (len(p) - k + 1))
    penalty = 1.0 if len(p) > len(r) else math.exp(1 - len(r) / len(p))
    return 100.0 * penalty * math.exp(log_sum / 4)


def brute_force_lcs(a, b):
    """Longest subsequence of ``a`` found in ``b``, by enumerating index subsets."""
    def is_subsequence(seq, target):
        it = iter(target)
        return all(word in it for word in seq)

    for size in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), size):
            if is_subsequence([a[i] for i in idx], b):
                return size
    return 0


def test_fixture_bleu4_and_rouge_l_match_brute_force():
    """Test BLEU-4 and ROUGE-L on ten pairs against independent enumeration."""
    for pred, ref in PAIRS:
        assert bleu4(pred, [ref]) == pytest.approx(brute_force_bleu4(pred, ref), abs=1e-6)
        p, r = pred.split(), ref.split()
        lcs = brute_force_lcs(p, r)
        prec, rec = lcs / len(p), lcs / len(r)
        expected = 100.0 * (1 + 1.2 ** 2) * prec * rec / (rec + 1.2 ** 2 * prec)
        assert rouge_l(pred, ref) == pytest.approx(expected, abs=1e-6)


def test_fixture_cider_matches_brute_force():
    preds = {str(i): pred for i, (pred, _) in enumerate(PAIRS)}
    refs = {str(i): [ref] for i, (_, ref) in enumerate(PAIRS)}
    mean, scores = cider(preds, refs)
    oracle = brute_force_cider(preds, refs)
    for key in preds:
        assert scores[key] == pytest.approx(oracle[key], abs=1e-6)
    assert mean == pytest.approx(sum(oracle.values()) / len(oracle), abs=1e-6)


def test_identity_scores_are_exact(embedder):
    for _, ref in PAIRS:
        assert bleu4(ref, [ref]) == pytest.approx(100.0, abs=1e-9)
        assert rouge_l(ref, ref) == pytest.approx(100.0, abs=1e-9)
        assert embed_cosine(ref, ref, embedder) == pytest.approx(100.0, abs=1e-9)


@pytest.mark.parametrize("copies", [2, 3])
def test_cider_is_unchanged_by_duplicating_the_corpus(copies):
    """Test that repeating every instance keeps each score, unseen n-grams included."""
    preds = {"1": "a red couch", "2": "a blue tv"}
    refs = {"1": ["a red leather couch"], "2": ["a black tv"]}
    _, scores = cider(preds, refs)
    repeated_preds = {f"{k}-{c}": v for k, v in preds.items() for c in range(copies)}
    repeated_refs = {f"{k}-{c}": v for k, v in refs.items() for c in range(copies)}
    _, repeated = cider(repeated_preds, repeated_refs)
    for key in preds:
        for c in range(copies):
            assert repeated[f"{key}-{c}"] == pytest.approx(scores[key], abs=1e-9)
