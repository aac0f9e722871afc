"""
Toy captioner fine-tuning with a captioning cross-entropy and a triplet term
on encoder features, plus the intra-instance consistency analysis.

The model is a linear encoder (view descriptor -> feature ``x``) followed by
one softmax per output position. All gradients are analytic.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import LossConfig
from .exceptions import ContractError, EmptyDatasetError
from .mapping import DatasetView
from .perception import HALLUCINATIONS, HashingEmbedder, cosine, tokenize
from .scene import lexicon

logger = logging.getLogger(__name__)

Embedder = Callable[[str], np.ndarray]

PAD, EOS, UNK = "<pad>", "<eos>", "<unk>"
PROB_FLOOR = 1e-12
KINK_TOLERANCE = 1e-4


class Vocabulary:
    """Fixed token table; id 0 is padding, 1 end of sentence, 2 unknown."""

    def __init__(self, words: Sequence[str]):
        specials = [PAD, EOS, UNK]
        self.tokens = specials + sorted(set(words) - set(specials))
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    @classmethod
    def from_texts(cls, texts: Sequence[str] = ()) -> "Vocabulary":
        """Generator lexicon plus every token of ``texts``."""
        words = set(lexicon()) | set(HALLUCINATIONS) | {"with", "and"}
        for text in texts:
            words.update(tokenize(text))
        return cls(sorted(words))

    def encode(self, text: str) -> List[int]:
        return [self.index.get(t, self.unk_id) for t in tokenize(text)]

    def decode(self, ids: Sequence[int]) -> str:
        words = []
        for i in ids:
            if i == self.eos_id:
                break
            if i != self.pad_id:
                words.append(self.tokens[i])
        return " ".join(words)


@dataclass
class TokenTarget:
    """Padded token ids of one caption; padding is masked out of the loss."""

    ids: np.ndarray
    pad_id: int = 0

    @classmethod
    def from_text(cls, text: str, vocab: Vocabulary, max_length: int) -> "TokenTarget":
        """Tokens, truncated to leave room for ``<eos>``, then padding."""
        ids = vocab.encode(text)[: max_length - 1] + [vocab.eos_id]
        ids += [vocab.pad_id] * (max_length - len(ids))
        return cls(np.asarray(ids, dtype=int), vocab.pad_id)

    @property
    def mask(self) -> np.ndarray:
        return self.ids != self.pad_id


@dataclass
class TripletBatch:
    """Anchor, positive and negative row indices into a feature matrix."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    instance_ids: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.anchors)

    @property
    def empty(self) -> bool:
        return len(self.anchors) == 0


@dataclass
class ToyDataset:
    """Descriptors, token targets and instance ids of the fine-tuning views."""

    descriptors: np.ndarray
    targets: np.ndarray
    instance_ids: np.ndarray
    captions: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.instance_ids)

    def subset(self, rows: Sequence[int]) -> "ToyDataset":
        rows = np.asarray(rows, dtype=int)
        return ToyDataset(
            self.descriptors[rows], self.targets[rows], self.instance_ids[rows], [self.captions[i] for i in rows]
        )

    @classmethod
    def from_views(
        cls,
        views: Sequence[DatasetView],
        pseudo: Mapping[int, str],
        vocab: Vocabulary,
        max_length: int,
    ) -> "ToyDataset":
        """Pair every view with its instance's pseudo-caption; views of unlabeled instances are dropped."""
        kept = [v for v in views if v.instance_id in pseudo]
        if not kept:
            return cls(np.zeros((0, 0)), np.zeros((0, max_length), dtype=int), np.zeros(0, dtype=int), [])
        return cls(
            descriptors=np.stack([np.asarray(v.descriptor, dtype=float) for v in kept]),
            targets=np.stack([TokenTarget.from_text(pseudo[v.instance_id], vocab, max_length).ids for v in kept]),
            instance_ids=np.asarray([v.instance_id for v in kept], dtype=int),
            captions=[pseudo[v.instance_id] for v in kept],
        )


class ToyCaptioner:
    """
    Linear encoder and per-position softmax decoder.

    Parameters live in one flat vector; ``w_enc`` (F x D), ``b_enc`` (F),
    ``w_dec`` (T x C x F) and ``b_dec`` (T x C) are views into it.
    """

    def __init__(self, input_dim: int, feature_dim: int, vocab: Vocabulary, max_length: int):
        self.input_dim = input_dim
        self.feature_dim = feature_dim
        self.vocab = vocab
        self.max_length = max_length
        c = len(vocab)
        self._shapes = [
            ("w_enc", (feature_dim, input_dim)),
            ("b_enc", (feature_dim,)),
            ("w_dec", (max_length, c, feature_dim)),
            ("b_dec", (max_length, c)),
        ]
        self.params = np.zeros(sum(int(np.prod(s)) for _, s in self._shapes))

    @classmethod
    def initialize(
        cls, input_dim: int, vocab: Vocabulary, cfg: LossConfig, rng: np.random.Generator
    ) -> "ToyCaptioner":
        model = cls(input_dim, cfg.feature_dim, vocab, cfg.max_length)
        model.params = rng.normal(0.0, cfg.init_scale, size=model.params.shape)
        return model

    def unpack(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        out, offset = {}, 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            out[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        return out

    def copy(self) -> "ToyCaptioner":
        other = ToyCaptioner(self.input_dim, self.feature_dim, self.vocab, self.max_length)
        other.params = self.params.copy()
        return other

    def encode(self, descriptors: np.ndarray) -> np.ndarray:
        p = self.unpack(self.params)
        return descriptors @ p["w_enc"].T + p["b_enc"]

    def probabilities(self, descriptors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Encoder features (N x F) and token probabilities (N x T x C)."""
        p = self.unpack(self.params)
        x = descriptors @ p["w_enc"].T + p["b_enc"]
        logits = np.einsum("tcf,nf->ntc", p["w_dec"], x) + p["b_dec"][None]
        return x, softmax(logits)

    def decode(self, descriptors: np.ndarray) -> List[str]:
        """Greedy decoding, one token per position, stopping at ``<eos>``."""
        _, probs = self.probabilities(np.atleast_2d(descriptors))
        probs = probs.copy()
        probs[:, :, self.vocab.pad_id] = -1.0
        return [self.vocab.decode(row) for row in probs.argmax(axis=2)]

    def to_dict(self) -> dict:
        return {
            "inputDim": self.input_dim,
            "featureDim": self.feature_dim,
            "maxLength": self.max_length,
            "vocabulary": list(self.vocab.tokens),
            "params": [float(v) for v in self.params],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToyCaptioner":
        vocab = Vocabulary(data["vocabulary"])
        if vocab.tokens != list(data["vocabulary"]):
            raise ContractError("Vocabulary order in model file is not canonical")
        model = cls(data["inputDim"], data["featureDim"], vocab, data["maxLength"])
        params = np.asarray(data["params"], dtype=float)
        if params.shape != model.params.shape:
            raise ContractError("Parameter count does not match model shape")
        model.params = params
        return model


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def caption_loss(probs: np.ndarray, target: TokenTarget) -> float:
    """
    Cross-entropy ``-sum_t log p[t, y_t]`` over the unmasked positions.

    Raises:
        ContractError: If ``probs`` is not T x C with T matching the target
    """
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[0] != len(target.ids):
        raise ContractError(f"Probabilities of shape {probs.shape} do not match target length {len(target.ids)}")
    if np.any(target.ids >= probs.shape[1]):
        raise ContractError("Target id outside the vocabulary")
    mask = target.mask
    picked = probs[np.arange(len(target.ids))[mask], target.ids[mask]]
    return float(-np.sum(np.log(np.maximum(picked, PROB_FLOOR))))


def triplet_loss(x_a: np.ndarray, x_p: np.ndarray, x_n: np.ndarray, margin: float = 2.0) -> float:
    """``max(d(a, p) - d(a, n) + margin, 0)`` with Euclidean ``d``."""
    x_a, x_p, x_n = (np.asarray(v, dtype=float) for v in (x_a, x_p, x_n))
    if not x_a.shape == x_p.shape == x_n.shape:
        raise ContractError(f"Feature shapes differ: {x_a.shape}, {x_p.shape}, {x_n.shape}")
    return max(float(np.linalg.norm(x_a - x_p) - np.linalg.norm(x_a - x_n) + margin), 0.0)


def combined_loss(cap: float, tr: float, lambda_tr: float) -> float:
    return cap + lambda_tr * tr


def sample_triplets(
    instance_ids: Sequence[int], rng: np.random.Generator, anchors: Optional[Sequence[int]] = None
) -> TripletBatch:
    """
    One triplet per anchor: a uniformly drawn other view of the same instance
    and a uniformly drawn view of another instance.

    Anchors whose instance has a single view are skipped; with fewer than two
    instances the batch is empty.
    """
    ids = np.asarray(instance_ids, dtype=int)
    anchors = np.arange(len(ids)) if anchors is None else np.asarray(anchors, dtype=int)
    a_out, p_out, n_out = [], [], []
    skipped = 0
    for a in anchors:
        positives = np.flatnonzero((ids == ids[a]) & (np.arange(len(ids)) != a))
        negatives = np.flatnonzero(ids != ids[a])
        if len(positives) == 0 or len(negatives) == 0:
            skipped += 1
            continue
        a_out.append(a)
        p_out.append(positives[rng.integers(len(positives))])
        n_out.append(negatives[rng.integers(len(negatives))])
    if skipped:
        logger.debug("Skipped %d anchors without a positive or negative", skipped)
    a_out, p_out, n_out = (np.asarray(v, dtype=int) for v in (a_out, p_out, n_out))
    return TripletBatch(a_out, p_out, n_out, ids[a_out], skipped)


def loss_and_grad(
    model: ToyCaptioner,
    descriptors: np.ndarray,
    targets: np.ndarray,
    triplets: TripletBatch,
    cfg: LossConfig,
    rows: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray, Dict[str, float]]:
    """
    Batch objective ``mean caption loss + lambda * mean triplet loss`` and
    its gradient with respect to the flat parameters.

    ``rows`` (boolean, one per descriptor) restricts the caption term to a
    minibatch while triplets may reference any descriptor.
    """
    p = model.unpack(model.params)
    rows = np.ones(len(descriptors), dtype=bool) if rows is None else np.asarray(rows, dtype=bool)
    n = max(1, int(rows.sum()))
    x, probs = model.probabilities(descriptors)
    mask = (targets != model.vocab.pad_id) & rows[:, None]
    rows, cols = np.nonzero(mask)

    picked = probs[rows, cols, targets[rows, cols]]
    cap = float(-np.sum(np.log(np.maximum(picked, PROB_FLOOR)))) / n
    g_logits = probs.copy()
    g_logits[rows, cols, targets[rows, cols]] -= 1.0
    g_logits *= mask[:, :, None] / n

    g_x = np.einsum("ntc,tcf->nf", g_logits, p["w_dec"])
    tr = 0.0
    if len(triplets) and cfg.lambda_tr > 0:
        xa, xp, xn = x[triplets.anchors], x[triplets.positives], x[triplets.negatives]
        d_ap = np.linalg.norm(xa - xp, axis=1)
        d_an = np.linalg.norm(xa - xn, axis=1)
        hinge = d_ap - d_an + cfg.margin
        active = hinge > 0
        tr = float(np.mean(np.maximum(hinge, 0.0)))
        scale = cfg.lambda_tr / len(triplets)
        u_ap = (xa - xp) / np.maximum(d_ap, 1e-12)[:, None]
        u_an = (xa - xn) / np.maximum(d_an, 1e-12)[:, None]
        w = (active * scale)[:, None]
        np.add.at(g_x, triplets.anchors, w * (u_ap - u_an))
        np.add.at(g_x, triplets.positives, -w * u_ap)
        np.add.at(g_x, triplets.negatives, w * u_an)
    elif len(triplets):
        xa, xp, xn = x[triplets.anchors], x[triplets.positives], x[triplets.negatives]
        hinge = np.linalg.norm(xa - xp, axis=1) - np.linalg.norm(xa - xn, axis=1) + cfg.margin
        tr = float(np.mean(np.maximum(hinge, 0.0)))

    grads = {
        "w_enc": g_x.T @ descriptors,
        "b_enc": g_x.sum(axis=0),
        "w_dec": np.einsum("ntc,nf->tcf", g_logits, x),
        "b_dec": g_logits.sum(axis=0),
    }
    flat = np.concatenate([grads[name].ravel() for name, _ in model._shapes])
    total = combined_loss(cap, tr, cfg.lambda_tr)
    return total, flat, {"caption": cap, "triplet": tr}


@dataclass
class GradCheckResult:
    max_relative_error: Optional[float]
    skipped_reason: Optional[str] = None
    checked: int = 0


def grad_check(
    model: ToyCaptioner,
    descriptors: np.ndarray,
    targets: np.ndarray,
    triplets: TripletBatch,
    cfg: LossConfig,
    rng: Optional[np.random.Generator] = None,
    n_params: int = 64,
    h: float = 1e-5,
) -> GradCheckResult:
    """
    Compare the analytic gradient with central differences on a random
    parameter subset. Batches with a triplet at the hinge kink or with
    coincident features are skipped.
    """
    rng = rng or np.random.default_rng(0)
    if len(descriptors) == 0:
        return GradCheckResult(None, "empty batch")
    if len(triplets) and cfg.lambda_tr > 0:
        x = model.encode(descriptors)
        d_ap = np.linalg.norm(x[triplets.anchors] - x[triplets.positives], axis=1)
        d_an = np.linalg.norm(x[triplets.anchors] - x[triplets.negatives], axis=1)
        if np.any(d_ap < KINK_TOLERANCE) or np.any(d_an < KINK_TOLERANCE):
            return GradCheckResult(None, "zero-distance pair")
        if np.any(np.abs(d_ap - d_an + cfg.margin) <= KINK_TOLERANCE):
            return GradCheckResult(None, "triplet at hinge kink")

    _, analytic, _ = loss_and_grad(model, descriptors, targets, triplets, cfg)
    idx = rng.choice(len(model.params), size=min(n_params, len(model.params)), replace=False)
    probe = model.copy()
    worst = 0.0
    for i in idx:
        original = probe.params[i]
        probe.params[i] = original + h
        up, _, _ = loss_and_grad(probe, descriptors, targets, triplets, cfg)
        probe.params[i] = original - h
        down, _, _ = loss_and_grad(probe, descriptors, targets, triplets, cfg)
        probe.params[i] = original
        numeric = (up - down) / (2 * h)
        rel = abs(numeric - analytic[i]) / max(abs(numeric), abs(analytic[i]), 1e-3)
        worst = max(worst, rel)
    return GradCheckResult(worst, checked=len(idx))


class EarlyStopping:
    """Stops after ``patience`` consecutive epochs without a lower validation loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, epoch: int, loss: float) -> bool:
        """Record an epoch; True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


class _Sgd:
    def __init__(self, cfg: LossConfig):
        self.lr, self.wd = cfg.learning_rate, cfg.weight_decay

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return params - self.lr * (grad + self.wd * params)


class _AdamW:
    def __init__(self, cfg: LossConfig, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.wd = cfg.learning_rate, cfg.weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m, self.v = np.zeros_like(params), np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.wd * params)


def split_by_instance(
    dataset: ToyDataset, val_fraction: float, rng: np.random.Generator
) -> Tuple[ToyDataset, ToyDataset]:
    """Hold out whole instances; with a single instance everything is training data."""
    instances = np.unique(dataset.instance_ids)
    n_val = int(round(len(instances) * val_fraction)) if len(instances) > 1 else 0
    n_val = min(n_val, len(instances) - 1)
    val_ids = set(rng.permutation(instances)[:n_val].tolist())
    val_rows = [i for i, k in enumerate(dataset.instance_ids) if k in val_ids]
    train_rows = [i for i, k in enumerate(dataset.instance_ids) if k not in val_ids]
    return dataset.subset(train_rows), dataset.subset(val_rows)


def _evaluate(model: ToyCaptioner, data: ToyDataset, cfg: LossConfig, seed: int) -> float:
    triplets = sample_triplets(data.instance_ids, np.random.default_rng(seed))
    loss, _, _ = loss_and_grad(model, data.descriptors, data.targets, triplets, cfg)
    return loss


def finetune(
    model: ToyCaptioner, dataset: ToyDataset, cfg: LossConfig, seed: int = 0
) -> Tuple[ToyCaptioner, List[Dict[str, float]]]:
    """
    Minibatch training on caption loss plus weighted triplet loss.

    The dataset is split into train and validation instances; training stops
    early after ``cfg.patience`` epochs without a lower validation loss and
    the parameters of the best epoch are returned. History row 0 holds the
    losses before training.

    Raises:
        EmptyDatasetError: If the dataset has no views
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("Fine-tuning dataset is empty")
    rng = np.random.default_rng(seed)
    train, val = split_by_instance(dataset, cfg.val_fraction, rng)
    if len(val) == 0:
        logger.warning("No validation instances; early stopping monitors the training loss")
    optimizer = _AdamW(cfg) if cfg.optimizer == "adamw" else _Sgd(cfg)
    model = model.copy()

    def record(epoch: int) -> Dict[str, float]:
        row = {"epoch": epoch, "train_loss": _evaluate(model, train, cfg, seed)}
        row["val_loss"] = _evaluate(model, val, cfg, seed) if len(val) else row["train_loss"]
        return row

    history = [record(0)]
    stopper = EarlyStopping(cfg.patience)
    best_params = model.params.copy()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            rows = np.zeros(len(train), dtype=bool)
            rows[batch] = True
            # positives and negatives are drawn from the whole training split
            triplets = sample_triplets(train.instance_ids, rng, anchors=batch)
            _, grad, _ = loss_and_grad(model, train.descriptors, train.targets, triplets, cfg, rows=rows)
            model.params = optimizer.step(model.params, grad)
        row = record(epoch)
        history.append(row)
        logger.debug("Epoch %d: train %.4f val %.4f", epoch, row["train_loss"], row["val_loss"])
        if row["val_loss"] < stopper.best:
            best_params = model.params.copy()
        if stopper.step(epoch, row["val_loss"]):
            logger.info("Early stopping at epoch %d (best epoch %d)", epoch, stopper.best_epoch)
            break
    model.params = best_params
    return model, history


@dataclass
class ConsistencyReport:
    """Per-instance mean pairwise cosine of decoded captions with quartiles."""

    per_instance: Dict[int, float] = field(default_factory=dict)
    decoded: Dict[int, List[str]] = field(default_factory=dict)

    @property
    def quartiles(self) -> Optional[Tuple[float, float, float]]:
        if not self.per_instance:
            return None
        q1, q2, q3 = np.percentile(list(self.per_instance.values()), [25, 50, 75])
        return float(q1), float(q2), float(q3)

    @property
    def median(self) -> Optional[float]:
        q = self.quartiles
        return q[1] if q else None

    def to_dict(self) -> dict:
        values = list(self.per_instance.values())
        summary = None
        if values:
            q1, q2, q3 = self.quartiles
            summary = {"min": min(values), "q1": q1, "median": q2, "q3": q3, "max": max(values), "n": len(values)}
        return {
            "summary": summary,
            "perInstance": {str(k): v for k, v in sorted(self.per_instance.items())},
            "decoded": {str(k): v for k, v in sorted(self.decoded.items())},
        }


def consistency_score(
    model: ToyCaptioner, views: Sequence[DatasetView], embedder: Optional[Embedder] = None
) -> ConsistencyReport:
    """
    Decode every view and score each instance with at least two views by the
    mean pairwise cosine of its decoded-caption embeddings. Identical decoded
    captions count as similarity 1.
    """
    embedder = embedder or HashingEmbedder()
    grouped: Dict[int, List[DatasetView]] = {}
    for view in views:
        grouped.setdefault(view.instance_id, []).append(view)
    report = ConsistencyReport()
    for instance_id, members in sorted(grouped.items()):
        if len(members) < 2:
            continue
        texts = model.decode(np.stack([np.asarray(v.descriptor, dtype=float) for v in members]))
        sims = [1.0 if a == b else cosine(embedder(a), embedder(b)) for a, b in combinations(texts, 2)]
        report.per_instance[instance_id] = float(np.mean(sims))
        report.decoded[instance_id] = texts
    if not report.per_instance:
        logger.warning("No instance has two or more views; consistency distribution is empty")
    return report
