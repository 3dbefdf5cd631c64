"""Differentiable attribute classifier over one-hot token rows.

The classifier embeds tokens with its own ``V x d`` matrix over the *generator's*
vocabulary, mean-pools over positions and applies a one-hidden-layer MLP. Because
the input is a one-hot matrix, ``p(c | y)`` is differentiable in the token rows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tape, Tensor
from .lm import Vocab, no_tape
from .optim import Adam


@dataclass
class LabeledCorpus:
    pairs: list[tuple[str, str]]
    labels: tuple[str, ...]

    def __post_init__(self):
        for text, label in self.pairs:
            if label not in self.labels:
                raise ValueError(f"label {label!r} not in label set {self.labels}")

    @property
    def texts(self) -> list[str]:
        return [t for t, _ in self.pairs]

    def present_labels(self) -> set[str]:
        return {label for _, label in self.pairs}

    def split(self, frac: float = 0.2) -> tuple["LabeledCorpus", "LabeledCorpus"]:
        n_held = max(1, int(len(self.pairs) * frac))
        return (LabeledCorpus(self.pairs[:-n_held], self.labels),
                LabeledCorpus(self.pairs[-n_held:], self.labels))


@dataclass
class ClassifierConfig:
    d_model: int = 32
    hidden: int = 32
    epochs: int = 20
    lr: float = 1e-2
    batch_size: int = 32
    heldout_frac: float = 0.2
    weight_decay: float = 1e-3


class AttributeClassifier:
    def __init__(self, vocab: Vocab, labels: Sequence[str], config: ClassifierConfig | None = None,
                 params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.vocab = vocab
        self.labels = tuple(labels)
        self.config = config or ClassifierConfig()
        c, V, C = self.config, len(vocab), len(self.labels)
        if params is None:
            rng = np.random.default_rng(seed)
            params = {
                "emb": rng.normal(0, 0.1, (V, c.d_model)),
                "fc.w": rng.normal(0, 1 / math.sqrt(c.d_model), (c.d_model, c.hidden)),
                "fc.b": np.zeros(c.hidden),
                "out.w": rng.normal(0, 1 / math.sqrt(c.hidden), (c.hidden, C)),
                "out.b": np.zeros(C),
            }
        if params["emb"].shape[0] != V:
            raise ValueError(f"embedding rows {params['emb'].shape[0]} != vocabulary size {V}")
        self.params = {k: Tensor(np.array(v, dtype=np.float64)) for k, v in params.items()}

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def requires_grad_(self, flag: bool = True) -> "AttributeClassifier":
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = np.zeros_like(p.data) if flag else None
        return self

    def class_index(self, c: str) -> int:
        try:
            return self.labels.index(c)
        except ValueError:
            raise ValueError(f"unknown class {c!r}; classes are {self.labels}") from None

    def logits(self, x: Tensor, lengths: np.ndarray | None = None) -> Tensor:
        """Class logits for one-hot rows ``(n, V)`` or a zero-padded batch ``(B, n, V)``."""
        if x.shape[-1] != len(self.vocab):
            raise ad.ShapeError(f"classifier: input last dim {x.shape[-1]} != vocab size {len(self.vocab)}")
        if x.shape[-2] < 1:
            raise ValueError("classifier needs at least one token")
        P = self.params
        emb = x @ P["emb"]
        if lengths is None:
            pooled = emb.mean(axis=-2, keepdims=True)
        else:
            pooled = emb.sum(axis=-2) * Tensor(1.0 / np.asarray(lengths, dtype=np.float64)[:, None])
        h = ad.tanh(pooled @ P["fc.w"] + P["fc.b"])
        out = h @ P["out.w"] + P["out.b"]
        if lengths is None:
            # (..., 1, C) -> (..., C)
            out = out.reshape(*out.shape[:-2], out.shape[-1])
        return out

    def probs(self, x: Tensor) -> Tensor:
        return ad.softmax(self.logits(x))

    def predict_ids(self, ids: Sequence[int]) -> np.ndarray:
        """Class probabilities for one id sequence (inference only)."""
        self.vocab.check_ids(ids)
        with no_tape():
            return self.probs(Tensor(ad.one_hot(ids, len(self.vocab)))).data

    def score(self, ids: Sequence[int], c: str) -> float:
        return float(self.predict_ids(ids)[self.class_index(c)])

    def save(self, path, meta: dict | None = None) -> Path:
        cfg = asdict(self.config) | {"labels": list(self.labels)}
        return checkpoint.save(path, "classifier", cfg, self.vocab.tokens,
                               {k: v.data for k, v in self.params.items()}, meta)

    @classmethod
    def load(cls, path) -> "AttributeClassifier":
        header, params = checkpoint.load(path, kind="classifier")
        cfg = dict(header["config"])
        labels = cfg.pop("labels")
        return cls(Vocab(header["vocab"]), labels, ClassifierConfig(**cfg), params)


def p_attribute(clf: AttributeClassifier, ybar: Tensor, c: str) -> Tensor:
    """``p(c | y)`` as a scalar tape node, differentiable in the token rows."""
    k = clf.class_index(c)
    return clf.probs(ybar)[k]


def _encode_batch(clf: AttributeClassifier, seqs: list[list[int]]) -> tuple[Tensor, np.ndarray]:
    n = max(len(s) for s in seqs)
    x = np.zeros((len(seqs), n, len(clf.vocab)))
    for i, s in enumerate(seqs):
        x[i, np.arange(len(s)), s] = 1.0
    return Tensor(x), np.array([len(s) for s in seqs])


def accuracy(clf: AttributeClassifier, corpus: LabeledCorpus) -> float:
    if not corpus.pairs:
        raise ValueError("accuracy of an empty corpus")
    seqs = [clf.vocab.encode(t) for t in corpus.texts]
    y = np.array([clf.class_index(label) for _, label in corpus.pairs])
    with no_tape():
        preds = []
        for s in range(0, len(seqs), 256):
            x, lengths = _encode_batch(clf, seqs[s : s + 256])
            preds.append(np.argmax(clf.logits(x, lengths).data, axis=-1))
    return float((np.concatenate(preds) == y).mean())


@dataclass
class ClassifierReport:
    heldout_accuracy: float
    train_accuracy: float
    n_train: int
    n_heldout: int


def train_classifier(corpus: LabeledCorpus, vocab: Vocab, config: ClassifierConfig | None = None,
                     seed: int = 0, checkpoint_path=None) -> tuple[AttributeClassifier, ClassifierReport]:
    """Cross-entropy training on a shuffled copy of ``corpus``; the tail split is held out."""
    config = config or ClassifierConfig()
    if not corpus.pairs:
        raise ValueError("labeled corpus is empty")
    if len(corpus.present_labels()) < 2:
        raise ValueError(f"need at least two classes, corpus only has {sorted(corpus.present_labels())}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus.pairs))
    shuffled = LabeledCorpus([corpus.pairs[i] for i in order], corpus.labels)
    train, held = shuffled.split(config.heldout_frac)

    clf = AttributeClassifier(vocab, corpus.labels, config, seed=seed)
    seqs = [vocab.encode(t) for t in train.texts]
    y = np.array([clf.class_index(label) for _, label in train.pairs])
    clf.requires_grad_(True)
    opt = Adam(clf.parameters(), lr=config.lr)
    try:
        for _ in range(config.epochs):
            perm = rng.permutation(len(seqs))
            for s in range(0, len(perm), config.batch_size):
                idx = perm[s : s + config.batch_size]
                x, lengths = _encode_batch(clf, [seqs[i] for i in idx])
                opt.zero_grad()
                with Tape() as tape:
                    loss = ad.cross_entropy(clf.logits(x, lengths), y[idx])
                    if config.weight_decay > 0:
                        # L2 on the weight matrices keeps logit margins finite on separable data
                        for name in ("emb", "fc.w", "out.w"):
                            w = clf.params[name]
                            loss = loss + (w * w).sum() * (0.5 * config.weight_decay)
                    tape.backward(loss)
                opt.step()
    finally:
        clf.requires_grad_(False)
    report = ClassifierReport(accuracy(clf, held), accuracy(clf, train), len(train.pairs), len(held.pairs))
    if checkpoint_path:
        clf.save(checkpoint_path, {"heldout_accuracy": report.heldout_accuracy, "seed": seed})
    return clf, report
