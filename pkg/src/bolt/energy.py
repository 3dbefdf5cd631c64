"""Constraint energies over one-hot token rows and their weighted combinations.

All functions take ``ybar``, the ``(P + L, V)`` matrix of prompt rows followed by
generated rows, plus ``prompt_len = P``. Lower energy means the constraint is
better satisfied.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .discriminator import AttributeClassifier, p_attribute
from .lm import TransformerLM, Vocab

SOFT, HARD = "soft", "hard"
STOP_NONE = "none"
STOP_ATTRIBUTE = "attribute_threshold"
STOP_ANY = "any_keyword"
STOP_ALL = "all_keywords"
_STOP_RULES = (STOP_NONE, STOP_ATTRIBUTE, STOP_ANY, STOP_ALL)


@dataclass
class EnergySpec:
    """Declarative objective: ``E_soft + lam * E_fluent`` or ``E_hard + lam * E_fluent``.

    ``stop_threshold`` is used by the attribute rule: stop once the probability
    mass *outside* the target class drops below it. ``fluency_form="log"``
    swaps the summed probabilities for summed log-probabilities; it is an
    opt-in variant, the default sums raw probabilities.
    """

    kind: str
    target: str | None = None
    keywords: list[str] = field(default_factory=list)
    lam: float = 0.1
    stop_rule: str = STOP_NONE
    stop_threshold: float = 0.01
    fluency_form: str = "prob"

    def __post_init__(self):
        if self.kind not in (SOFT, HARD):
            raise ValueError(f"energy kind must be {SOFT!r} or {HARD!r}, got {self.kind!r}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.kind == SOFT and self.target is None:
            raise ValueError("soft energy needs a target class")
        if self.kind == HARD and not self.keywords:
            raise ValueError("hard energy needs at least one keyword")
        if self.stop_rule not in _STOP_RULES:
            raise ValueError(f"unknown stop rule {self.stop_rule!r}")
        if self.stop_rule == STOP_ATTRIBUTE and self.kind != SOFT:
            raise ValueError("attribute stop rule needs a soft energy")
        if self.stop_rule in (STOP_ANY, STOP_ALL) and self.kind != HARD:
            raise ValueError("keyword stop rules need a hard energy")
        if self.fluency_form not in ("prob", "log"):
            raise ValueError(f"fluency_form must be 'prob' or 'log', got {self.fluency_form!r}")

    @classmethod
    def soft(cls, target: str, lam: float = 0.1, stop_threshold: float | None = None) -> "EnergySpec":
        if stop_threshold is None:
            return cls(SOFT, target=target, lam=lam)
        return cls(SOFT, target=target, lam=lam, stop_rule=STOP_ATTRIBUTE, stop_threshold=stop_threshold)

    @classmethod
    def hard(cls, keywords: Sequence[str], lam: float = 0.1, stop: str = STOP_ANY) -> "EnergySpec":
        return cls(HARD, keywords=list(keywords), lam=lam, stop_rule=stop)

    def validate(self, vocab: Vocab, classifier: AttributeClassifier | None = None) -> None:
        missing = [w for w in self.keywords if w not in vocab]
        if missing:
            raise ValueError(f"keywords not in vocabulary: {missing}")
        if self.kind == SOFT:
            if classifier is None:
                raise ValueError("soft energy needs a classifier")
            classifier.class_index(self.target)
            if classifier.vocab != vocab:
                raise ValueError("classifier vocabulary differs from the generator's")

    def keyword_ids(self, vocab: Vocab) -> list[int]:
        return [vocab.id(w) for w in self.keywords]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnergySpec":
        return cls(**d)


@dataclass
class EnergyModels:
    fluency_lm: TransformerLM
    classifier: AttributeClassifier | None = None


def e_soft(clf: AttributeClassifier, ybar: Tensor, c: str) -> Tensor:
    return -p_attribute(clf, ybar, c)


def diff_bleu(ybar_gen: Tensor, keyword_ids: Sequence[int]) -> Tensor:
    """Clipped unigram keyword coverage: mean over keywords of ``min(1, matched mass)``."""
    if len(keyword_ids) < 1:
        raise ValueError("diff_bleu needs at least one keyword")
    if ybar_gen.shape[0] < 1:
        raise ValueError("diff_bleu needs at least one generated position")
    mass = ybar_gen[:, list(keyword_ids)].sum(axis=0)
    return ad.minimum(mass, 1.0).mean()


def e_hard(ybar_gen: Tensor, keyword_ids: Sequence[int]) -> Tensor:
    return -diff_bleu(ybar_gen, keyword_ids)


def realized_probs(judge: TransformerLM, ybar: Tensor, prompt_len: int) -> Tensor:
    """Judge probability of each generated row's token given the rows before it, shape ``(L,)``."""
    if prompt_len < 1:
        raise ValueError("fluency needs a non-empty prompt to condition the first token on")
    n = ybar.shape[0]
    if n <= prompt_len:
        raise ValueError("no generated positions to score")
    logits = judge.forward(ybar[: n - 1])[prompt_len - 1 :]
    return (ad.softmax(logits) * ybar[prompt_len:]).sum(axis=-1)


def e_fluent(judge: TransformerLM, ybar: Tensor, prompt_len: int, form: str = "prob") -> Tensor:
    p = realized_probs(judge, ybar, prompt_len)
    if form == "log":
        return -ad.log(p).sum()
    return -p.sum()


def total_energy(spec: EnergySpec, models: EnergyModels, ybar: Tensor,
                 prompt_len: int) -> tuple[Tensor, dict[str, float]]:
    """Scalar objective plus its components (as floats) for the trace."""
    gen = ybar[prompt_len:]
    if spec.kind == SOFT:
        constraint = e_soft(models.classifier, ybar, spec.target)
        name = "soft"
    else:
        constraint = e_hard(gen, spec.keyword_ids(models.fluency_lm.vocab))
        name = "hard"
    components = {name: constraint.item()}
    if spec.lam == 0.0:
        return constraint, components
    fluent = e_fluent(models.fluency_lm, ybar, prompt_len, spec.fluency_form)
    components["fluent"] = fluent.item()
    return constraint + fluent * spec.lam, components


def satisfied(spec: EnergySpec, generated_ids: Sequence[int], components: dict[str, float],
              vocab: Vocab) -> bool:
    """Early-stop predicate evaluated on the realized tokens of one iteration."""
    if spec.stop_rule == STOP_NONE:
        return False
    if spec.stop_rule == STOP_ATTRIBUTE:
        return 1.0 + components["soft"] < spec.stop_threshold
    present = set(generated_ids)
    hits = [vocab.id(w) in present for w in spec.keywords]
    return any(hits) if spec.stop_rule == STOP_ANY else all(hits)


def keyword_fraction(generated_ids: Sequence[int], keyword_ids: Sequence[int]) -> float:
    present = set(int(i) for i in generated_ids)
    return float(np.mean([k in present for k in keyword_ids]))
