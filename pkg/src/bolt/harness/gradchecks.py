"""Finite-difference checks for every differentiable op kind and the end-to-end energy.

Each case builds ``(f, x)`` from a seeded generator; ``run_gradchecks`` evaluates
every case over several seeds with :func:`bolt.autodiff.grad_check`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import autodiff as ad
from ..autodiff import GradCheckReport, Tensor, grad_check
from ..decoder import BiasState, DecodeConfig, rollout
from ..discriminator import AttributeClassifier, ClassifierConfig, p_attribute
from ..energy import EnergyModels, EnergySpec, e_fluent, total_energy
from ..lm import LMConfig, TransformerLM, Vocab, forward_logits

Case = Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], np.ndarray]]


def _const(rng, *shape):
    return Tensor(rng.normal(size=shape))


def _case_matmul(rng):
    w = _const(rng, 4, 3)
    return (lambda x: ad.tanh(x @ w).sum()), rng.normal(size=(2, 4))


def _case_matmul_right(rng):
    a = _const(rng, 2, 5, 4)
    return (lambda w: ad.tanh(a @ w).sum()), rng.normal(size=(4, 3))


def _case_embedding(rng):
    ids = rng.integers(0, 6, size=5)
    rows = Tensor(ad.one_hot(ids, 6))
    return (lambda emb: ad.tanh(rows @ emb).sum()), rng.normal(size=(6, 3))


def _case_add(rng):
    b = _const(rng, 3)
    return (lambda x: ad.tanh(x + b).sum()), rng.normal(size=(2, 3))


def _case_sub(rng):
    b = _const(rng, 2, 3)
    return (lambda x: ad.tanh(b - x * 2.0).sum()), rng.normal(size=(2, 3))


def _case_mul(rng):
    b = _const(rng, 2, 3)
    return (lambda x: (x * b * x).sum()), rng.normal(size=(2, 3))


def _case_scale(rng):
    return (lambda x: ad.tanh(ad.scale(x, -1.7)).sum()), rng.normal(size=(4,))


def _case_div(rng):
    b = Tensor(rng.uniform(1.0, 2.0, size=(3,)))
    return (lambda x: (b / (x * x + 1.0)).sum()), rng.normal(size=(3,))


def _case_exp_log(rng):
    return (lambda x: ad.log(ad.exp(x * 0.5) + 1.0).sum()), rng.normal(size=(5,))


def _case_gelu(rng):
    return (lambda x: (ad.gelu(x) * ad.gelu(x)).sum()), rng.normal(size=(6,))


def _case_minimum(rng):
    # keep entries away from the kink at the cap
    x = rng.uniform(0.0, 2.0, size=6)
    x[np.abs(x - 1.0) < 0.05] += 0.2
    return (lambda t: (ad.minimum(t, 1.0) * t).sum()), x


def _case_sum_mean(rng):
    return (lambda x: (x.sum(axis=0) * x.mean(axis=1, keepdims=True)).sum()), rng.normal(size=(3, 4))


def _case_max(rng):
    return (lambda x: ad.max_(x, axis=-1).sum()), rng.normal(size=(3, 5))


def _case_softmax(rng):
    c = _const(rng, 3, 5)
    return (lambda x: (ad.softmax(x) * c).sum()), rng.normal(size=(3, 5))


def _case_log_softmax(rng):
    c = _const(rng, 3, 5)
    return (lambda x: (ad.log_softmax(x) * c).sum()), rng.normal(size=(3, 5))


def _case_layer_norm(rng):
    g, b, c = _const(rng, 6), _const(rng, 6), _const(rng, 2, 6)
    return (lambda x: (ad.layer_norm(x, g, b) * c).sum()), rng.normal(size=(2, 6))


def _case_layer_norm_gain(rng):
    x, b, c = _const(rng, 2, 6), _const(rng, 6), _const(rng, 2, 6)
    return (lambda g: (ad.layer_norm(x, g, b) * c).sum()), rng.normal(size=(6,))


def _case_cross_entropy(rng):
    x = _const(rng, 4, 3)
    t = rng.integers(0, 5, size=4)
    return (lambda w: ad.cross_entropy(x @ w, t)), rng.normal(size=(3, 5))


def _case_concat(rng):
    b, c = _const(rng, 2, 3), _const(rng, 4, 3)
    return (lambda x: (ad.concat([x, b], axis=0) * c).sum()), rng.normal(size=(2, 3))


def _case_slice(rng):
    c = _const(rng, 2, 3)
    return (lambda x: (x[1:3, ::2] * c).sum() + x[0, 1] * x[3, 0]), rng.normal(size=(4, 5))


def _case_gather(rng):
    idx = rng.integers(0, 5, size=7)
    return (lambda x: (ad.take(x, idx) * ad.take(x, idx)).sum()), rng.normal(size=(5, 2))


def _case_reshape_transpose(rng):
    c = _const(rng, 3, 2, 2)
    return (lambda x: (x.reshape(2, 2, 3).transpose(2, 0, 1) * c).sum()), rng.normal(size=(4, 3))


# -- model-level cases ---------------------------------------------------------------

def tiny_lm(seed: int, vocab_size: int = 8, d_model: int = 8, max_len: int = 12) -> TransformerLM:
    vocab = Vocab([f"w{i}" for i in range(vocab_size - 4)])
    lm = TransformerLM(LMConfig(len(vocab), d_model=d_model, n_layers=2, n_heads=2, max_len=max_len),
                       vocab, seed=seed)
    # untrained weights are tiny; spread them so every path carries signal
    rng = np.random.default_rng(seed + 1000)
    for name, p in lm.params.items():
        if not name.endswith((".g", ".b")):
            p.data = rng.normal(0, 0.5, p.shape)
    return lm


def _case_lm_prefix(rng):
    lm = tiny_lm(int(rng.integers(1 << 30)))
    c = _const(rng, lm.config.vocab_size)
    return (lambda x: (ad.tanh(forward_logits(lm, x)) * c).sum()), rng.dirichlet(np.ones(lm.config.vocab_size), size=3)


def _case_classifier(rng):
    lm = tiny_lm(int(rng.integers(1 << 30)))
    clf = AttributeClassifier(lm.vocab, ("a", "b"), ClassifierConfig(d_model=6, hidden=5),
                              seed=int(rng.integers(1 << 30)))
    for p in clf.params.values():
        p.data = rng.normal(0, 0.7, p.shape)
    return (lambda x: p_attribute(clf, x, "a")), rng.dirichlet(np.ones(lm.config.vocab_size), size=4)


def _case_fluency(rng):
    lm = tiny_lm(int(rng.integers(1 << 30)))
    return (lambda x: e_fluent(lm, x, prompt_len=2)), rng.dirichlet(np.ones(lm.config.vocab_size), size=5)


def relaxed_energy_case(rng, kind: str = "hard", length: int = 3):
    """Energy of a softmax-relaxed rollout as a function of the bias parameters ``h``."""
    lm = tiny_lm(int(rng.integers(1 << 30)))
    clf = AttributeClassifier(lm.vocab, ("a", "b"), ClassifierConfig(d_model=6, hidden=5),
                              seed=int(rng.integers(1 << 30)))
    for p in clf.params.values():
        p.data = rng.normal(0, 0.7, p.shape)
    spec = EnergySpec.soft("a") if kind == "soft" else EnergySpec.hard(["w1", "w2"], stop="none")
    config = DecodeConfig(length=length, lm_input_grad=True)
    prompt = [4, 5]
    models = EnergyModels(lm, clf)

    def f(h: Tensor) -> Tensor:
        bias = BiasState(h, None, None)
        ro = rollout(lm, bias, prompt, config, relaxed=True)
        return total_energy(spec, models, ro.ybar, len(prompt))[0]

    return f, rng.normal(0, 0.25, size=(length, lm.config.d_model))


OP_CASES: dict[str, Case] = {
    "matmul": _case_matmul,
    "matmul_rhs": _case_matmul_right,
    "embedding": _case_embedding,
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "scale": _case_scale,
    "reciprocal": _case_div,
    "exp_log": _case_exp_log,
    "tanh_gelu": _case_gelu,
    "minimum": _case_minimum,
    "sum_mean": _case_sum_mean,
    "max": _case_max,
    "softmax": _case_softmax,
    "log_softmax": _case_log_softmax,
    "layer_norm": _case_layer_norm,
    "layer_norm_gain": _case_layer_norm_gain,
    "cross_entropy": _case_cross_entropy,
    "concat": _case_concat,
    "slice": _case_slice,
    "gather": _case_gather,
    "reshape_transpose": _case_reshape_transpose,
    "lm_prefix": _case_lm_prefix,
    "classifier": _case_classifier,
    "fluency": _case_fluency,
    "energy_hard": lambda rng: relaxed_energy_case(rng, "hard"),
    "energy_soft": lambda rng: relaxed_energy_case(rng, "soft"),
}


@dataclass
class GradCheckRow:
    case: str
    seed: int
    report: GradCheckReport


def run_gradchecks(seeds=range(10), cases: dict[str, Case] | None = None,
                   tol: float = 1e-4) -> tuple[list[GradCheckRow], float]:
    """Run every case for every seed; returns the rows and the elapsed seconds."""
    cases = cases or OP_CASES
    start = time.perf_counter()
    rows = []
    for name, build in cases.items():
        for seed in seeds:
            f, x = build(np.random.default_rng([seed, len(name)]))
            rows.append(GradCheckRow(name, seed, grad_check(f, x, tol=tol)))
    return rows, time.perf_counter() - start
