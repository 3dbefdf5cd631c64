"""Bias-over-logits decoding and a Langevin-on-logits baseline.

Each decoding step adds ``w_t * (h_t @ head)`` to the language model's
(repetition-penalized) logits and feeds the straight-through one-hot of the
result back into the model, so one tape covers the whole rollout and the
energy gradient reaches the bias parameters ``h``.

By default the model's own logits are treated as constants of the rollout:
the energy reaches ``h_t`` through the token rows it scores, not through the
model's dependence on earlier rows. Backpropagating through that dependence
(``lm_input_grad=True``) multiplies the gradient by the model's input Jacobian
once per later step, which grows geometrically with the distance and swamps
the direct term for early positions.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .energy import EnergyModels, EnergySpec, satisfied, total_energy
from .lm import TransformerLM, apply_repetition_penalty, no_tape
from .optim import Adam

DECREASING, INCREASING, CONSTANT, LEARNED = "decreasing", "increasing", "constant", "learned"
SCHEDULES = (INCREASING, DECREASING, CONSTANT, LEARNED)


@dataclass
class DecodeConfig:
    length: int = 12
    max_iterations: int = 8
    lr: float = 0.025
    init_std: float = 0.25
    schedule: str = DECREASING
    repetition_penalty: float = 1.2
    seed: int = 0
    lm_input_grad: bool = False

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.init_std < 0:
            raise ValueError("init_std must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")


@dataclass
class LangevinConfig:
    length: int = 12
    max_iterations: int = 400
    step_size: float = 0.1
    noise_scale: float = 0.1
    noise_decay: float = 0.99
    repetition_penalty: float = 1.2
    seed: int = 0
    relaxation: str = "softmax"

    def __post_init__(self):
        if self.length < 1 or self.max_iterations < 0:
            raise ValueError("length must be >= 1 and max_iterations >= 0")
        if self.step_size <= 0 or self.noise_scale < 0 or not 0 < self.noise_decay <= 1:
            raise ValueError("step_size > 0, noise_scale >= 0 and 0 < noise_decay <= 1 are required")
        if self.relaxation not in ("softmax", "identity"):
            raise ValueError(f"relaxation must be 'softmax' or 'identity', got {self.relaxation!r}")


def weight_schedule(kind: str, t: int, length: int, learned: Tensor | None = None):
    """Bias weight for 0-based step ``t``; ``t == length`` is allowed as the endpoint."""
    if not 0 <= t <= length:
        raise ValueError(f"step {t} outside [0, {length}]")
    if kind == DECREASING:
        return 1.0 - t / length
    if kind == INCREASING:
        return t / length
    if kind == CONSTANT:
        return 1.0
    if kind == LEARNED:
        if learned is None:
            raise ValueError("learned schedule needs its weight vector")
        if t >= length:
            raise ValueError("learned schedule has no entry at t == length")
        return learned[t]
    raise ValueError(f"unknown schedule {kind!r}")


def adjust_logits(y_lm: Tensor, y_bias: Tensor, w) -> Tensor:
    if y_lm.shape != y_bias.shape:
        raise ad.ShapeError(f"adjust_logits: model logits {y_lm.shape} vs bias {y_bias.shape}")
    return y_lm + y_bias * w


@dataclass
class BiasState:
    """Tunable bias parameters ``h`` (``L x d``), optional learned weights and their optimizer."""

    h: Tensor
    w: Tensor | None
    optimizer: Adam

    @classmethod
    def init(cls, length: int, d_model: int, config: DecodeConfig, rng: np.random.Generator) -> "BiasState":
        h = Tensor(rng.normal(0.0, config.init_std, (length, d_model)) if config.init_std > 0
                   else np.zeros((length, d_model)), requires_grad=True)
        w = Tensor(np.ones(length), requires_grad=True) if config.schedule == LEARNED else None
        params = [h] + ([w] if w is not None else [])
        return cls(h, w, Adam(params, lr=config.lr))


@dataclass
class Rollout:
    ybar: Tensor            # (P + L, V): prompt rows then generated rows
    ids: list[int]          # generated token ids
    weights: list[float]
    bias_logits: np.ndarray  # (L, V) realized y^b rows, for recomputation checks


def rollout(lm: TransformerLM, bias: BiasState, prompt: Sequence[int], config: DecodeConfig,
            relaxed: bool = False, temperature: float = 1.0) -> Rollout:
    """Autoregressive decode of ``config.length`` tokens under the current biases.

    ``relaxed=True`` feeds ``softmax(y_t / temperature)`` forward instead of the
    straight-through one-hot; that path is smooth and is what finite-difference
    checks use (together with ``lm_input_grad=True``, since otherwise the tape
    deliberately ignores the model's dependence on its inputs). Tokens are the
    argmax of the adjusted logits either way.
    """
    L, V = config.length, lm.config.vocab_size
    if bias.h.shape != (L, lm.config.d_model):
        raise ad.ShapeError(f"rollout: bias shape {bias.h.shape} != {(L, lm.config.d_model)}")
    prompt = list(prompt)
    if not prompt:
        raise ValueError("rollout needs a non-empty prompt")
    if len(prompt) + L > lm.config.max_len:
        raise ValueError(f"prompt of {len(prompt)} tokens plus {L} new tokens exceeds max_len")
    rows = [lm.one_hot(prompt)]
    history = list(prompt)
    y_bias = bias.h @ lm.head
    ids, weights = [], []
    for t in range(L):
        if config.lm_input_grad:
            x = rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)
            y_lm = lm.forward(x)[x.shape[0] - 1]
        else:
            with no_tape():
                x = Tensor(np.concatenate([r.data for r in rows], axis=0))
                y_lm = Tensor(lm.forward(x).data[-1])
        y_lm = apply_repetition_penalty(y_lm, history, config.repetition_penalty)
        w = weight_schedule(config.schedule, t, L, bias.w)
        y = adjust_logits(y_lm, y_bias[t], w)
        if relaxed:
            ybar_t = ad.softmax(y * (1.0 / temperature))
        else:
            ybar_t = ad.ste_one_hot(y)
        tok = int(np.argmax(y.data))
        rows.append(ybar_t.reshape(1, V))
        history.append(tok)
        ids.append(tok)
        weights.append(float(w.item() if isinstance(w, Tensor) else w))
    return Rollout(ad.concat(rows, axis=0), ids, weights, y_bias.data.copy())


@dataclass
class IterationRecord:
    iteration: int
    ids: list[int]
    energy: float
    components: dict[str, float]
    stopped: bool
    seconds: float
    discarded: bool = False
    weights: list[float] = field(default_factory=list)


@dataclass
class DecodeTrace:
    records: list[IterationRecord] = field(default_factory=list)
    best_index: int | None = None
    failed: bool = False

    @property
    def energies(self) -> list[float]:
        return [r.energy for r in self.records]

    @property
    def stopped(self) -> bool:
        return bool(self.records) and self.records[-1].stopped

    @property
    def iterations_to_success(self) -> int | None:
        """Rollouts evaluated up to and including the one that met the stop rule."""
        return len(self.records) if self.stopped else None

    @property
    def seconds(self) -> float:
        return sum(r.seconds for r in self.records)

    def summary(self) -> dict:
        return {
            "iterations": len(self.records),
            "best_index": self.best_index,
            "stopped": self.stopped,
            "iterations_to_success": self.iterations_to_success,
            "energies": self.energies,
            "best_energy": None if self.best_index is None else self.records[self.best_index].energy,
            "best_components": None if self.best_index is None else self.records[self.best_index].components,
            "failed": self.failed,
        }


@dataclass
class DecodeResult:
    text: str
    ids: list[int]
    trace: DecodeTrace
    seconds: float

    @property
    def failed(self) -> bool:
        return self.trace.failed

    @property
    def weights(self) -> list[float]:
        """Bias weights applied in the returned rollout (empty for the Langevin baseline)."""
        if self.trace.best_index is None:
            return []
        return list(self.trace.records[self.trace.best_index].weights)


def _select_best(trace: DecodeTrace) -> None:
    valid = [(r.energy, i) for i, r in enumerate(trace.records) if not r.discarded]
    if valid:
        trace.best_index = min(valid)[1]
    else:
        trace.failed = bool(trace.records)


def _encode_prompt(lm: TransformerLM, prompt) -> list[int]:
    if isinstance(prompt, str):
        ids = lm.vocab.encode(prompt)
    else:
        ids = [int(i) for i in prompt]
        lm.vocab.check_ids(ids)
    if not ids:
        raise ValueError("empty prompt")
    return ids


def bolt_generate(lm: TransformerLM, models: EnergyModels, spec: EnergySpec, prompt,
                  config: DecodeConfig | None = None) -> DecodeResult:
    """Tune per-step logit biases by Adam on the energy and return the lowest-energy rollout.

    Each iteration is one rollout plus its energy; the bias update happens between
    iterations, so ``max_iterations`` rollouts see ``max_iterations - 1`` updates.
    With ``max_iterations == 0`` the initial biases decode once and nothing is
    recorded.
    """
    config = config or DecodeConfig()
    spec.validate(lm.vocab, models.classifier)
    prompt_ids = _encode_prompt(lm, prompt)
    rng = np.random.default_rng(config.seed)
    bias = BiasState.init(config.length, lm.config.d_model, config, rng)
    trace = DecodeTrace()
    start = time.perf_counter()

    if config.max_iterations == 0:
        with no_tape():
            ro = rollout(lm, bias, prompt_ids, config)
        return DecodeResult(lm.vocab.decode(ro.ids), ro.ids, trace, time.perf_counter() - start)

    snapshot = None
    for it in range(config.max_iterations):
        t0 = time.perf_counter()
        with Tape() as tape:
            ro = rollout(lm, bias, prompt_ids, config)
            total, comps = total_energy(spec, models, ro.ybar, len(prompt_ids))
            energy = total.item()
            if not math.isfinite(energy):
                trace.records.append(IterationRecord(it, ro.ids, energy, comps, False,
                                                     time.perf_counter() - t0, discarded=True))
                if snapshot is None:
                    break
                # retry from the last good state with a smaller step
                bias.optimizer.restore(snapshot)
                bias.optimizer.lr *= 0.5
                continue
            stop = satisfied(spec, ro.ids, comps, lm.vocab)
            last = stop or it == config.max_iterations - 1
            if not last:
                snapshot = bias.optimizer.snapshot()
                bias.optimizer.zero_grad()
                tape.backward(total)
        if not last:
            bias.optimizer.step()
        trace.records.append(IterationRecord(it, ro.ids, energy, comps, stop, time.perf_counter() - t0,
                                             weights=ro.weights))
        if last:
            break

    _select_best(trace)
    if trace.best_index is None:
        return DecodeResult("", [], trace, time.perf_counter() - start)
    best = trace.records[trace.best_index]
    return DecodeResult(lm.vocab.decode(best.ids), list(best.ids), trace, time.perf_counter() - start)


# -- Langevin baseline ------------------------------------------------------------------

def langevin_step(logits: np.ndarray, grad: np.ndarray, step_size: float, noise: float,
                  rng: np.random.Generator) -> np.ndarray:
    """One Langevin update: gradient descent plus isotropic Gaussian noise."""
    out = logits - step_size * grad
    if noise > 0:
        out = out + noise * rng.standard_normal(logits.shape)
    return out


def initial_logits(lm: TransformerLM, prompt_ids: Sequence[int], length: int,
                   repetition_penalty: float) -> np.ndarray:
    """Penalized model logits along the greedy path, ``(L, V)``; their argmax is the greedy output."""
    ids = list(prompt_ids)
    out = np.zeros((length, lm.config.vocab_size))
    with no_tape():
        for t in range(length):
            y = lm.forward(lm.one_hot(ids)).data[-1]
            y = apply_repetition_penalty(y, ids, repetition_penalty)
            out[t] = y
            ids.append(int(np.argmax(y)))
    return out


def langevin_baseline_generate(lm: TransformerLM, models: EnergyModels, spec: EnergySpec, prompt,
                               config: LangevinConfig | None = None) -> DecodeResult:
    """Non-autoregressive sampling over a free ``L x V`` logit matrix.

    Every iteration relaxes the logits with a row softmax, takes the
    straight-through one-hot of that relaxation, scores it with the same energy
    and stop rule as :func:`bolt_generate`, then applies :func:`langevin_step`
    with noise ``noise_scale * noise_decay**k``. ``relaxation="identity"`` skips
    the softmax so the energy gradient lands on the logits unchanged.
    """
    config = config or LangevinConfig()
    spec.validate(lm.vocab, models.classifier)
    prompt_ids = _encode_prompt(lm, prompt)
    rng = np.random.default_rng(config.seed)
    start = time.perf_counter()
    z = initial_logits(lm, prompt_ids, config.length, config.repetition_penalty)
    prompt_rows = lm.one_hot(prompt_ids)
    trace = DecodeTrace()
    noise = config.noise_scale
    for it in range(config.max_iterations):
        t0 = time.perf_counter()
        zt = Tensor(z, requires_grad=True)
        with Tape() as tape:
            ybar = ad.ste_one_hot(ad.softmax(zt) if config.relaxation == "softmax" else zt)
            full = ad.concat([prompt_rows, ybar], axis=0)
            total, comps = total_energy(spec, models, full, len(prompt_ids))
            energy = total.item()
            ids = [int(i) for i in np.argmax(z, axis=-1)]
            if not math.isfinite(energy):
                trace.records.append(IterationRecord(it, ids, energy, comps, False,
                                                     time.perf_counter() - t0, discarded=True))
                break
            stop = satisfied(spec, ids, comps, lm.vocab)
            last = stop or it == config.max_iterations - 1
            if not last:
                tape.backward(total)
        if not last:
            z = langevin_step(z, zt.grad, config.step_size, noise, rng)
            noise *= config.noise_decay
        trace.records.append(IterationRecord(it, ids, energy, comps, stop, time.perf_counter() - t0))
        if last:
            break
    _select_best(trace)
    if trace.best_index is None:
        ids = [int(i) for i in np.argmax(z, axis=-1)]
        return DecodeResult(lm.vocab.decode(ids), ids, trace, time.perf_counter() - start)
    best = trace.records[trace.best_index]
    return DecodeResult(lm.vocab.decode(best.ids), list(best.ids), trace, time.perf_counter() - start)


def config_dict(config) -> dict:
    return asdict(config)
