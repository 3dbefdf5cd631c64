"""Word-level vocabulary and a tiny decoder-only transformer language model."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tape, Tensor
from .optim import Adam

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
MAX_VOCAB = 4096
_MASK_VALUE = -1e30


class Vocab:
    """Bijective token/id map over a closed word list; ids 0..3 are reserved."""

    def __init__(self, words: Iterable[str]):
        tokens = list(RESERVED)
        seen = set(tokens)
        for w in words:
            if w not in seen:
                seen.add(w)
                tokens.append(w)
        if len(tokens) > MAX_VOCAB:
            raise ValueError(f"vocabulary of {len(tokens)} tokens exceeds {MAX_VOCAB}")
        self.tokens: list[str] = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_corpus(cls, lines: Iterable[str]) -> "Vocab":
        words = []
        for line in lines:
            words.extend(line.split())
        return cls(sorted(set(words)))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 3

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise KeyError(f"token {token!r} is not in the vocabulary") from None

    def encode(self, text: str, stats: Counter | None = None) -> list[int]:
        """Whitespace tokenization; unknown words map to ``<unk>``.

        When ``stats`` is given, ``stats["unk"]`` counts substitutions and
        ``stats["oov:<word>"]`` records which words were missing.
        """
        ids = []
        for w in text.split():
            i = self.index.get(w)
            if i is None:
                i = self.unk_id
                if stats is not None:
                    stats["unk"] += 1
                    stats[f"oov:{w}"] += 1
            ids.append(i)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[int(i)] for i in ids)

    def check_ids(self, ids) -> None:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self)):
            raise ValueError(f"token id out of range for vocabulary of size {len(self)}")


def tokenize(vocab: Vocab, text: str, stats: Counter | None = None) -> list[int]:
    return vocab.encode(text, stats)


def detokenize(vocab: Vocab, ids: Sequence[int]) -> str:
    return vocab.decode(ids)


@dataclass
class LMConfig:
    vocab_size: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    max_len: int = 64
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.vocab_size < 1 or self.max_len < 2:
            raise ValueError("vocab_size must be >= 1 and max_len >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), _MASK_VALUE), k=1)


class TransformerLM:
    """Pre-norm decoder-only transformer.

    Inputs are one-hot (or relaxed) token rows so that the embedding lookup is
    a matrix product and gradients reach the inputs. The output head is a bare
    ``d_model x V`` matrix: zero hidden input gives exactly zero logits.
    """

    def __init__(self, config: LMConfig, vocab: Vocab, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0):
        if config.vocab_size != len(vocab):
            raise ValueError(f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
        self.config = config
        self.vocab = vocab
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params: dict[str, Tensor] = {k: Tensor(np.array(v, dtype=np.float64)) for k, v in params.items()}
        self._check_params()
        self._masks: dict[int, np.ndarray] = {}

    def _init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        c = self.config
        d, V = c.d_model, c.vocab_size
        p = {
            "wte": rng.normal(0, 0.1, (V, d)),
            "wpe": rng.normal(0, 0.02, (c.max_len, d)),
            "ln_f.g": np.ones(d),
            "ln_f.b": np.zeros(d),
            "head": rng.normal(0, 0.02, (d, V)),
        }
        proj_std = 0.02 / math.sqrt(2 * c.n_layers)
        for i in range(c.n_layers):
            p |= {
                f"h{i}.ln1.g": np.ones(d), f"h{i}.ln1.b": np.zeros(d),
                f"h{i}.qkv.w": rng.normal(0, 1 / math.sqrt(d), (d, 3 * d)), f"h{i}.qkv.b": np.zeros(3 * d),
                f"h{i}.proj.w": rng.normal(0, proj_std, (d, d)), f"h{i}.proj.b": np.zeros(d),
                f"h{i}.ln2.g": np.ones(d), f"h{i}.ln2.b": np.zeros(d),
                f"h{i}.fc.w": rng.normal(0, 1 / math.sqrt(d), (d, 4 * d)), f"h{i}.fc.b": np.zeros(4 * d),
                f"h{i}.out.w": rng.normal(0, proj_std, (4 * d, d)), f"h{i}.out.b": np.zeros(d),
            }
        return p

    def _check_params(self) -> None:
        expected = self._init_params(np.random.default_rng(0))
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names mismatch: {sorted(set(expected) ^ set(self.params))}")
        for k, v in expected.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"parameter {k} has shape {self.params[k].shape}, expected {v.shape}")
            if not np.isfinite(self.params[k].data).all():
                raise ValueError(f"parameter {k} is not finite")

    @property
    def head(self) -> Tensor:
        return self.params["head"]

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def requires_grad_(self, flag: bool = True) -> "TransformerLM":
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = np.zeros_like(p.data) if flag else None
        return self

    def _mask(self, n: int) -> np.ndarray:
        m = self._masks.get(n)
        if m is None:
            m = self._masks[n] = causal_mask(n)
        return m

    def hidden(self, x: Tensor, dropout_rng: np.random.Generator | None = None) -> Tensor:
        """Final-layer-norm hidden states for one-hot input rows ``(n, V)`` or ``(B, n, V)``."""
        c, P = self.config, self.params
        if x.shape[-1] != c.vocab_size:
            raise ad.ShapeError(f"lm.forward: input last dim {x.shape[-1]} != vocab size {c.vocab_size}")
        squeeze = x.data.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        B, n, _ = x.shape
        if n > c.max_len:
            raise ValueError(f"sequence of length {n} exceeds max_len {c.max_len}")
        H, d = c.n_heads, c.d_model
        dh = d // H
        h = x @ P["wte"] + P["wpe"][:n]
        mask = self._mask(n)
        for i in range(c.n_layers):
            a = ad.layer_norm(h, P[f"h{i}.ln1.g"], P[f"h{i}.ln1.b"])
            qkv = (a @ P[f"h{i}.qkv.w"] + P[f"h{i}.qkv.b"]).reshape(B, n, 3, H, dh)
            qkv = qkv.transpose(2, 0, 3, 1, 4)
            q, k, v = qkv[0], qkv[1], qkv[2]
            att = ad.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)) + mask)
            y = (att @ v).transpose(0, 2, 1, 3).reshape(B, n, d)
            y = y @ P[f"h{i}.proj.w"] + P[f"h{i}.proj.b"]
            h = h + self._dropout(y, dropout_rng)
            m = ad.layer_norm(h, P[f"h{i}.ln2.g"], P[f"h{i}.ln2.b"])
            m = ad.gelu(m @ P[f"h{i}.fc.w"] + P[f"h{i}.fc.b"]) @ P[f"h{i}.out.w"] + P[f"h{i}.out.b"]
            h = h + self._dropout(m, dropout_rng)
        h = ad.layer_norm(h, P["ln_f.g"], P["ln_f.b"])
        return h.reshape(n, d) if squeeze else h

    def _dropout(self, t: Tensor, rng: np.random.Generator | None) -> Tensor:
        rate = self.config.dropout
        if rng is None or rate == 0.0:
            return t
        keep = (rng.random(t.shape) >= rate) / (1.0 - rate)
        return t * Tensor(keep)

    def forward(self, x: Tensor, dropout_rng: np.random.Generator | None = None) -> Tensor:
        """Next-token logits at every position."""
        return self.hidden(x, dropout_rng) @ self.head

    def rescale_head(self, k: float) -> "TransformerLM":
        """Multiply the output head by ``k`` and divide the final norm's affine terms by ``k``.

        Logits are unchanged (up to rounding); only the scale of ``h @ head`` for
        an arbitrary ``h`` grows, i.e. how far a unit step in hidden space moves
        the logits.
        """
        if not k > 0:
            raise ValueError(f"head scale must be > 0, got {k}")
        for name in ("ln_f.g", "ln_f.b"):
            self.params[name].data = self.params[name].data / k
        self.params["head"].data = self.params["head"].data * k
        return self

    def one_hot(self, ids: Sequence[int]) -> Tensor:
        self.vocab.check_ids(ids)
        return Tensor(ad.one_hot(ids, self.config.vocab_size))

    def log_probs(self, ids: Sequence[int]) -> np.ndarray:
        """``(n, V)`` next-token log-probabilities for a token id sequence."""
        with _no_tape():
            logits = self.forward(self.one_hot(ids))
        return ad.log_softmax(logits).data

    # -- persistence -----------------------------------------------------------
    def save(self, path, meta: dict | None = None) -> Path:
        return checkpoint.save(path, "lm", asdict(self.config), self.vocab.tokens,
                               {k: v.data for k, v in self.params.items()}, meta)

    @classmethod
    def load(cls, path) -> "TransformerLM":
        header, params = checkpoint.load(path, kind="lm")
        return cls(LMConfig(**header["config"]), Vocab(header["vocab"][len(RESERVED):]), params)


class _no_tape:
    """Suspend the active tape (pure inference)."""

    def __enter__(self):
        self._token = ad._ACTIVE_TAPE.set(None)

    def __exit__(self, *exc):
        ad._ACTIVE_TAPE.reset(self._token)


no_tape = _no_tape


def forward_logits(lm: TransformerLM, prefix: Tensor) -> Tensor:
    """Logits for the position after a one-hot prefix ``(t, V)``."""
    if prefix.shape[0] >= lm.config.max_len:
        raise ValueError(f"prefix of length {prefix.shape[0]} leaves no room below max_len {lm.config.max_len}")
    if prefix.shape[0] < 1:
        raise ValueError("prefix must hold at least one token")
    return lm.forward(prefix)[prefix.shape[0] - 1]


# -- repetition penalty -----------------------------------------------------------

def repetition_factors(logits: np.ndarray, history: Iterable[int], penalty: float) -> np.ndarray:
    """Per-logit multipliers implementing the CTRL penalty: divide positive, multiply negative."""
    if penalty < 1.0:
        raise ValueError(f"repetition penalty must be >= 1, got {penalty}")
    factors = np.ones_like(logits)
    hist = np.unique(np.fromiter(history, dtype=np.int64))
    if penalty != 1.0 and hist.size:
        vals = logits[..., hist]
        factors[..., hist] = np.where(vals > 0, 1.0 / penalty, penalty)
    return factors


def apply_repetition_penalty(logits, history: Iterable[int], penalty: float):
    """Penalize tokens already in ``history``; works on arrays and on tape tensors."""
    if isinstance(logits, Tensor):
        if penalty == 1.0:
            return logits
        return logits * Tensor(repetition_factors(logits.data, history, penalty))
    arr = np.asarray(logits, dtype=np.float64)
    return arr * repetition_factors(arr, history, penalty)


def greedy_decode(lm: TransformerLM, prompt: Sequence[int], length: int,
                  repetition_penalty: float = 1.2) -> list[int]:
    """Exactly ``length`` argmax tokens after ``prompt``.

    The penalty history is the whole context (prompt and generated tokens).
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    ids = list(prompt)
    if len(ids) + length > lm.config.max_len:
        raise ValueError(f"prompt of {len(ids)} tokens plus {length} new tokens exceeds max_len")
    out = []
    with no_tape():
        for _ in range(length):
            logits = lm.forward(lm.one_hot(ids)).data[-1]
            logits = apply_repetition_penalty(logits, ids, repetition_penalty)
            nxt = int(np.argmax(logits))
            ids.append(nxt)
            out.append(nxt)
    return out


def perplexity(judge, ids: Sequence[int], context: int = 0) -> float:
    """``exp`` of the mean next-token NLL over positions ``max(context, 1)..n-1``.

    ``judge`` is anything with ``log_probs(ids) -> (n, V)`` array.
    """
    ids = list(ids)
    start = max(context, 1)
    if len(ids) <= start:
        raise ValueError("perplexity needs at least one scored token")
    lp = judge.log_probs(ids)
    nll = -np.mean([lp[t - 1, ids[t]] for t in range(start, len(ids))])
    return float(math.exp(nll))


# -- training -------------------------------------------------------------------

@dataclass
class TrainReport:
    heldout_loss_before: float
    heldout_loss_after: float
    train_loss_history: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def heldout_ppl(self) -> float:
        return math.exp(self.heldout_loss_after)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, model, report: TrainReport):
        super().__init__(message)
        self.model = model
        self.report = report


def split_heldout(lines: list[str], frac: float = 0.1) -> tuple[list[str], list[str]]:
    """Deterministic tail split; tiny corpora evaluate on their training lines."""
    n_held = int(len(lines) * frac)
    if n_held < 1:
        return lines, lines
    return lines[:-n_held], lines[-n_held:]


def windows(seqs: list[list[int]], max_len: int) -> np.ndarray:
    """One window per sentence: that sentence followed by the next ones, cut at ``max_len + 1``.

    Windows always start on a sentence boundary so position 0 is a sentence start.
    """
    out = np.zeros((len(seqs), max_len + 1), dtype=np.int64)
    for i in range(len(seqs)):
        buf: list[int] = []
        j = i
        while len(buf) < max_len + 1:
            buf.extend(seqs[j % len(seqs)])
            j += 1
        out[i] = buf[: max_len + 1]
    return out


def _batch_loss(lm: TransformerLM, batch: np.ndarray, dropout_rng=None) -> Tensor:
    V = lm.config.vocab_size
    x = Tensor(ad.one_hot(batch[:, :-1], V))
    logits = lm.forward(x, dropout_rng)
    B, n, _ = logits.shape
    return ad.cross_entropy(logits.reshape(B * n, V), batch[:, 1:].reshape(-1))


def eval_loss(lm: TransformerLM, data: np.ndarray, batch_size: int = 64) -> float:
    total, count = 0.0, 0
    with no_tape():
        for s in range(0, len(data), batch_size):
            b = data[s : s + batch_size]
            total += _batch_loss(lm, b).item() * len(b)
            count += len(b)
    return total / count


def _clip_grads(params: list[Tensor], max_norm: float) -> None:
    norm = math.sqrt(sum(float((p.grad**2).sum()) for p in params))
    if norm > max_norm:
        for p in params:
            p.grad = p.grad * (max_norm / norm)


def train_lm(lines: list[str], vocab: Vocab, config: LMConfig, epochs: int = 10, lr: float = 3e-3,
             batch_size: int = 32, seed: int = 0, checkpoint_path=None,
             heldout_frac: float = 0.1) -> tuple[TransformerLM, TrainReport]:
    """Next-token training with Adam on sentence-aligned windows."""
    if not lines:
        raise ValueError("corpus is empty")
    seqs = [vocab.encode(line) for line in lines]
    if not any(seqs):
        raise ValueError("corpus has no tokens")
    seqs = [s for s in seqs if s]
    train_seqs, held_seqs = split_heldout(seqs, heldout_frac)
    train = windows(train_seqs, config.max_len)
    held = windows(held_seqs, config.max_len)

    rng = np.random.default_rng(seed)
    lm = TransformerLM(config, vocab, seed=seed)
    report = TrainReport(eval_loss(lm, held), math.nan)
    params = lm.parameters()
    lm.requires_grad_(True)
    opt = Adam(params, lr=lr)
    good = {k: v.data.copy() for k, v in lm.params.items()}
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(train))
            for s in range(0, len(order), batch_size):
                batch = train[order[s : s + batch_size]]
                opt.zero_grad()
                with Tape() as tape:
                    loss = _batch_loss(lm, batch, rng if config.dropout else None)
                    if not math.isfinite(loss.item()):
                        for k, v in good.items():
                            lm.params[k].data = v
                        lm.requires_grad_(False)
                        report.heldout_loss_after = eval_loss(lm, held)
                        if checkpoint_path:
                            lm.save(checkpoint_path, {"diverged": True})
                        raise TrainingDiverged(f"loss became {loss.item()} at step {report.steps}", lm, report)
                    tape.backward(loss)
                _clip_grads(params, 1.0)
                opt.step()
                report.steps += 1
                report.train_loss_history.append(loss.item())
                good = {k: v.data.copy() for k, v in lm.params.items()}
            log.info("epoch %d train loss %.4f", epoch, report.train_loss_history[-1])
    finally:
        lm.requires_grad_(False)
    report.heldout_loss_after = eval_loss(lm, held)
    if checkpoint_path:
        lm.save(checkpoint_path, {"heldout_loss": report.heldout_loss_after, "seed": seed})
    return lm, report
