"""Desk-world construction, benchmark runs, the lambda grid and the schedule ablation.

Output files of :func:`run_benchmark` (all under ``RunConfig.output_dir``):

``samples.jsonl``
    one JSON object per sample, keys sorted; byte-identical across runs with
    the same master seed. Fields: ``index, prompt, condition, length,
    generation, seed, method, failed, text, ids, weights, trace`` plus the
    per-sample scores ``int_score, ext_score, int_correct, ext_correct``
    (attribute tasks) or ``coverage, success`` (keyword tasks), and ``ppl, rep3``.
``timings.jsonl``
    ``index, seconds, iteration_seconds`` per sample (wall-clock lives here so
    the sample file stays deterministic).
``aggregate.json``
    ``metrics`` (recomputable from ``samples.jsonl``), ``timing`` (from
    ``timings.jsonl``), ``counts`` and the resolved run config.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from ..decoder import (SCHEDULES, DecodeConfig, LangevinConfig, bolt_generate, langevin_baseline_generate,
                       weight_schedule)
from ..discriminator import AttributeClassifier, ClassifierConfig, LabeledCorpus, train_classifier
from ..energy import STOP_ALL, STOP_ANY, STOP_ATTRIBUTE, STOP_NONE, EnergyModels, EnergySpec
from ..lm import LMConfig, TransformerLM, Vocab, greedy_decode, perplexity, train_lm
from . import corpus as C
from . import metrics as M

log = logging.getLogger(__name__)

SOFT_TASK, AVOID_TASK, TOPIC_TASK, MULTI_TASK = "soft-attribute", "attribute-avoidance", "keyword-topic", "multi-keyword"
TASKS = (SOFT_TASK, AVOID_TASK, TOPIC_TASK, MULTI_TASK)
ATTRIBUTE_TASKS = (SOFT_TASK, AVOID_TASK)
REPORT_VERSION = 1

_TASK_DEFAULTS = {
    SOFT_TASK: ({"stop_rule": STOP_NONE}, {"max_iterations": 8}),
    AVOID_TASK: ({"stop_rule": STOP_ATTRIBUTE, "stop_threshold": 0.01}, {"max_iterations": 8}),
    TOPIC_TASK: ({"stop_rule": STOP_ANY}, {"max_iterations": 50}),
    MULTI_TASK: ({"stop_rule": STOP_ALL}, {"max_iterations": 100}),
}


# -- desk world ------------------------------------------------------------------------

@dataclass
class WorldConfig:
    """Everything needed to rebuild the synthetic models bit for bit."""

    lm_lines: int = 3000
    corpus_seed: int = 1
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 48
    lm_epochs: int = 8
    lm_lr: float = 3e-3
    generator_seed: int = 0
    judge_seed: int = 1
    head_scale: float = 8.0
    clf_lines: int = 4000
    clf_corpus_seed: int = 5
    internal_seed: int = 3
    internal_weight_decay: float = 1e-2
    external_seed: int = 4

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class World:
    config: WorldConfig
    generator: TransformerLM
    judge: TransformerLM
    internal: AttributeClassifier
    external: AttributeClassifier
    paths: dict[str, str]

    def models(self) -> EnergyModels:
        return EnergyModels(self.generator, self.internal)


def default_cache_dir() -> Path:
    return Path(os.environ.get("BOLT_CACHE", Path.home() / ".cache" / "bolt"))


def world_vocab() -> Vocab:
    return Vocab(C.all_words(C.load_prompts(), C.load_keywords()))


def classifier_corpora(config: WorldConfig) -> tuple[LabeledCorpus, LabeledCorpus]:
    """Disjoint halves of one labeled corpus: internal (guidance) and external (evaluation)."""
    full = C.sentiment_corpus(config.clf_lines, config.clf_corpus_seed, C.load_prompts())
    half = len(full.pairs) // 2
    return LabeledCorpus(full.pairs[:half], full.labels), LabeledCorpus(full.pairs[half:], full.labels)


def build_world(config: WorldConfig | None = None, cache_dir=None) -> World:
    """Train (or load from cache) the generator, judge and both classifiers."""
    config = config or WorldConfig()
    root = Path(cache_dir or default_cache_dir()) / f"world-{config.key()}"
    paths = {name: str(root / f"{name}.npz") for name in ("generator", "judge", "internal", "external")}
    if all(Path(p).exists() for p in paths.values()):
        log.info("loading cached world from %s", root)
        return World(config, TransformerLM.load(paths["generator"]), TransformerLM.load(paths["judge"]),
                     AttributeClassifier.load(paths["internal"]), AttributeClassifier.load(paths["external"]),
                     paths)

    root.mkdir(parents=True, exist_ok=True)
    vocab = world_vocab()
    lines = C.lm_corpus(config.lm_lines, config.corpus_seed, C.load_prompts(), C.load_keywords())
    C.write_lines(root / "lm_corpus.txt", lines)
    lm_cfg = LMConfig(len(vocab), d_model=config.d_model, n_layers=config.n_layers, n_heads=config.n_heads,
                      max_len=config.max_len)
    trained = {}
    for name, seed in (("generator", config.generator_seed), ("judge", config.judge_seed)):
        log.info("training %s LM (seed %d)", name, seed)
        lm, report = train_lm(lines, vocab, lm_cfg, epochs=config.lm_epochs, lr=config.lm_lr, seed=seed)
        meta = {"seed": seed, "heldout_ppl": report.heldout_ppl}
        if name == "generator":
            lm.rescale_head(config.head_scale)
            meta["head_scale"] = config.head_scale
        lm.save(paths[name], meta)
        trained[name] = lm

    internal_corpus, external_corpus = classifier_corpora(config)
    C.write_labeled(root / "clf_internal.tsv", internal_corpus)
    C.write_labeled(root / "clf_external.tsv", external_corpus)
    # the guidance classifier is regularized harder: saturated scores give -p a vanishing gradient
    internal, _ = train_classifier(internal_corpus, vocab, ClassifierConfig(weight_decay=config.internal_weight_decay),
                                   seed=config.internal_seed, checkpoint_path=paths["internal"])
    external, _ = train_classifier(external_corpus, vocab, seed=config.external_seed,
                                   checkpoint_path=paths["external"])
    (root / "world.json").write_text(json.dumps(asdict(config), indent=2, sort_keys=True))
    return World(config, trained["generator"], trained["judge"], internal, external, paths)


def load_world_from_paths(paths: dict[str, str]) -> World:
    return World(WorldConfig(), TransformerLM.load(paths["generator"]), TransformerLM.load(paths["judge"]),
                 AttributeClassifier.load(paths["internal"]), AttributeClassifier.load(paths["external"]),
                 dict(paths))


# -- run configuration -----------------------------------------------------------------

@dataclass
class RunConfig:
    """One benchmark run.

    ``conditions`` are target classes for the attribute tasks and keyword lists
    for the keyword tasks. ``pairing="cross"`` runs every prompt with every
    condition; ``"zip"`` pairs condition ``i`` with prompt ``i mod len(prompts)``.
    ``energy`` and ``decode`` override the task defaults field by field.
    """

    task: str
    conditions: list
    prompts: list[str] = field(default_factory=C.load_prompts)
    lengths: list[int] = field(default_factory=lambda: [12])
    generations_per_prompt: int = 1
    pairing: str = "cross"
    method: str = "bolt"
    energy: dict[str, Any] = field(default_factory=dict)
    decode: dict[str, Any] = field(default_factory=dict)
    checkpoints: dict[str, str] = field(default_factory=dict)
    output_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.method not in ("bolt", "langevin"):
            raise ValueError(f"method must be 'bolt' or 'langevin', got {self.method!r}")
        if self.pairing not in ("cross", "zip"):
            raise ValueError(f"pairing must be 'cross' or 'zip', got {self.pairing!r}")
        if not self.prompts:
            raise ValueError("prompt list is empty")
        if not self.conditions:
            raise ValueError("condition list is empty")
        if not self.lengths or any(n < 1 for n in self.lengths):
            raise ValueError(f"lengths must be positive, got {self.lengths}")
        if self.generations_per_prompt < 1:
            raise ValueError("generations_per_prompt must be >= 1")
        if self.task in ATTRIBUTE_TASKS:
            if not all(isinstance(c, str) for c in self.conditions):
                raise ValueError("attribute tasks take class names as conditions")
        else:
            self.conditions = [list(c) if not isinstance(c, str) else [c] for c in self.conditions]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def energy_spec(self, condition) -> EnergySpec:
        base = {"lam": 0.1, **_TASK_DEFAULTS[self.task][0], **self.energy}
        if self.task in ATTRIBUTE_TASKS:
            return EnergySpec(kind="soft", target=condition, **base)
        return EnergySpec(kind="hard", keywords=list(condition), **base)

    def decode_config(self, length: int, seed: int):
        if self.method == "langevin":
            return LangevinConfig(**{**self.decode, "length": length, "seed": seed})
        base = {**_TASK_DEFAULTS[self.task][1], **self.decode, "length": length, "seed": seed}
        return DecodeConfig(**base)


@dataclass(frozen=True)
class SampleKey:
    index: int
    prompt: str
    condition: Any
    length: int
    generation: int
    seed: int


def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def plan(config: RunConfig) -> list[SampleKey]:
    if config.pairing == "cross":
        pairs = [(p, c) for p in config.prompts for c in config.conditions]
    else:
        n = max(len(config.prompts), len(config.conditions))
        pairs = [(config.prompts[i % len(config.prompts)], config.conditions[i % len(config.conditions)])
                 for i in range(n)]
    keys = []
    for length in config.lengths:
        for prompt, cond in pairs:
            for g in range(config.generations_per_prompt):
                i = len(keys)
                keys.append(SampleKey(i, prompt, cond, length, g, derive_seed(config.seed, i)))
    return keys


def validate(config: RunConfig, world: World) -> None:
    """Raise if the run cannot execute against these models."""
    vocab = world.generator.vocab
    for name, m in (("judge", world.judge), ("internal", world.internal), ("external", world.external)):
        if m.vocab != vocab:
            raise ValueError(f"{name} checkpoint does not share the generator's vocabulary")
    for cond in config.conditions:
        config.energy_spec(cond).validate(vocab, world.internal)
    max_prompt = max(len(vocab.encode(p)) for p in config.prompts)
    if max_prompt + max(config.lengths) > world.generator.config.max_len:
        raise ValueError(f"longest prompt ({max_prompt} tokens) plus length {max(config.lengths)} "
                         f"exceeds max_len {world.generator.config.max_len}")
    config.decode_config(config.lengths[0], 0)


# -- per-sample scoring and aggregation -----------------------------------------------

def _score_sample(config: RunConfig, world: World, key: SampleKey, prompt_ids: list[int],
                  ids: list[int]) -> dict:
    vocab = world.generator.vocab
    out: dict[str, Any] = {"rep3": M.rep_ngram(ids, 3)}
    out["ppl"] = perplexity(world.judge, prompt_ids + ids, context=len(prompt_ids)) if ids else None
    if config.task in ATTRIBUTE_TASKS:
        full = prompt_ids + ids
        for name, clf in (("int", world.internal), ("ext", world.external)):
            p = clf.predict_ids(full)
            k = clf.class_index(key.condition)
            out[f"{name}_score"] = float(p[k])
            out[f"{name}_correct"] = int(np.argmax(p)) == k
    else:
        kw_ids = [vocab.id(w) for w in key.condition]
        out["coverage"] = M.keyword_coverage(ids, kw_ids)
        out["success"] = out["coverage"] > 0
    return out


def _group_key(r: dict) -> str:
    return json.dumps([r["prompt"], r["condition"], r["length"]])


def aggregate(records: list[dict], task: str) -> dict:
    """Aggregate metrics over non-failed records; depends only on the records."""
    ok = [r for r in records if not r["failed"]]
    out: dict[str, Any] = {"n_samples": len(records), "n_failed": len(records) - len(ok)}
    if not ok:
        return out
    groups: dict[str, list[dict]] = {}
    for r in ok:
        groups.setdefault(_group_key(r), []).append(r)
    ppls = [r["ppl"] for r in ok if r["ppl"] is not None]
    out["ppl"] = float(np.mean(ppls)) if ppls else None
    dist = []
    for g in groups.values():
        try:
            dist.append(M.dist_n([r["ids"] for r in g], 3))
        except ValueError:
            pass
    out["dist3"] = float(np.mean(dist)) if dist else None
    out["rep3"] = float(np.mean([r["rep3"] for r in ok]))
    iters = [r["trace"]["iterations"] for r in ok]
    out["mean_iterations"] = float(np.mean(iters))
    its = [r["trace"]["iterations_to_success"] for r in ok]
    out["stopped_rate"] = sum(i is not None for i in its) / len(ok)
    med = M.censored_median(its)
    out["median_iterations_to_success"] = None if math.isinf(med) else med
    if task in ATTRIBUTE_TASKS:
        out["int_acc"] = sum(r["int_correct"] for r in ok) / len(ok)
        out["ext_acc"] = sum(r["ext_correct"] for r in ok) / len(ok)
        # attribute scores of the class being avoided for the avoidance task, of the target otherwise
        flip = task == AVOID_TASK
        sets = [[(1.0 - r["ext_score"]) if flip else r["ext_score"] for r in g] for g in groups.values()]
        _, out["avg_max"], out["exceedance"] = M.attribute_metrics_from_scores(sets)
    else:
        out["success"] = sum(r["success"] for r in ok) / len(ok)
        out["coverage"] = float(np.mean([r["coverage"] for r in ok]))
    return out


def timing_summary(records: list[dict], timings: list[dict]) -> dict:
    by_index = {t["index"]: t for t in timings}
    ok = [r for r in records if not r["failed"]]
    if not ok:
        return {}
    secs = [by_index[r["index"]]["seconds"] for r in ok]
    tokens = [len(r["ids"]) for r in ok]
    successes = sum(r["trace"]["stopped"] for r in ok)
    total = sum(secs)
    return {
        "total_seconds": total,
        "tokens_per_second": M.tokens_per_second(zip(tokens, secs)) if total > 0 else None,
        "seconds_per_sample": total / len(ok),
        "seconds_per_success": total / successes if successes else None,
        "n_successes": successes,
    }


@dataclass
class GenerationReport:
    records: list[dict]
    timings: list[dict]
    metrics: dict
    timing: dict
    output_dir: Path | None = None


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating, np.integer)):
        return _jsonable(x.item())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def run_benchmark(config: RunConfig, world: World | None = None, dry_run: bool = False,
                  progress: Callable[[int, int], None] | None = None) -> GenerationReport | int:
    """Generate every planned sample, score it and persist the report.

    With ``dry_run`` the config is validated and the planned sample count is
    returned without decoding.
    """
    if world is None:
        if not config.checkpoints:
            raise ValueError("run config names no checkpoints and no world was given")
        world = load_world_from_paths(config.checkpoints)
    validate(config, world)
    keys = plan(config)
    if dry_run:
        return len(keys)

    lm, vocab, models = world.generator, world.generator.vocab, world.models()
    records, timings = [], []
    for n, key in enumerate(keys):
        spec = config.energy_spec(key.condition)
        dcfg = config.decode_config(key.length, key.seed)
        prompt_ids = vocab.encode(key.prompt)
        t0 = time.perf_counter()
        error = None
        try:
            if config.method == "bolt":
                res = bolt_generate(lm, models, spec, prompt_ids, dcfg)
            else:
                res = langevin_baseline_generate(lm, models, spec, prompt_ids, dcfg)
        except (ValueError, FloatingPointError) as exc:
            res, error = None, f"{type(exc).__name__}: {exc}"
        seconds = time.perf_counter() - t0
        rec = {
            "index": key.index, "prompt": key.prompt, "condition": key.condition, "length": key.length,
            "generation": key.generation, "seed": key.seed, "method": config.method,
        }
        if res is None or res.failed:
            rec |= {"failed": True, "error": error or "all iterations non-finite", "text": "", "ids": [],
                    "weights": [], "trace": res.trace.summary() if res else None}
            timings.append({"index": key.index, "seconds": seconds, "iteration_seconds": []})
        else:
            rec |= {"failed": False, "text": res.text, "ids": res.ids, "weights": res.weights,
                    "trace": res.trace.summary()}
            rec |= _score_sample(config, world, key, prompt_ids, res.ids)
            timings.append({"index": key.index, "seconds": seconds,
                            "iteration_seconds": [r.seconds for r in res.trace.records]})
        records.append(_jsonable(rec))
        if progress:
            progress(n + 1, len(keys))

    report = GenerationReport(records, timings, aggregate(records, config.task),
                              timing_summary(records, timings))
    if config.output_dir:
        report.output_dir = write_report(config, report)
    return report


def write_report(config: RunConfig, report: GenerationReport) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "samples.jsonl").write_text("".join(_dumps(r) + "\n" for r in report.records))
    (out / "timings.jsonl").write_text("".join(_dumps(t) + "\n" for t in report.timings))
    body = {
        "version": REPORT_VERSION,
        "task": config.task,
        "method": config.method,
        "metrics": report.metrics,
        "timing": report.timing,
        "config": json.loads(config.to_json()),
    }
    (out / "aggregate.json").write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")
    return out


def read_records(output_dir) -> list[dict]:
    text = (Path(output_dir) / "samples.jsonl").read_text()
    return [json.loads(line) for line in text.splitlines() if line]


def check_report(output_dir) -> bool:
    """Recompute the aggregate metrics from ``samples.jsonl`` and compare with ``aggregate.json``."""
    body = json.loads((Path(output_dir) / "aggregate.json").read_text())
    again = _jsonable(aggregate(read_records(output_dir), body["task"]))
    return json.loads(_dumps(again)) == body["metrics"]


# -- sweeps ----------------------------------------------------------------------------

def base_ppl(config: RunConfig, world: World) -> float:
    """Judge perplexity of plain greedy continuations for the config's prompts and lengths."""
    vocab = world.generator.vocab
    vals = []
    for length in config.lengths:
        for prompt in config.prompts:
            ids = vocab.encode(prompt)
            gen = greedy_decode(world.generator, ids, length)
            vals.append(perplexity(world.judge, ids + gen, context=len(ids)))
    return float(np.mean(vals))


def _control_metric(task: str, metrics: dict) -> float | None:
    return metrics.get("int_acc") if task in ATTRIBUTE_TASKS else metrics.get("success")


def recommend_lambda(rows: list[dict], base: float, ppl_ratio: float = 1.5) -> float | None:
    """Highest control metric among rows with PPL within ``ppl_ratio`` of the base LM; ties go to lower PPL."""
    ok = [r for r in rows if r.get("error") is None and r.get("control") is not None
          and r.get("ppl") is not None and r["ppl"] <= ppl_ratio * base]
    if not ok:
        return None
    best = max(ok, key=lambda r: (r["control"], -r["ppl"]))
    return best["lam"]


def lambda_sweep(base: RunConfig, world: World, lams=None) -> dict:
    """One full run per lambda value; failures are recorded and the sweep continues."""
    lams = [round(0.1 * i, 1) for i in range(11)] if lams is None else list(lams)
    rows = []
    for lam in lams:
        out_dir = str(Path(base.output_dir) / f"lam_{lam:.1f}") if base.output_dir else None
        cfg = replace(base, energy={**base.energy, "lam": lam}, output_dir=out_dir)
        row: dict[str, Any] = {"lam": lam, "error": None}
        try:
            rep = run_benchmark(cfg, world)
            row |= {"control": _control_metric(base.task, rep.metrics), "ppl": rep.metrics.get("ppl"),
                    "dist3": rep.metrics.get("dist3"), "n_failed": rep.metrics.get("n_failed")}
        except Exception as exc:  # noqa: BLE001 - a failed grid point must not end the sweep
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    ref = base_ppl(base, world)
    table = {"task": base.task, "base_ppl": ref, "ppl_ratio": 1.5, "rows": rows,
             "recommended_lam": recommend_lambda(rows, ref)}
    if base.output_dir:
        out = Path(base.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "lambda_sweep.json").write_text(json.dumps(_jsonable(table), indent=2, sort_keys=True) + "\n")
        (out / "lambda_sweep.tsv").write_text(format_table(
            ["lam", "control", "ppl", "dist3", "error"], rows))
    return table


def schedule_ablation(base: RunConfig, world: World) -> dict:
    """The soft task under each weight schedule, one row per kind."""
    rows = []
    for kind in SCHEDULES:
        out_dir = str(Path(base.output_dir) / f"schedule_{kind}") if base.output_dir else None
        cfg = replace(base, decode={**base.decode, "schedule": kind}, output_dir=out_dir)
        rep = run_benchmark(cfg, world)
        m = rep.metrics
        fixed = [[weight_schedule(kind, t, n) for t in range(n)] for n in base.lengths] if kind != "learned" else []
        applied = [r["weights"] for r in rep.records if not r["failed"]]
        rows.append({
            "schedule": kind, "int_acc": m.get("int_acc"), "ext_acc": m.get("ext_acc"),
            "ppl": m.get("ppl"), "dist3": m.get("dist3"), "n_failed": m.get("n_failed"),
            "w_min": float(min(min(w) for w in applied)) if applied else None,
            "w_max": float(max(max(w) for w in applied)) if applied else None,
            "schedule_values": fixed,
        })
    table = {"task": base.task, "rows": rows}
    if base.output_dir:
        out = Path(base.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "schedule_ablation.json").write_text(json.dumps(_jsonable(table), indent=2, sort_keys=True) + "\n")
        (out / "schedule_ablation.tsv").write_text(format_table(
            ["schedule", "int_acc", "ext_acc", "ppl", "dist3"], rows))
    return table


def speed_comparison(bolt_cfg: RunConfig, langevin_cfg: RunConfig, world: World) -> dict:
    """Iterations-to-success and wall-clock of both methods on the same tasks."""
    if plan(bolt_cfg) != plan(langevin_cfg):
        raise ValueError("speed comparison needs identical sample plans")
    out = {}
    for cfg in (bolt_cfg, langevin_cfg):
        rep = run_benchmark(cfg, world)
        its = [r["trace"]["iterations_to_success"] for r in rep.records if not r["failed"]]
        out[cfg.method] = {
            "iterations_to_success": its,
            "median_iterations_to_success": M.censored_median(its),
            "success_rate": sum(i is not None for i in its) / len(its),
            "seconds": [t["seconds"] for t in rep.timings],
            "seconds_per_success": rep.timing.get("seconds_per_success"),
            "tokens_per_second": rep.timing.get("tokens_per_second"),
        }
    b, g = out["bolt"]["median_iterations_to_success"], out["langevin"]["median_iterations_to_success"]
    out["median_ratio"] = g / b if b else None
    if bolt_cfg.output_dir:
        path = Path(bolt_cfg.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / "speed.json").write_text(json.dumps(_jsonable(out), indent=2, sort_keys=True) + "\n")
    return out


def format_table(columns: list[str], rows: list[dict]) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    lines = ["\t".join(columns)]
    lines += ["\t".join(cell(r.get(c)) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"
