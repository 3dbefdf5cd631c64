"""Command-line entry point: ``bolt <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..decoder import SCHEDULES, DecodeConfig, LangevinConfig, bolt_generate, langevin_baseline_generate
from ..discriminator import AttributeClassifier, ClassifierConfig, train_classifier
from ..energy import EnergyModels, EnergySpec
from ..lm import LMConfig, TransformerLM, Vocab, train_lm
from . import benchmark as B
from . import corpus as C
from .gradchecks import run_gradchecks


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--schedule", choices=SCHEDULES)
    p.add_argument("--lam", type=float, help="fluency weight")
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--cache", help="world cache directory when the config names no checkpoints")


def _load_run(args) -> tuple[B.RunConfig, B.World]:
    cfg = B.RunConfig.load(args.config)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    decode = dict(cfg.decode)
    if args.schedule:
        decode["schedule"] = args.schedule
    if args.max_iterations is not None:
        decode["max_iterations"] = args.max_iterations
    energy = dict(cfg.energy)
    if args.lam is not None:
        energy["lam"] = args.lam
    cfg = replace(cfg, decode=decode, energy=energy)
    world = B.load_world_from_paths(cfg.checkpoints) if cfg.checkpoints else B.build_world(cache_dir=args.cache)
    return cfg, world


def cmd_build_world(args) -> int:
    wc = B.WorldConfig(d_model=args.d_model, lm_epochs=args.epochs, head_scale=args.head_scale)
    world = B.build_world(wc, cache_dir=args.cache)
    print(json.dumps(world.paths, indent=2))
    return 0


def cmd_train_lm(args) -> int:
    lines = C.read_lines(args.corpus)
    vocab = TransformerLM.load(args.vocab_from).vocab if args.vocab_from else Vocab.from_corpus(lines)
    cfg = LMConfig(len(vocab), d_model=args.d_model, n_layers=args.layers, n_heads=args.heads,
                   max_len=args.max_len, dropout=args.dropout)
    lm, report = train_lm(lines, vocab, cfg, epochs=args.epochs, lr=args.lr, seed=args.seed)
    if args.head_scale != 1.0:
        lm.rescale_head(args.head_scale)
    lm.save(args.out, {"seed": args.seed, "heldout_ppl": report.heldout_ppl, "head_scale": args.head_scale})
    print(f"held-out loss {report.heldout_loss_before:.4f} -> {report.heldout_loss_after:.4f} "
          f"(ppl {report.heldout_ppl:.3f}) after {report.steps} steps; saved {args.out}")
    return 0


def cmd_train_clf(args) -> int:
    vocab = TransformerLM.load(args.vocab_from).vocab
    corpus = C.read_labeled(args.corpus)
    cfg = ClassifierConfig(epochs=args.epochs, weight_decay=args.weight_decay)
    _, report = train_classifier(corpus, vocab, cfg, seed=args.seed, checkpoint_path=args.out)
    print(f"held-out accuracy {report.heldout_accuracy:.4f} on {report.n_heldout} samples; saved {args.out}")
    return 0


def cmd_generate(args) -> int:
    lm = TransformerLM.load(args.lm)
    clf = AttributeClassifier.load(args.clf) if args.clf else None
    if (args.target is None) == (args.keywords is None):
        print("error: give exactly one of --target or --keywords", file=sys.stderr)
        return 2
    if args.target is not None:
        spec = EnergySpec.soft(args.target, lam=args.lam, stop_threshold=args.stop_threshold)
    else:
        kws = [w for w in args.keywords.split(",") if w]
        spec = EnergySpec.hard(kws, lam=args.lam, stop="all_keywords" if args.all else "any_keyword")
    models = EnergyModels(lm, clf)
    if args.method == "langevin":
        cfg = LangevinConfig(length=args.length, seed=args.seed,
                             **({"max_iterations": args.max_iterations} if args.max_iterations is not None else {}))
        res = langevin_baseline_generate(lm, models, spec, args.prompt, cfg)
    else:
        cfg = DecodeConfig(length=args.length, schedule=args.schedule, seed=args.seed,
                           **({"max_iterations": args.max_iterations} if args.max_iterations is not None else {}))
        res = bolt_generate(lm, models, spec, args.prompt, cfg)
    print(f"{args.prompt} {res.text}")
    if args.trace:
        print(json.dumps(res.trace.summary(), indent=2))
    return 1 if res.failed else 0


def cmd_benchmark(args) -> int:
    cfg, world = _load_run(args)
    if args.dry_run:
        n = B.run_benchmark(cfg, world, dry_run=True)
        print(f"config ok: {n} samples planned")
        return 0
    rep = B.run_benchmark(cfg, world, progress=_progress if args.verbose else None)
    print(json.dumps(B._jsonable({"metrics": rep.metrics, "timing": rep.timing}), indent=2, sort_keys=True))
    return 0


def cmd_lambda_sweep(args) -> int:
    cfg, world = _load_run(args)
    table = B.lambda_sweep(cfg, world)
    print(B.format_table(["lam", "control", "ppl", "dist3", "error"], table["rows"]), end="")
    print(f"base ppl {table['base_ppl']:.3f}; recommended lambda: {table['recommended_lam']}")
    return 0


def cmd_ablation(args) -> int:
    cfg, world = _load_run(args)
    table = B.schedule_ablation(cfg, world)
    print(B.format_table(["schedule", "int_acc", "ext_acc", "ppl", "dist3"], table["rows"]), end="")
    return 0


def cmd_speed(args) -> int:
    cfg, world = _load_run(args)
    lang = replace(cfg, method="langevin", decode={"relaxation": args.relaxation}, output_dir=None)
    out = B.speed_comparison(cfg, lang, world)
    for m in ("bolt", "langevin"):
        r = out[m]
        print(f"{m}: success {r['success_rate']:.3f}, median iterations {r['median_iterations_to_success']}, "
              f"seconds/success {r['seconds_per_success']}")
    print(f"median ratio (langevin / bolt): {out['median_ratio']}")
    return 0


def cmd_gradcheck(args) -> int:
    rows, seconds = run_gradchecks(seeds=range(args.seeds), tol=args.tol)
    failed = 0
    for r in rows:
        if not r.report.passed:
            failed += 1
            print(f"FAIL {r.case} seed={r.seed} max_rel_error={r.report.max_rel_error:.3e} {r.report.note}")
    worst = max(r.report.max_rel_error for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed, worst relative error {worst:.3e}, {seconds:.1f}s")
    return 1 if failed else 0


def _progress(done: int, total: int) -> None:
    print(f"\r{done}/{total}", end="\n" if done == total else "", file=sys.stderr, flush=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bolt", description="Bias-tuned controlled decoding on a desk-scale LM.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-world", help="train and cache the synthetic generator, judge and classifiers")
    p.add_argument("--cache")
    p.add_argument("--d-model", type=int, default=B.WorldConfig.d_model)
    p.add_argument("--epochs", type=int, default=B.WorldConfig.lm_epochs)
    p.add_argument("--head-scale", type=float, default=B.WorldConfig.head_scale)
    p.set_defaults(func=cmd_build_world)

    p = sub.add_parser("train-lm", help="train a language model on a one-sentence-per-line corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-from", help="reuse the vocabulary of an existing LM checkpoint")
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--max-len", type=int, default=48)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--head-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("train-clf", help="train an attribute classifier on a text<TAB>label corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-from", required=True, help="LM checkpoint whose vocabulary the classifier shares")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=ClassifierConfig.epochs)
    p.add_argument("--weight-decay", type=float, default=ClassifierConfig.weight_decay)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_clf)

    p = sub.add_parser("generate", help="controlled generation for one prompt")
    p.add_argument("--lm", required=True)
    p.add_argument("--clf")
    p.add_argument("--prompt", required=True)
    p.add_argument("--target", help="attribute class (soft constraint)")
    p.add_argument("--keywords", help="comma-separated keywords (hard constraint)")
    p.add_argument("--all", action="store_true", help="stop only once every keyword appears")
    p.add_argument("--stop-threshold", type=float)
    p.add_argument("--length", type=int, default=12)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--schedule", choices=SCHEDULES, default="decreasing")
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--method", choices=("bolt", "langevin"), default="bolt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true", help="print the iteration trace summary")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("benchmark", help="run a benchmark config")
    _add_overrides(p)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("lambda-sweep", help="grid over the fluency weight 0.0..1.0")
    _add_overrides(p)
    p.set_defaults(func=cmd_lambda_sweep)

    p = sub.add_parser("ablation", help="compare the four bias weight schedules")
    _add_overrides(p)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("speed", help="iterations-to-success of the bias method against the Langevin baseline")
    _add_overrides(p)
    p.add_argument("--relaxation", choices=("softmax", "identity"), default="softmax",
                   help="what the Langevin baseline one-hots: softmax of its logits, or the logits directly")
    p.set_defaults(func=cmd_speed)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op kind and the energy")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
