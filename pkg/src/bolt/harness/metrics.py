"""Generation-quality metrics over token sequences and classifier scores.

Sequences are lists of hashable tokens (ids or words). Functions that drop or
flag inputs accept an optional ``stats`` Counter and record what they did there.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from ..discriminator import AttributeClassifier
from ..lm import perplexity


def ngrams(seq: Sequence, n: int) -> list[tuple]:
    return [tuple(seq[i : i + n]) for i in range(len(seq) - n + 1)]


def dist_n(generations: Iterable[Sequence], n: int = 3, stats: Counter | None = None) -> float:
    """Distinct n-grams over total n-grams, pooled across one prompt's generations.

    Generations shorter than ``n`` are left out and counted in ``stats["too_short"]``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pooled = []
    for g in generations:
        if len(g) < n:
            if stats is not None:
                stats["too_short"] += 1
            continue
        pooled.extend(ngrams(g, n))
    if not pooled:
        raise ValueError(f"no generation has at least {n} tokens")
    return len(set(pooled)) / len(pooled)


def rep_ngram(seq: Sequence, n: int = 3, stats: Counter | None = None) -> int:
    """Occurrences of n-grams beyond each n-gram's first; sequences shorter than ``n`` score 0."""
    if len(seq) < n:
        if stats is not None:
            stats["too_short"] += 1
        return 0
    grams = ngrams(seq, n)
    return len(grams) - len(set(grams))


def keyword_coverage(generation: Sequence, keywords: Sequence) -> float:
    if not keywords:
        raise ValueError("keywords must be nonempty")
    present = set(generation)
    return sum(k in present for k in keywords) / len(keywords)


def success_rate(generations: Sequence[Sequence], keywords: Sequence) -> float:
    """Fraction of generations containing at least one keyword."""
    if not keywords:
        raise ValueError("keywords must be nonempty")
    if not generations:
        raise ValueError("no generations")
    kws = set(keywords)
    return sum(bool(kws & set(g)) for g in generations) / len(generations)


def mean_coverage(generations: Sequence[Sequence], keywords: Sequence) -> float:
    if not generations:
        raise ValueError("no generations")
    return float(np.mean([keyword_coverage(g, keywords) for g in generations]))


def attribute_metrics_from_scores(score_sets: Sequence[Sequence[float]],
                                  threshold: float = 0.5) -> tuple[float, float, float]:
    """``(accuracy, avg-max, exceedance)`` from per-prompt lists of target-class scores.

    A generation counts as classified into the target class when its score is
    above ``threshold`` (for two classes that is the argmax).
    """
    sets = [list(s) for s in score_sets if len(s)]
    if not sets:
        raise ValueError("no scored generations")
    flat = [x for s in sets for x in s]
    accuracy = sum(x > threshold for x in flat) / len(flat)
    avg_max = float(np.mean([max(s) for s in sets]))
    exceed = sum(any(x > threshold for x in s) for s in sets) / len(sets)
    return accuracy, avg_max, exceed


def attribute_metrics(clf: AttributeClassifier, id_sets: Sequence[Sequence[Sequence[int]]],
                      target: str) -> tuple[float, float, float]:
    """Classifier-based accuracy, average per-prompt max score and exceedance probability.

    ``id_sets`` holds, per prompt, the token-id sequences to score. Accuracy uses
    the classifier's argmax, which for two classes agrees with the 0.5 threshold.
    """
    k = clf.class_index(target)
    scores, hits = [], []
    for ids_list in id_sets:
        row = []
        for ids in ids_list:
            p = clf.predict_ids(ids)
            row.append(float(p[k]))
            hits.append(int(np.argmax(p)) == k)
        scores.append(row)
    if not hits:
        raise ValueError("no scored generations")
    _, avg_max, exceed = attribute_metrics_from_scores(scores)
    return sum(hits) / len(hits), avg_max, exceed


def mean_perplexity(judge, samples: Sequence[tuple[Sequence[int], Sequence[int]]]) -> float:
    """Mean per-sample perplexity of continuations given their prompts."""
    vals = [perplexity(judge, list(p) + list(g), context=len(p)) for p, g in samples]
    if not vals:
        raise ValueError("no samples")
    return float(np.mean(vals))


def tokens_per_second(runs: Iterable[tuple[int, float]]) -> float:
    """Total tokens over total seconds for ``(tokens, seconds)`` pairs."""
    tokens = seconds = 0.0
    for n, s in runs:
        tokens += n
        seconds += s
    if seconds <= 0:
        raise ValueError("elapsed time must be positive")
    return tokens / seconds


def censored_median(values: Sequence[float | None]) -> float:
    """Median with ``None`` (never succeeded) treated as larger than every success."""
    if not values:
        raise ValueError("no values")
    xs = sorted(math.inf if v is None else float(v) for v in values)
    mid = len(xs) // 2
    if len(xs) % 2:
        return xs[mid]
    lo, hi = xs[mid - 1], xs[mid]
    if math.isinf(hi):
        return math.inf
    return (lo + hi) / 2
