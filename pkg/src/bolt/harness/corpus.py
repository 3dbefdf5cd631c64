"""Prompt/keyword fixtures, corpus file formats, and the synthetic desk corpora.

File formats:

* corpus: plain text, one sample per line
* labeled corpus: ``text<TAB>label`` per line
* prompts: one prompt per line
* keywords: ``topic: w1,w2,w3,w4`` per line
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from ..discriminator import LabeledCorpus

POSITIVE = "positive"
NEGATIVE = "negative"
SENTIMENTS = (POSITIVE, NEGATIVE)

_ADJ = {
    POSITIVE: ["good", "great", "wonderful", "lovely", "excellent", "pleasant", "amazing", "nice"],
    NEGATIVE: ["bad", "awful", "terrible", "horrible", "poor", "boring", "dreadful", "nasty"],
}
_FEEL = {
    POSITIVE: ["happy", "glad", "pleased", "cheerful"],
    NEGATIVE: ["sad", "angry", "upset", "miserable"],
}
_ACT = {
    POSITIVE: ["recommend", "enjoy", "love", "praise"],
    NEGATIVE: ["avoid", "hate", "regret", "dislike"],
}
_COPULA = ["was", "is", "seemed", "felt"]
_INTENS = ["really", "very", "quite", "so", "truly"]
_PEOPLE = ["people", "children", "visitors", "guests", "workers"]
_GENERIC = ["garden", "table", "window", "river", "house", "friend", "teacher", "story",
            "market", "school", "village", "kitchen", "forest", "bridge", "letter", "song"]
_TOPIC_VERB = ["has", "needs", "mentions", "shows", "described", "found", "kept", "wanted"]
_LINK = ["and", "near", "beside", "with", "behind"]
ADJ_RATE = 0.25
_TAIL = ["for a while", "every day", "at night", "in the morning", "last year", "for the first time"]


def load_prompts(path=None) -> list[str]:
    text = Path(path).read_text() if path else resources.files("bolt.data").joinpath("prompts.txt").read_text()
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_keywords(path=None) -> dict[str, list[str]]:
    text = Path(path).read_text() if path else resources.files("bolt.data").joinpath("keywords.txt").read_text()
    topics = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        topic, sep, words = line.partition(":")
        kws = [w.strip() for w in words.split(",") if w.strip()]
        if not sep or not kws:
            raise ValueError(f"keywords line {n}: expected 'topic: w1,w2,...', got {line!r}")
        topics[topic.strip()] = kws
    return topics


def read_lines(path) -> list[str]:
    return [line.rstrip("\n") for line in Path(path).read_text().splitlines() if line.strip()]


def write_lines(path, lines) -> None:
    Path(path).write_text("".join(f"{line}\n" for line in lines))


def read_labeled(path, labels: tuple[str, ...] | None = None) -> LabeledCorpus:
    pairs = []
    for n, line in enumerate(read_lines(path), 1):
        text, sep, label = line.rpartition("\t")
        if not sep:
            raise ValueError(f"{path}:{n}: expected text<TAB>label")
        pairs.append((text, label.strip()))
    if labels is None:
        labels = tuple(sorted({label for _, label in pairs}))
    return LabeledCorpus(pairs, labels)


def write_labeled(path, corpus: LabeledCorpus) -> None:
    write_lines(path, [f"{t}\t{label}" for t, label in corpus.pairs])


# -- synthetic generation ------------------------------------------------------------

def _pick(rng, options):
    return options[int(rng.integers(len(options)))]


def sentiment_sentence(rng: np.random.Generator, prompt: str, label: str) -> str:
    adj = _pick(rng, _ADJ[label])
    words = [prompt, _pick(rng, _COPULA)]
    if rng.random() < 0.6:
        words.append(_pick(rng, _INTENS))
    words.append(adj)
    form = int(rng.integers(3))
    if form == 0:
        words += ["and", "the", _pick(rng, _PEOPLE), "were", _pick(rng, _FEEL[label])]
    elif form == 1:
        words += ["so", "we", "would", _pick(rng, _ACT[label]), "it", "again"]
    else:
        words += ["and", "everyone", "felt", _pick(rng, _FEEL[label])]
    return " ".join(words) + " ."


def _noun_phrase(rng: np.random.Generator, noun: str) -> list[str]:
    # an occasional adjective of either polarity, so sentiment words can show up mid-sentence
    if rng.random() < ADJ_RATE:
        return ["the", _pick(rng, _ADJ[_pick(rng, SENTIMENTS)]), noun]
    return ["the", noun]


def topic_sentence(rng: np.random.Generator, prompt: str, keywords: list[str]) -> str:
    k = 1 + int(rng.integers(3))
    chosen = [keywords[i] for i in rng.choice(len(keywords), size=k, replace=False)]
    nouns = chosen + [_pick(rng, _GENERIC) for _ in range(int(rng.integers(1, 3)))]
    nouns = [nouns[i] for i in rng.permutation(len(nouns))]
    words = [prompt, _pick(rng, _TOPIC_VERB)] + _noun_phrase(rng, nouns[0])
    for noun in nouns[1:]:
        words += [_pick(rng, _LINK)] + _noun_phrase(rng, noun)
    if rng.random() < 0.5:
        words += _pick(rng, _TAIL).split()
    return " ".join(words) + " ."


def generic_sentence(rng: np.random.Generator, prompt: str) -> str:
    words = [prompt, _pick(rng, _TOPIC_VERB)] + _noun_phrase(rng, _pick(rng, _GENERIC))
    words += [_pick(rng, _LINK)] + _noun_phrase(rng, _pick(rng, _GENERIC))
    words += _pick(rng, _TAIL).split()
    return " ".join(words) + " ."


def lm_corpus(n: int, seed: int, prompts: list[str], topics: dict[str, list[str]]) -> list[str]:
    """Mixed sentiment / topic / plain sentences, each opening with one of the prompts."""
    rng = np.random.default_rng(seed)
    topic_names = sorted(topics)
    lines = []
    for _ in range(n):
        prompt = _pick(rng, prompts)
        r = rng.random()
        if r < 0.4:
            lines.append(sentiment_sentence(rng, prompt, _pick(rng, SENTIMENTS)))
        elif r < 0.8:
            lines.append(topic_sentence(rng, prompt, topics[_pick(rng, topic_names)]))
        else:
            lines.append(generic_sentence(rng, prompt))
    return lines


def sentiment_corpus(n: int, seed: int, prompts: list[str]) -> LabeledCorpus:
    """Labelled sentences whose class is decided by which marker words they contain."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        label = _pick(rng, SENTIMENTS)
        pairs.append((sentiment_sentence(rng, _pick(rng, prompts), label), label))
    return LabeledCorpus(pairs, SENTIMENTS)


def marker_label(text: str) -> str | None:
    """Unigram rule that is a perfect oracle for ``sentiment_corpus``."""
    words = set(text.split())
    pos = words & set(_ADJ[POSITIVE] + _FEEL[POSITIVE] + _ACT[POSITIVE])
    neg = words & set(_ADJ[NEGATIVE] + _FEEL[NEGATIVE] + _ACT[NEGATIVE])
    if pos and not neg:
        return POSITIVE
    if neg and not pos:
        return NEGATIVE
    return None


def marker_words(label: str) -> list[str]:
    return _ADJ[label] + _FEEL[label] + _ACT[label]


def all_words(prompts: list[str], topics: dict[str, list[str]]) -> list[str]:
    """Closed vocabulary of every synthetic generator."""
    words = set()
    for p in prompts:
        words.update(p.split())
    for kws in topics.values():
        words.update(kws)
    for table in (_ADJ, _FEEL, _ACT):
        for ws in table.values():
            words.update(ws)
    for group in (_COPULA, _INTENS, _PEOPLE, _GENERIC, _TOPIC_VERB, _LINK):
        words.update(group)
    for t in _TAIL:
        words.update(t.split())
    words.update(["and", "the", "were", "so", "we", "would", "it", "again", "everyone", "felt", "."])
    return sorted(words)
