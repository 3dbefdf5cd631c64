import math
from collections import Counter

import numpy as np
import pytest

from bolt import autodiff as ad
from bolt.autodiff import Tensor
from bolt.energy import diff_bleu
from bolt.harness import metrics as M
from bolt.harness.gradchecks import tiny_lm
from bolt.lm import perplexity
from oracles import random_seq
import oracles as O

N_RANDOM = 1000


class TestDistN:
    def test_examples(self):
        assert M.dist_n([list("abcabc")], 3) == 0.75
        assert M.dist_n([["x"] * 6], 3) == 0.25
        assert M.dist_n([list("abcdef")], 3) == 1.0

    def test_short_generations_are_excluded_and_counted(self):
        stats = Counter()
        assert M.dist_n([["a", "b"], list("abcabc")], 3, stats) == 0.75
        assert stats["too_short"] == 1
        with pytest.raises(ValueError):
            M.dist_n([["a"]], 3)

    def test_random_against_oracle(self, rng):
        for _ in range(N_RANDOM):
            n = int(rng.integers(1, 4))
            gens = [random_seq(rng, n, 12) for _ in range(int(rng.integers(1, 5)))]
            assert M.dist_n(gens, n) == pytest.approx(O.dist_n(gens, n), abs=1e-12)


class TestRepNgram:
    def test_examples(self):
        assert M.rep_ngram(list("abcabc")) == 1
        assert M.rep_ngram(list("abcdef")) == 0
        assert M.rep_ngram(list("xxxxx")) == 2

    def test_short_sequence_flagged(self):
        stats = Counter()
        assert M.rep_ngram(["a", "b"], 3, stats) == 0
        assert stats["too_short"] == 1

    def test_random_against_oracle(self, rng):
        for _ in range(N_RANDOM):
            seq = random_seq(rng, 3, 20, vocab=3)
            assert M.rep_ngram(seq, 3) == O.rep_ngram(seq, 3)


class TestKeywords:
    def test_examples(self):
        assert M.success_rate([["a", "k1"], ["k2", "b"]], ["k1", "k2"]) == 1.0
        assert M.keyword_coverage(["k1", "x", "k3"], ["k1", "k2", "k3", "k4"]) == 0.5
        assert M.success_rate([["a"], ["b"]], ["k"]) == 0.0
        assert M.mean_coverage([["a"], ["b"]], ["k"]) == 0.0

    def test_empty_keywords_rejected(self):
        with pytest.raises(ValueError):
            M.keyword_coverage(["a"], [])

    def test_diff_bleu_on_one_hots_against_string_oracle(self, rng):
        V = 10
        for _ in range(N_RANDOM):
            seq = random_seq(rng, 1, 10, vocab=V)
            kws = list(rng.choice(V, size=int(rng.integers(1, 5)), replace=False))
            oracle = O.keyword_presence(seq, kws)
            value = diff_bleu(Tensor(ad.one_hot(seq, V)), kws).item()
            assert value == pytest.approx(oracle, abs=1e-12)
            assert M.keyword_coverage(seq, kws) == pytest.approx(oracle, abs=1e-12)


class TestAttributeMetrics:
    def test_uniform_scores(self):
        assert M.attribute_metrics_from_scores([[0.9, 0.9], [0.9]]) == (1.0, 0.9, 1.0)
        assert M.attribute_metrics_from_scores([[0.1, 0.1], [0.1]]) == (0.0, 0.1, 0.0)

    def test_hand_computed_table(self):
        table = [[0.2, 0.7, 0.4], [0.1, 0.3], [0.6, 0.55, 0.9, 0.05]]
        acc, avg_max, exceed = M.attribute_metrics_from_scores(table)
        assert acc == pytest.approx(4 / 9)
        assert avg_max == pytest.approx((0.7 + 0.3 + 0.9) / 3)
        assert exceed == pytest.approx(2 / 3)

    def test_random_against_oracle(self, rng):
        for _ in range(N_RANDOM):
            table = [list(rng.random(int(rng.integers(1, 6)))) for _ in range(int(rng.integers(1, 6)))]
            got = M.attribute_metrics_from_scores(table)
            np.testing.assert_allclose(got, O.attribute_table(table), rtol=0, atol=1e-9)

    def test_classifier_version_against_oracle(self, rng):
        from bolt.discriminator import AttributeClassifier, ClassifierConfig

        lm = tiny_lm(2, vocab_size=16)
        clf = AttributeClassifier(lm.vocab, ("pos", "neg"), ClassifierConfig(d_model=6, hidden=5), seed=2)
        for p in clf.params.values():
            p.data = rng.normal(0, 1.0, p.shape)
        for _ in range(50):
            sets = [[random_seq(rng, 1, 8, vocab=16) for _ in range(int(rng.integers(1, 4)))]
                    for _ in range(int(rng.integers(1, 4)))]
            scores = [[clf.predict_ids(ids)[0] for ids in s] for s in sets]
            flat = [x for s in scores for x in s]
            oracle = (sum(x > 0.5 for x in flat) / len(flat),
                      float(np.mean([max(s) for s in scores])),
                      sum(max(s) > 0.5 for s in scores) / len(scores))
            np.testing.assert_allclose(M.attribute_metrics(clf, sets, "pos"), oracle, rtol=0, atol=1e-9)


class TestPerplexityAgainstOracle:
    def test_random_sequences(self, rng):
        lm = tiny_lm(6)
        V = lm.config.vocab_size
        for _ in range(N_RANDOM):
            ids = random_seq(rng, 2, 7, vocab=V)
            ctx = int(rng.integers(0, len(ids)))
            oracle = O.perplexity_from_logits(lm.forward(Tensor(ad.one_hot(ids, V))).data, ids, ctx)
            assert perplexity(lm, ids, context=ctx) == pytest.approx(oracle, rel=1e-9)


class TestTiming:
    def test_tokens_per_second(self):
        assert M.tokens_per_second([(20, 2.0)]) == 10.0
        # pooled: total tokens over total seconds
        assert M.tokens_per_second([(20, 2.0), (10, 3.0)]) == 6.0
        with pytest.raises(ValueError):
            M.tokens_per_second([(5, 0.0)])

    def test_censored_median(self):
        assert M.censored_median([3, None, 1]) == 3
        assert M.censored_median([None, None, 1]) == math.inf
        assert M.censored_median([1, 2, 4, None]) == 3
        assert M.censored_median([1, None, None, None]) == math.inf
