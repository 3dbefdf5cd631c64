import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bolt import autodiff as ad
from bolt.autodiff import Tensor
from bolt.discriminator import AttributeClassifier, ClassifierConfig
from bolt.energy import (EnergyModels, EnergySpec, diff_bleu, e_fluent, e_hard, e_soft, realized_probs, satisfied,
                         total_energy)
from bolt.harness.gradchecks import tiny_lm
from bolt.lm import LMConfig, TransformerLM, Vocab


def rows(ids, V):
    return Tensor(ad.one_hot(ids, V))


class _ConstJudge:
    """Judge whose next-token distribution is a fixed row at every position."""

    def __init__(self, probs):
        self.p = np.asarray(probs, dtype=np.float64)

    def forward(self, x):
        n = x.shape[0]
        return Tensor(np.tile(np.log(self.p), (n, 1)))


class TestDiffBleu:
    def test_half_coverage(self):
        assert diff_bleu(rows([4, 5, 4], 8), [4, 6]).item() == 0.5

    def test_no_keywords_present(self):
        assert diff_bleu(rows([1, 2, 3], 8), [4, 6]).item() == 0.0

    def test_repeats_are_clipped(self):
        assert diff_bleu(rows([4, 4, 6, 6, 6], 8), [4, 6]).item() == 1.0

    def test_e_hard_bounds(self):
        assert e_hard(rows([4, 6], 8), [4, 6]).item() == -1.0
        assert e_hard(rows([1, 2], 8), [4, 6]).item() == 0.0

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=12),
           st.lists(st.integers(0, 9), min_size=1, max_size=4, unique=True))
    def test_equals_string_presence_count(self, seq, kws):
        words = [f"w{i}" for i in seq]
        oracle = sum(f"w{k}" in words for k in kws) / len(kws)
        assert diff_bleu(rows(seq, 10), kws).item() == oracle

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=8),
           st.lists(st.integers(0, 9), min_size=1, max_size=3, unique=True), st.integers(0, 9))
    def test_adding_a_token_never_raises_energy(self, seq, kws, extra):
        before = e_hard(rows(seq, 10), kws).item()
        after = e_hard(rows(seq + [extra], 10), kws).item()
        assert after <= before


class TestFluency:
    def test_uniform_judge(self):
        V, P, L = 16, 2, 4
        judge = _ConstJudge(np.full(V, 1 / V))
        ybar = rows([1, 2, 3, 4, 5, 6], V)
        assert e_fluent(judge, ybar, P).item() == pytest.approx(-0.25, abs=1e-12)
        assert ybar.shape[0] - P == L

    def test_certain_judge(self):
        # probability 1 on token 3 and the sequence only uses it
        p = np.full(5, 1e-300)
        p[3] = 1.0
        judge = _ConstJudge(p / p.sum())
        assert e_fluent(judge, rows([3] * 7, 5), 2).item() == pytest.approx(-5.0, abs=1e-12)

    def test_matches_scalar_chain(self, rng):
        lm = tiny_lm(3)
        V = lm.config.vocab_size
        for _ in range(10):
            P = int(rng.integers(1, 4))
            ids = list(rng.integers(0, V, size=P + int(rng.integers(1, 6))))
            oracle = 0.0
            for t in range(P, len(ids)):
                logits = lm.forward(lm.one_hot(ids[:t])).data[-1]
                q = np.exp(logits - logits.max())
                oracle += q[ids[t]] / q.sum()
            assert e_fluent(lm, rows(ids, V), P).item() == pytest.approx(-oracle, abs=1e-9)
            assert -(len(ids) - P) <= e_fluent(lm, rows(ids, V), P).item() <= 0

    def test_log_form(self, rng):
        lm = tiny_lm(4)
        ybar = rows([4, 5, 6, 7, 4], lm.config.vocab_size)
        p = realized_probs(lm, ybar, 2).data
        assert e_fluent(lm, ybar, 2, form="log").item() == pytest.approx(-np.log(p).sum(), abs=1e-12)

    def test_needs_prompt_and_generation(self):
        lm = tiny_lm(1)
        with pytest.raises(ValueError):
            e_fluent(lm, rows([4, 5], 8), 0)
        with pytest.raises(ValueError):
            e_fluent(lm, rows([4, 5], 8), 2)


@pytest.fixture
def toy_models():
    lm = tiny_lm(5)
    clf = AttributeClassifier(lm.vocab, ("a", "b"), ClassifierConfig(d_model=6, hidden=5), seed=2)
    rng = np.random.default_rng(9)
    for p in clf.params.values():
        p.data = rng.normal(0, 0.7, p.shape)
    return EnergyModels(lm, clf)


class TestTotalEnergy:
    def test_soft_value(self, toy_models):
        ybar = rows([4, 5, 6, 7], 8)
        p = toy_models.classifier.probs(ybar).data[0]
        assert e_soft(toy_models.classifier, ybar, "a").item() == -p
        assert -1.0 <= -p <= 0.0

    def test_lambda_zero_equals_soft(self, toy_models):
        ybar = rows([4, 5, 6, 7], 8)
        spec = EnergySpec.soft("a", lam=0.0)
        total, comps = total_energy(spec, toy_models, ybar, 2)
        assert total.item() == e_soft(toy_models.classifier, ybar, "a").item()
        assert "fluent" not in comps

    def test_weighted_sum_matches_components(self, toy_models, rng):
        for _ in range(20):
            ids = list(rng.integers(0, 8, size=6))
            ybar = rows(ids, 8)
            lam = float(rng.uniform(0, 1))
            for spec in (EnergySpec.soft("b", lam=lam), EnergySpec.hard(["w0", "w2"], lam=lam)):
                total, comps = total_energy(spec, toy_models, ybar, 2)
                name = "soft" if spec.kind == "soft" else "hard"
                assert total.item() == pytest.approx(comps[name] + lam * comps["fluent"], abs=1e-12)
                assert -1 - lam * 4 <= total.item() <= 0

    def test_default_lambda(self):
        assert EnergySpec.soft("a").lam == 0.1
        assert EnergySpec.hard(["x"]).lam == 0.1

    def test_spec_validation(self, toy_models):
        with pytest.raises(ValueError, match="not in vocabulary"):
            EnergySpec.hard(["zebra"]).validate(toy_models.fluency_lm.vocab)
        with pytest.raises(ValueError):
            EnergySpec(kind="soft")
        with pytest.raises(ValueError):
            EnergySpec.hard([])
        with pytest.raises(ValueError):
            EnergySpec.soft("a", lam=-0.1)
        with pytest.raises(ValueError):
            EnergySpec.soft("c").validate(toy_models.fluency_lm.vocab, toy_models.classifier)

    def test_spec_round_trip(self):
        spec = EnergySpec.hard(["a", "b"], lam=0.3, stop="all_keywords")
        assert EnergySpec.from_dict(spec.to_dict()) == spec


class TestStopRules:
    vocab = Vocab(["w0", "w1", "w2", "w3"])

    def test_any_and_all(self):
        w0, w2 = self.vocab.id("w0"), self.vocab.id("w2")
        anyk = EnergySpec.hard(["w0", "w2"], stop="any_keyword")
        allk = EnergySpec.hard(["w0", "w2"], stop="all_keywords")
        assert satisfied(anyk, [w0], {}, self.vocab)
        assert not satisfied(allk, [w0], {}, self.vocab)
        assert satisfied(allk, [w2, w0], {}, self.vocab)

    def test_attribute_threshold(self):
        spec = EnergySpec.soft("a", stop_threshold=0.01)
        assert satisfied(spec, [], {"soft": -0.995}, self.vocab)
        assert not satisfied(spec, [], {"soft": -0.98}, self.vocab)

    def test_none(self):
        assert not satisfied(EnergySpec.soft("a"), [], {"soft": -1.0}, self.vocab)
