import json

import numpy as np
import pytest

from asmote.corpus import AsmoteTriplet, Sentiment, Span
from asmote.estimator import AspectGuidedExtractor
from asmote.evaluation import (
    MetricReport, atsa_accuracy, export_attention, format_prf_table, format_stats_table, span_f1,
    towe_f1, triplet_prf, write_attention,
)

from oracles import brute_force_prf, random_triplet_instance

POS, NEU, NEG = Sentiment.POSITIVE, Sentiment.NEUTRAL, Sentiment.NEGATIVE


def t(aspect, sentiment, *opinions):
    return AsmoteTriplet(Span(*aspect), sentiment, frozenset(Span(*o) for o in opinions))


LOBSTER_GOLD = [
    ("s", t((1, 3), NEG, (4, 5), (7, 8))),
    ("s", t((11, 12), NEG, (12, 15))),
]


class TestTripletPrf:
    def test_perfect(self):
        r = triplet_prf(LOBSTER_GOLD, LOBSTER_GOLD)
        assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)

    def test_partial_opinion_set_is_wrong(self):
        pred = [LOBSTER_GOLD[0][0:1] + (t((1, 3), NEG, (4, 5)),), LOBSTER_GOLD[1]]
        r = triplet_prf(LOBSTER_GOLD, pred)
        assert (r.matched, r.precision, r.recall, r.f1) == (1, 0.5, 0.5, 0.5)

    def test_superset_and_wrong_sentiment_are_wrong(self):
        pred = [("s", t((1, 3), NEG, (4, 5), (7, 8), (0, 1))), ("s", t((11, 12), NEU, (12, 15)))]
        assert triplet_prf(LOBSTER_GOLD, pred).matched == 0

    def test_sentence_id_matters(self):
        pred = [("other", LOBSTER_GOLD[0][1])]
        assert triplet_prf(LOBSTER_GOLD, pred).matched == 0

    def test_empty_opinion_predictions_dropped(self):
        pred = LOBSTER_GOLD + [("s", t((5, 6), POS))]
        r = triplet_prf(LOBSTER_GOLD, pred)
        assert (r.predicted, r.precision) == (2, 1.0)

    def test_duplicates_raise(self):
        with pytest.raises(ValueError):
            triplet_prf(LOBSTER_GOLD, LOBSTER_GOLD + LOBSTER_GOLD[:1])
        with pytest.raises(ValueError):
            triplet_prf(LOBSTER_GOLD + LOBSTER_GOLD[:1], LOBSTER_GOLD)

    def test_empty_sides(self):
        assert triplet_prf([], []).f1 == 0.0
        assert triplet_prf(LOBSTER_GOLD, []).f1 == 0.0

    def test_spurious_prediction_lowers_precision_only(self):
        base = triplet_prf(LOBSTER_GOLD, LOBSTER_GOLD[:1])
        more = triplet_prf(LOBSTER_GOLD, LOBSTER_GOLD[:1] + [("s", t((0, 1), POS, (2, 3)))])
        assert more.precision < base.precision and more.recall == base.recall

    @pytest.mark.parametrize("seed", range(20))
    def test_swap_symmetry(self, seed):
        gold, pred = random_triplet_instance(np.random.default_rng(seed))
        pred = [(sid, x) for sid, x in pred if x.opinions]
        a, b = triplet_prf(gold, pred), triplet_prf(pred, gold)
        assert a.f1 == pytest.approx(b.f1)
        assert (a.precision, a.recall) == pytest.approx((b.recall, b.precision))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            gold, pred = random_triplet_instance(rng)
            r = triplet_prf(gold, pred)
            assert (r.precision, r.recall, r.f1) == pytest.approx(brute_force_prf(gold, pred), abs=1e-12)

    def test_report_counts(self):
        r = MetricReport.from_counts(4, 2, 1)
        assert (r.precision, r.recall) == (0.5, 0.25)
        assert r.f1 == pytest.approx(1 / 3)
        with pytest.raises(ValueError):
            MetricReport.from_counts(1, 1, 2)


def test_atsa_accuracy():
    gold = {("a", Span(0, 1)): POS, ("a", Span(2, 3)): NEG, ("b", Span(0, 1)): NEU, ("b", Span(3, 4)): POS}
    pred = {("a", Span(0, 1)): "positive", ("a", Span(2, 3)): NEG, ("b", Span(0, 1)): POS, ("b", Span(3, 4)): POS}
    assert atsa_accuracy(gold, pred) == 0.75
    del pred[("b", Span(3, 4))]
    with pytest.warns(UserWarning):
        assert atsa_accuracy(gold, pred) == 0.5
    assert atsa_accuracy({}, {}) == 0.0


def brute_towe(gold, pred):
    n_gold = n_pred = hit = 0
    for key in gold:
        g = list(gold[key])
        p = list(pred.get(key, []))
        n_gold += len(g)
        n_pred += len(p)
        for span in p:
            if span in g:
                hit += 1
    precision = hit / n_pred if n_pred else 0.0
    recall = hit / n_gold if n_gold else 0.0
    return precision, recall, (2 * precision * recall / (precision + recall) if hit else 0.0)


def test_towe_f1_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(300):
        gold, pred = {}, {}
        for k in range(int(rng.integers(1, 5))):
            spans = [Span(i, i + 1) for i in range(8)]
            gold[k] = {spans[i] for i in rng.choice(8, int(rng.integers(0, 4)), replace=False)}
            pred[k] = {spans[i] for i in rng.choice(8, int(rng.integers(0, 4)), replace=False)}
        r = towe_f1(gold, pred)
        assert (r.precision, r.recall, r.f1) == pytest.approx(brute_towe(gold, pred))


def test_towe_f1_example():
    gold = {("s", Span(1, 3)): {Span(4, 5), Span(7, 8)}, ("s", Span(11, 12)): {Span(12, 15)}}
    pred = {("s", Span(1, 3)): {Span(4, 5)}, ("s", Span(11, 12)): {Span(12, 14)}}
    r = towe_f1(gold, pred)
    assert (r.precision, r.recall) == pytest.approx((0.5, 1 / 3))


def test_span_f1():
    r = span_f1({"a": {Span(0, 1), Span(2, 4)}, "b": set()}, {"a": {Span(0, 1)}, "b": {Span(1, 2)}})
    assert (r.gold, r.predicted, r.matched) == (2, 2, 1)


def test_tables():
    table = format_prf_table({"AGF": {"14res": MetricReport.from_counts(4, 2, 1)}})
    assert "50.0" in table and "25.0" in table and "33.3" in table
    stats = format_stats_table({"14res": {"train": (3, 5, 3, 1)}})
    assert stats.splitlines()[-1].split() == ["#tc", "1"]


class TestAttentionExport:
    def untrained(self, sentences, vectors, variant="AGF"):
        est = AspectGuidedExtractor(variant=variant, word_vectors=vectors, embedding_dim=16)
        est._build(sentences)
        return est

    def test_normalized_and_near_uniform(self, memorization_sentences, tiny_vectors, tmp_path):
        est = self.untrained(memorization_sentences, tiny_vectors)
        s = memorization_sentences[1]
        records = export_attention(est, s.tokens, s.aspects[0].aspect)
        assert [r["token"] for r in records][:4] == ["the", "#", "lobster", "knuckles"]
        weights = np.array([r["weight"] for r in records])
        assert weights.sum() == pytest.approx(1.0, abs=1e-6)
        n = len(weights)
        # an untrained model has no opinion preference: every weight within 10% of uniform
        assert np.abs(weights * n - 1).max() < 0.1
        path = tmp_path / "att.jsonl"
        write_attention(path, records)
        assert json.loads(path.read_text().splitlines()[0]) == records[0]

    def test_pipeline_variant_has_no_attention(self, memorization_sentences, tiny_vectors):
        est = self.untrained(memorization_sentences, tiny_vectors, "AGF-p")
        with pytest.raises(ValueError):
            export_attention(est, ["the", "bread"], Span(1, 2))

    def test_logit_attention_sharper_than_probability_attention(self, memorization_sentences, tiny_vectors):
        # probabilities bound each score to [0, 1], so their attention cannot concentrate as much
        s = memorization_sentences[0]
        mass = {}
        for variant in ("AGF", "AGF_S"):
            est = AspectGuidedExtractor(variant=variant, word_vectors=tiny_vectors, embedding_dim=16, hidden_size=32,
                                        batch_size=4, learning_rate=1e-2, patience=30, max_epochs=200)
            est.fit(memorization_sentences)
            records = export_attention(est, s.tokens, s.aspects[0].aspect)
            assert [r["token"] for r in records[5:7]] == ["top", "notch"]
            mass[variant] = records[5]["weight"] + records[6]["weight"]
        assert mass["AGF"] > mass["AGF_S"] > 2 / len(records)
