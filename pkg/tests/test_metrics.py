import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vancl.core import Entity, ValidationError
from vancl.metrics import Counts, entity_prf, score_corpus

Q, A = "QUESTION", "ANSWER"


def test_hand_counted_example():
    s = entity_prf([Entity(Q, 0, 2)], [Entity(Q, 0, 2), Entity(A, 4, 5)])
    assert (s.micro.tp, s.micro.fp, s.micro.fn) == (1, 0, 1)
    assert s.precision == 1.0 and s.recall == 0.5
    assert s.f1 == pytest.approx(2 / 3)


def test_type_mismatch_scores_zero():
    s = entity_prf([Entity(Q, 0, 2)], [Entity(A, 0, 2)])
    assert s.micro.tp == 0 and s.f1 == 0.0


def test_zero_denominators():
    assert Counts(0, 0, 0).prf() == (0.0, 0.0, 0.0)
    assert Counts(0, 0, 3).prf() == (0.0, 0.0, 0.0)


def test_empty_corpus_errors():
    with pytest.raises(ValidationError):
        score_corpus([], [])


ents = st.lists(st.builds(lambda t, a, n: Entity(t, a, a + n), st.sampled_from([Q, A, "HEADER"]),
                          st.integers(0, 20), st.integers(1, 4)), max_size=6)
docs = st.lists(st.tuples(ents, ents), min_size=1, max_size=5)


@settings(max_examples=200)
@given(docs)
def test_metric_invariants(corpus):
    preds, golds = [p for p, _ in corpus], [g for _, g in corpus]
    rep = score_corpus(preds, golds, (Q, A, "HEADER"))
    p, r, f1 = rep.scores.micro.prf()
    assert 0 <= p <= 1 and 0 <= r <= 1 and 0 <= f1 <= max(p, r) + 1e-12
    assert (f1 == 0) == (rep.scores.micro.tp == 0)
    dup = score_corpus(preds * 2, golds * 2, (Q, A, "HEADER"))
    assert dup.scores.micro.prf() == (p, r, f1)
    js = rep.to_json()
    assert sum(v["support"] for v in js["per_type"].values()) == sum(len(g) for g in golds)
    assert js["n_docs"] == len(golds)


def test_single_doc_corpus_equals_entity_prf():
    pred, gold = [Entity(Q, 0, 1), Entity(A, 2, 3)], [Entity(Q, 0, 1)]
    assert score_corpus([pred], [gold]).scores.micro.prf() == entity_prf(pred, gold).micro.prf()


def test_report_shape():
    js = score_corpus([[Entity(Q, 0, 1)]], [[Entity(Q, 0, 1), Entity(A, 1, 2)]], (Q, A, "HEADER")).to_json()
    assert set(js) == {"micro", "per_type", "n_docs"}
    assert set(js["micro"]) == {"p", "r", "f1"}
    assert js["per_type"]["HEADER"] == {"p": 0.0, "r": 0.0, "f1": 0.0, "support": 0}
    assert js["per_type"][A]["support"] == 1
