import json
import logging
import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import metric_corpus as mc
from stepwise_qa.metrics import (
    FIELDS,
    answer_scores,
    evaluate,
    joint_scores,
    load_predictions,
    sup_scores,
    write_report,
)


def test_answer_examples():
    s = answer_scores("yes", "yes")
    assert (s.em, s.f1) == (1.0, 1.0)
    s = answer_scores("Cherry Point", "Marine Corps Air Station Cherry Point")
    assert s.em == 0 and s.precision == 1.0
    assert s.recall == pytest.approx(1 / 3, abs=1e-12) and s.f1 == pytest.approx(0.5, abs=1e-12)
    assert answer_scores("The Beatles", "beatles").em == 1.0
    assert answer_scores("yes", "yes sir").f1 == 0.0


def test_sup_and_joint_examples():
    gold = {("A", 0), ("B", 1)}
    assert sup_scores(gold, gold).em == 1 and sup_scores(gold, gold).f1 == 1
    half = sup_scores({("A", 0)}, gold)
    assert (half.precision, half.recall) == (1.0, 0.5) and half.f1 == pytest.approx(2 / 3)
    none = sup_scores({("C", 0)}, gold)
    assert (none.em, none.f1, none.precision, none.recall) == (0, 0, 0, 0)
    assert sup_scores([], gold).precision == 0
    perfect = answer_scores("x", "x")
    em, f1 = joint_scores(perfect, half)
    assert em == 0 and f1 == pytest.approx(2 / 3)
    assert joint_scores(perfect, sup_scores(gold, gold)) == (1.0, 1.0)
    assert joint_scores(answer_scores("a", "b"), half)[1] == 0


@pytest.mark.parametrize("ex_id", sorted(mc.CASES))
def test_per_example_hand_values(ex_id):
    rep = evaluate(mc.predictions([ex_id]), mc.gold([ex_id]))
    for name, want in zip(FIELDS, mc.PER_EXAMPLE[ex_id]):
        assert getattr(rep, name) == pytest.approx(float(want), abs=1e-9), name


def test_ten_example_corpus(caplog):
    with caplog.at_level(logging.WARNING):
        rep = evaluate(mc.predictions(), mc.gold())
    assert "m06" in caplog.text
    assert rep.n == 10
    for name in FIELDS:
        assert getattr(rep, name) == pytest.approx(float(mc.TOTALS[name]), abs=1e-9), name


def test_four_example_corpus():
    ids = ["m01", "m02", "m03", "m04"]
    rep = evaluate(mc.predictions(ids), mc.gold(ids))
    for name in FIELDS:
        assert getattr(rep, name) == pytest.approx(float(mc.FIRST_FOUR[name]), abs=1e-9), name


def test_buckets_and_perfect_predictions():
    gold = mc.gold()
    perfect = {"answer": {e.id: e.answer for e in gold}, "sp": {e.id: [list(p) for p in e.gold_supports] for e in gold}}
    labels = {e.id: ("bridge" if i % 2 else "comparison") for i, e in enumerate(gold)}
    rep = evaluate(perfect, gold, labels)
    assert all(getattr(rep, k) == 1.0 for k in FIELDS)
    assert set(rep.per_bucket) == {"bridge", "comparison"}
    assert rep.per_bucket["bridge"].n == 5


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        evaluate(mc.predictions(), mc.gold(["m01", "m01"]))


def test_report_and_prediction_files(tmp_path):
    p = tmp_path / "preds.json"
    p.write_text(json.dumps(mc.predictions()))
    rep = evaluate(load_predictions(p), mc.gold())
    write_report(rep, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["n"] == 10
    (tmp_path / "bad.json").write_text("[]")
    with pytest.raises(ValueError):
        load_predictions(tmp_path / "bad.json")
    assert "answer_em=0.4000" in rep.render()


phrase = st.lists(st.sampled_from(["a", "the", "red", "fox", "Fox", "yes", "no", "blue", "1,000", "x."]), max_size=5).map(" ".join)


@settings(max_examples=200, deadline=None)
@given(phrase, phrase)
def test_answer_f1_symmetric(a, b):
    assert answer_scores(a, b).f1 == pytest.approx(answer_scores(b, a).f1, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.randoms(use_true_random=False))
def test_corpus_invariants(rng: random.Random):
    gold = mc.gold()
    preds = mc.predictions()
    ids = list(mc.CASES)
    keep = rng.sample(ids, rng.randint(1, len(ids)))
    sub = [g for g in gold if g.id in keep]
    rep = evaluate(preds, sub)
    shuffled = list(sub)
    rng.shuffle(shuffled)
    rep2 = evaluate(preds, shuffled)
    assert rep.to_dict() == rep2.to_dict()
    assert rep.joint_em <= min(rep.answer_em, rep.sup_em)
    assert all(0 <= getattr(rep, k) <= 1 for k in FIELDS)


def test_hand_tables_agree():
    for j, name in enumerate(FIELDS):
        assert sum(F(row[j]) for row in mc.PER_EXAMPLE.values()) / 10 == mc.TOTALS[name], name
