import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_example
from stepwise_qa.datamodel import (
    DatasetError,
    HopOverflowError,
    HopSupervision,
    MultiHopExample,
    Paragraph,
    ValidationError,
    derive_hop_labels,
    example_to_record,
    load_dataset,
    scan_dataset,
    validate_example,
    write_dataset,
)


def _record(**over):
    rec = {
        "_id": "r1",
        "question": "Are Alpha Film and Beta Film both dramas?",
        "answer": "yes",
        "supporting_facts": [["Alpha Film", 0], ["Beta Film", 0], ["Beta Film", 1]],
        "context": [["Alpha Film", ["Alpha Film is a drama.", " It is long."]], ["Beta Film", ["Beta Film is a drama.", " It is short."]]]
        + [[f"Filler {i}", [f"Filler {i} is unrelated."]] for i in range(8)],
        "type": "comparison",
        "level": "hard",
    }
    rec.update(over)
    return rec


def _write(tmp_path, records, name="data.json"):
    path = tmp_path / name
    path.write_text(json.dumps(records), encoding="utf-8")
    return path


def test_load_maps_fields(tmp_path):
    [ex] = load_dataset(_write(tmp_path, [_record()]), "hotpot")
    assert len(ex.paragraphs) == 10
    assert len(set(ex.support_titles)) == 2
    assert ex.answer == "yes" and ex.is_yes_no
    assert ex.qtype == "comparison" and ex.level == "hard"
    assert [p.source_index for p in ex.paragraphs] == list(range(10))


def test_load_preserves_order_and_jsonl(tmp_path):
    recs = [_record(_id=f"r{i}") for i in range(5)]
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in recs), encoding="utf-8")
    assert [e.id for e in load_dataset(path, "twowiki")] == [f"r{i}" for i in range(5)]


def test_dangling_support_title_is_a_validation_error(tmp_path):
    bad = _record(supporting_facts=[["Alpha Film", 0], ["Gamma Film", 2]])
    with pytest.raises(ValidationError) as err:
        load_dataset(_write(tmp_path, [bad]))
    assert err.value.record_id == "r1"
    assert ("Gamma Film", 2) in err.value.pairs


def test_parse_error_names_record_and_field(tmp_path):
    bad = _record()
    del bad["question"]
    with pytest.raises(DatasetError) as err:
        load_dataset(_write(tmp_path, [bad]))
    assert err.value.record_id == "r1"
    assert err.value.field_name == "question"


def test_scan_collects_every_bad_record(tmp_path):
    a = _record(_id="a")
    b = _record(_id="b", answer="")
    c = _record(_id="c")
    del c["context"]
    good, errors = scan_dataset(_write(tmp_path, [a, b, c]))
    assert [e.id for e in good] == ["a"]
    assert [rid for rid, _ in errors] == ["b", "c"]


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(ValueError):
        load_dataset(_write(tmp_path, [_record()]), "squad")


def test_validate_example():
    ex = make_example("v", "q?", [("A", ["a.", " b.", " c."])], "x", [("A", 0)])
    assert validate_example(ex) == []
    out_of_range = make_example("v", "q?", [("A", ["a.", " b.", " c."])], "x", [("A", 99)])
    assert len(validate_example(out_of_range)) == 1
    empty_answer = make_example("v", "q?", [("A", ["a."])], "", [("A", 0)])
    assert len(validate_example(empty_answer)) == 1


def test_round_trip(tmp_path):
    recs = [_record(_id="x"), _record(_id="y", answer="Alpha Film", type="bridge")]
    loaded = load_dataset(_write(tmp_path, recs))
    out = tmp_path / "out.json"
    write_dataset(loaded, out)
    again = json.loads(out.read_text(encoding="utf-8"))
    assert again == recs  # dict comparison ignores field order
    assert load_dataset(out) == loaded


def test_paragraph_text_and_offsets():
    p = Paragraph("T", ("One.", " Two.", "Three."), 0)
    assert p.text == "One. Two. Three."
    for off, s in zip(p.sentence_offsets(), p.sentences):
        assert p.text[off : off + len(s)] == s


# -- hop supervision -----------------------------------------------------------


def test_bridge_hop_one_is_the_non_answer_paragraph(bridge_example):
    sup = derive_hop_labels(bridge_example, 2)
    assert sup.hop_labels(1) == {("Spam Musubi", 1)}
    assert sup.end_hop == 1 and sup.end_labels == (1,)
    assert sup.final_labels == set(bridge_example.gold_supports)


def test_comparison_hop_one_is_earliest_title_in_question(comparison_example):
    sup = derive_hop_labels(comparison_example, 2)
    assert sup.hop_labels(1) == {("Kozorra", 0)}
    assert sup.end_hop == 1


def test_single_gold_paragraph():
    ex = make_example("s", "Where was Pim born?", [("Pim", ["Pim is a man.", " He was born in Zut."]), ("Q", ["Q."])],
                      "Zut", [("Pim", 0), ("Pim", 1)])
    sup = derive_hop_labels(ex, 2)
    assert sup.hop_labels(1) == {("Pim", 0), ("Pim", 1)}
    assert sup.end_hop == 1


def _chain_example():
    # Question mentions Film; Film mentions Director; Director mentions City, which holds the answer.
    return make_example(
        "chain",
        "In which country is the birthplace of the director of Tiroka?",
        [
            ("Zembla", ["Zembla is a city in Voria.", " It lies on a river."]),
            ("Distractor", ["Nothing here."]),
            ("Tiroka", ["Tiroka is a film.", " Tiroka was directed by Mabu."]),
            ("Mabu", ["Mabu is a director.", " Mabu was born in Zembla."]),
        ],
        "Voria",
        [("Tiroka", 1), ("Mabu", 1), ("Zembla", 0)],
    )


def test_three_hop_chain_with_k4():
    sup = derive_hop_labels(_chain_example(), 4)
    assert sup.hop_labels(1) == {("Tiroka", 1)}
    assert sup.hop_labels(2) == {("Mabu", 1)}
    assert sup.hop_labels(3) == frozenset()
    assert sup.end_labels == (0, 1, 0) and sup.end_hop == 2


def test_overflow_raises_unless_folded():
    with pytest.raises(HopOverflowError) as err:
        derive_hop_labels(_chain_example(), 2)
    assert err.value.example_id == _chain_example().id
    assert _chain_example().id in str(err.value)
    sup = derive_hop_labels(_chain_example(), 2, fold_overflow=True)
    assert sup.end_hop == 1
    assert sup.hop_labels(1) == {("Tiroka", 1)}
    assert sup.final_labels == {("Tiroka", 1), ("Mabu", 1), ("Zembla", 0)}


def test_no_supports_and_bad_k(bridge_example):
    ex = make_example("n", "q?", [("A", ["a."])], "a", [])
    with pytest.raises(ValueError):
        derive_hop_labels(ex, 2)
    with pytest.raises(ValueError):
        derive_hop_labels(bridge_example, 1)


def test_supervision_json_round_trip(bridge_example):
    sup = derive_hop_labels(bridge_example, 3)
    assert HopSupervision.from_json(json.loads(json.dumps(sup.to_json()))) == sup


@st.composite
def examples(draw):
    n_par = draw(st.integers(1, 6))
    titles = [f"T{i}" for i in range(n_par)]
    paras = [(t, [f"{t} sentence {j}." for j in range(draw(st.integers(1, 3)))]) for t in titles]
    gold_titles = draw(st.lists(st.sampled_from(titles), min_size=1, max_size=n_par, unique=True))
    supports = []
    for t in gold_titles:
        n = len(dict(paras)[t])
        idx = draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True))
        supports += [(t, i) for i in sorted(idx)]
    mention = draw(st.lists(st.sampled_from(titles), max_size=3))
    answer = draw(st.sampled_from(["yes", "no", "sentence", "Zzz"] + titles))
    return make_example("h", "What about " + " and ".join(mention) + "?", paras, answer, supports)


@settings(max_examples=200, deadline=None)
@given(examples(), st.integers(2, 5))
def test_supervision_invariants(ex: MultiHopExample, K: int):
    if len(set(ex.support_titles)) > K:
        with pytest.raises(HopOverflowError):
            derive_hop_labels(ex, K)
    sup = derive_hop_labels(ex, K, fold_overflow=True)
    assert sup == derive_hop_labels(ex, K, fold_overflow=True)
    if len(set(ex.support_titles)) <= K:
        assert derive_hop_labels(ex, K) == sup
    assert sum(sup.end_labels) == 1 and len(sup.end_labels) == K - 1
    assert sup.end_labels[sup.end_hop - 1] == 1
    assert 1 <= sup.end_hop <= K - 1
    for k in range(1, sup.end_hop + 1):
        assert sup.hop_labels(k)
    covered = set().union(*[sup.hop_labels(k) for k in range(1, sup.end_hop + 1)]) | sup.final_labels
    assert covered >= set(ex.gold_supports)
    assert sup.final_labels == set(ex.gold_supports)


def test_record_writer_includes_optional_fields(bridge_example):
    rec = example_to_record(bridge_example)
    assert rec["type"] == "bridge" and "level" not in rec
