import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from golden_fixtures import GOLDEN, MACG, build_all
from stepwise_qa.datamodel import Paragraph
from stepwise_qa.encoder import (
    CLS,
    SENT,
    SEP,
    EncodingError,
    SubQA,
    TruncationError,
    build_sequence,
    hop_token,
    locate_answer,
    read_manifest,
    sentence_labels,
    sentence_lookup,
    special_tokens,
    truncate,
    write_manifest,
)
from stepwise_qa.filter import RelevantContext


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden_rendering(name):
    assert build_all()[name].render() == GOLDEN[name]


def test_structure_of_first_fixture():
    seq = build_all()["intermediate_empty_history"]
    assert seq.n_sentences == 2
    assert seq.tokens[0] == CLS and seq.cls_position == 0
    assert seq.tokens[1] == "HOP=1"
    assert seq.yes_position is None and seq.no_position is None
    assert all(seq.tokens[p] == SENT for p, _, _ in seq.sent_positions)
    assert sentence_lookup(seq, seq.sent_positions[0][0]) == ("MACG-28", 0)
    assert sentence_lookup(seq, seq.sent_positions[1][0]) == ("MACG-28", 1)
    with pytest.raises(KeyError):
        sentence_lookup(seq, 1)


def test_final_hop_positions():
    seq = build_all()["final_yes_no"]
    assert seq.tokens[seq.yes_position] == "yes" and seq.tokens[seq.no_position] == "no"
    assert seq.yes_position < seq.no_position < seq.sent_positions[0][0]
    assert seq.is_final and seq.hop == 2


def test_zero_paragraphs():
    seq = build_all()["zero_sentence"]
    assert seq.n_sentences == 0 and seq.context_span is None and len(seq) == seq.header_len


def test_truncation_records_dropped_sentences():
    full = build_sequence(1, "Where is MACG-28 based?", [], MACG, False, max_len=None)
    assert len(full) == 31
    cut = truncate(full, 24)
    assert len(cut) == 24 and cut.n_sentences == 1 and cut.dropped == (("MACG-28", 1),)
    header_only = truncate(full, 23)
    assert header_only.n_sentences == 0 and header_only.dropped == (("MACG-28", 0), ("MACG-28", 1))
    assert truncate(full, 31) is full
    with pytest.raises(TruncationError):
        truncate(full, 10)


def test_600_token_sequence_fits_512():
    sents = tuple(f" Sentence number {i} has exactly eight tokens here." for i in range(70))
    ctx = RelevantContext.of([Paragraph("Long", sents, 0)])
    full = build_sequence(1, "What?", [], ctx, False, max_len=None)
    assert len(full) > 600
    cut = truncate(full, 512)
    assert len(cut) <= 512 and cut.n_sentences < 70
    assert cut.n_sentences + len(cut.dropped) == 70
    assert cut.tokens[-1] == SEP


def test_history_contract():
    with pytest.raises(EncodingError):
        build_sequence(0, "q?", [], MACG, False)
    with pytest.raises(EncodingError):
        build_sequence(2, "q?", [SubQA("a?", "b", 2)], MACG, False)
    with pytest.raises(EncodingError):
        build_sequence(4, "q?", [SubQA("a?", "b", 2), SubQA("c?", "d", 1)], MACG, False)
    with pytest.raises(ValueError):
        SubQA("", "x", 1)


def test_long_sub_answer_is_capped():
    answer = " ".join(f"w{i}" for i in range(30))
    seq = build_sequence(2, "q?", [SubQA("what?", answer, 1)], MACG, False)
    toks = list(seq.tokens)
    start = toks.index("[BDG]") + 1
    end = toks.index(SEP, start)
    assert toks[start:end] == [f"w{i}" for i in range(20)] + ["..."]


def test_labels_and_answer_location():
    seq = build_sequence(2, "Where is it?", [], MACG, True)
    assert sentence_labels(seq, {("MACG-28", 0)}) == [1, 0]
    x, y = locate_answer(seq, "Cherry Point", {("MACG-28", 0)})
    assert seq.span_text(x, y) == "Cherry Point"
    assert locate_answer(seq, "yes") == (seq.yes_position, seq.yes_position)
    assert locate_answer(seq, "NO") == (seq.no_position, seq.no_position)
    assert locate_answer(seq, "Quantico") is None
    with pytest.raises(EncodingError):
        locate_answer(build_sequence(1, "q?", [], MACG, False), "x")


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "markers.json"
    write_manifest(path, 4)
    m = read_manifest(path)
    assert m["special_tokens"] == special_tokens(4)
    assert hop_token(4) in m["special_tokens"] and "[SUB]" in m["special_tokens"]


sentence_text = st.text(alphabet=st.sampled_from("abcXYZ 0123.,-'é"), min_size=1, max_size=30).filter(lambda s: s.strip())


@settings(max_examples=150, deadline=None)
@given(st.lists(st.lists(sentence_text, min_size=1, max_size=4), min_size=1, max_size=4), st.data())
def test_offset_map_round_trip(paragraph_sents, data):
    paras = [Paragraph(f"T{i}", tuple(s), i) for i, s in enumerate(paragraph_sents)]
    seq = build_sequence(2, "q?", [], RelevantContext.of(paras), True, max_len=None)
    if not seq.offset_map:
        return
    positions = sorted(seq.offset_map)
    a = data.draw(st.sampled_from(positions))
    same = [p for p in positions if p >= a and seq.offset_map[p][0] == seq.offset_map[a][0]]
    b = data.draw(st.sampled_from(same))
    text = seq.span_text(a, b)
    par_text = seq.paragraph_texts[seq.offset_map[a][0]]
    assert text in par_text
    assert text.startswith(seq.tokens[a]) and text.endswith(seq.tokens[b])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(sentence_text, min_size=1, max_size=4), max_size=4), st.integers(12, 80), st.booleans())
def test_truncate_idempotent_and_bounded(paragraph_sents, max_len, final):
    paras = [Paragraph(f"T{i}", tuple(s), i) for i, s in enumerate(paragraph_sents)]
    full = build_sequence(1 if not final else 2, "Who?", [], RelevantContext.of(paras), final, max_len=None)
    once = truncate(full, max_len)
    assert len(once) <= max_len
    assert truncate(once, max_len) == once
    assert once.n_sentences + len(once.dropped) == full.n_sentences
    assert all(once.tokens[p] == SENT for p, _, _ in once.sent_positions)
    assert (once.yes_position is not None) == final
