"""Corpus-facing types, dataset I/O and per-hop supervision derivation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from .text import contains_phrase, first_mention, normalize_answer, strip_disambiguation

SupportPair = tuple[str, int]

FORMATS = ("hotpot", "twowiki")


class DatasetError(ValueError):
    """A record could not be parsed into a :class:`MultiHopExample`."""

    def __init__(self, message: str, record_id: Optional[str] = None, field_name: Optional[str] = None):
        self.record_id = record_id
        self.field_name = field_name
        where = []
        if record_id is not None:
            where.append(f"record {record_id!r}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ValidationError(DatasetError):
    """A parsed record violates an example invariant."""

    def __init__(self, record_id: str, violations: list[str], pairs: Sequence[SupportPair] = ()):
        self.violations = violations
        self.pairs = list(pairs)
        super().__init__("; ".join(violations), record_id=record_id)


class HopOverflowError(ValueError):
    def __init__(self, example_id: str, n_paragraphs: int, max_hops: int):
        self.example_id = example_id
        super().__init__(
            f"example {example_id!r}: gold supports span {n_paragraphs} paragraphs, more than K={max_hops}"
        )


@dataclass(frozen=True)
class Paragraph:
    title: str
    sentences: tuple[str, ...]
    source_index: int

    @property
    def text(self) -> str:
        return "".join(self._pieces())

    def sentence_offsets(self) -> list[int]:
        """Character offset of each sentence inside :attr:`text`."""
        offsets, pos = [], 0
        for piece, sent in zip(self._pieces(), self.sentences):
            pos += len(piece) - len(sent)
            offsets.append(pos)
            pos += len(sent)
        return offsets

    def _pieces(self) -> list[str]:
        # HotpotQA sentences carry their own leading whitespace; 2Wiki ones don't.
        out = []
        for i, s in enumerate(self.sentences):
            if i > 0 and s and not s[0].isspace() and out and not out[-1][-1:].isspace():
                out.append(" " + s)
            else:
                out.append(s)
        return out


@dataclass(frozen=True)
class MultiHopExample:
    id: str
    question: str
    paragraphs: tuple[Paragraph, ...]
    answer: str
    gold_supports: tuple[SupportPair, ...]
    qtype: Optional[str] = None
    level: Optional[str] = None

    def paragraph(self, title: str) -> Optional[Paragraph]:
        for p in self.paragraphs:
            if p.title == title:
                return p
        return None

    def sentence(self, pair: SupportPair) -> str:
        p = self.paragraph(pair[0])
        if p is None or not 0 <= pair[1] < len(p.sentences):
            raise KeyError(pair)
        return p.sentences[pair[1]]

    @property
    def support_titles(self) -> list[str]:
        seen: list[str] = []
        for title, _ in self.gold_supports:
            if title not in seen:
                seen.append(title)
        return seen

    @property
    def is_yes_no(self) -> bool:
        return normalize_answer(self.answer) in ("yes", "no")


@dataclass(frozen=True)
class HopSupervision:
    """Per-hop labels; lists are indexed by ``hop - 1`` for hops 1..K-1."""

    max_hops: int
    per_hop_sentence_labels: tuple[frozenset[SupportPair], ...]
    end_labels: tuple[int, ...]
    end_hop: int
    final_labels: frozenset[SupportPair]

    def hop_labels(self, hop: int) -> frozenset[SupportPair]:
        return self.per_hop_sentence_labels[hop - 1]

    def to_json(self) -> dict[str, Any]:
        return {
            "max_hops": self.max_hops,
            "per_hop_sentence_labels": [sorted(map(list, s)) for s in self.per_hop_sentence_labels],
            "end_labels": list(self.end_labels),
            "end_hop": self.end_hop,
            "final_labels": sorted(map(list, self.final_labels)),
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "HopSupervision":
        return cls(
            max_hops=d["max_hops"],
            per_hop_sentence_labels=tuple(
                frozenset((t, int(i)) for t, i in s) for s in d["per_hop_sentence_labels"]
            ),
            end_labels=tuple(d["end_labels"]),
            end_hop=d["end_hop"],
            final_labels=frozenset((t, int(i)) for t, i in d["final_labels"]),
        )


# -- parsing ------------------------------------------------------------------


def _require(record: dict, key: str, rid: Optional[str], kind: type | tuple[type, ...]) -> Any:
    if key not in record:
        raise DatasetError("missing field", rid, key)
    value = record[key]
    if not isinstance(value, kind):
        raise DatasetError(f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}", rid, key)
    return value


def parse_record(record: Any) -> MultiHopExample:
    if not isinstance(record, dict):
        raise DatasetError(f"record must be an object, got {type(record).__name__}")
    rid = record.get("_id")
    if not isinstance(rid, str):
        raise DatasetError("missing or non-text id", None, "_id")
    question = _require(record, "question", rid, str)
    answer = _require(record, "answer", rid, str)
    context = _require(record, "context", rid, list)
    paragraphs = []
    for i, item in enumerate(context):
        if not (isinstance(item, (list, tuple)) and len(item) == 2):
            raise DatasetError(f"entry {i} is not a [title, sentences] pair", rid, "context")
        title, sents = item
        if not isinstance(title, str) or not isinstance(sents, list) or not all(isinstance(s, str) for s in sents):
            raise DatasetError(f"entry {i} has malformed title or sentences", rid, "context")
        paragraphs.append(Paragraph(title=title, sentences=tuple(sents), source_index=i))
    sfs = _require(record, "supporting_facts", rid, list)
    supports: list[SupportPair] = []
    for i, sf in enumerate(sfs):
        if not (isinstance(sf, (list, tuple)) and len(sf) == 2 and isinstance(sf[0], str) and isinstance(sf[1], int)):
            raise DatasetError(f"entry {i} is not a [title, sentence_index] pair", rid, "supporting_facts")
        pair = (sf[0], sf[1])
        if pair not in supports:
            supports.append(pair)
    return MultiHopExample(
        id=rid,
        question=question,
        paragraphs=tuple(paragraphs),
        answer=answer,
        gold_supports=tuple(supports),
        qtype=record.get("type"),
        level=record.get("level"),
    )


def validate_example(example: MultiHopExample) -> list[str]:
    """Return human-readable invariant violations; empty means valid."""
    problems = []
    if not example.answer.strip():
        problems.append("answer is empty")
    seen_idx = set()
    for p in example.paragraphs:
        if not p.title.strip():
            problems.append(f"paragraph {p.source_index} has an empty title")
        if not p.sentences:
            problems.append(f"paragraph {p.title!r} has no sentences")
        if p.source_index < 0 or p.source_index in seen_idx:
            problems.append(f"paragraph {p.title!r} has invalid source_index {p.source_index}")
        seen_idx.add(p.source_index)
    for title, idx in example.gold_supports:
        p = example.paragraph(title)
        if p is None:
            problems.append(f"supporting fact [{title!r}, {idx}] names a missing title")
        elif not 0 <= idx < len(p.sentences):
            problems.append(
                f"supporting fact [{title!r}, {idx}] is out of range for a {len(p.sentences)}-sentence paragraph"
            )
    return problems


def _read_records(path: Path) -> list[Any]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        try:
            return [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}: invalid JSON line: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, list):
        raise DatasetError(f"{path}: top level must be an array of records")
    return data


def load_dataset(path: str | Path, format: str = "hotpot") -> list[MultiHopExample]:
    """Load a HotpotQA / 2WikiMultiHopQA style file, preserving record order.

    Raises:
        DatasetError: a record does not parse; names the record id and field.
        ValidationError: a parsed record breaks an invariant (e.g. a dangling
            supporting-fact title).
    """
    if format not in FORMATS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    examples = []
    for record in _read_records(Path(path)):
        ex = parse_record(record)
        problems = validate_example(ex)
        if problems:
            dangling = [pair for pair in ex.gold_supports if ex.paragraph(pair[0]) is None]
            raise ValidationError(ex.id, problems, dangling)
        examples.append(ex)
    return examples


def scan_dataset(path: str | Path, format: str = "hotpot") -> tuple[list[MultiHopExample], list[tuple[Optional[str], str]]]:
    """Like :func:`load_dataset` but collects every bad record as ``(id, message)``."""
    if format not in FORMATS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    examples, errors = [], []
    for record in _read_records(Path(path)):
        try:
            ex = parse_record(record)
        except DatasetError as e:
            errors.append((e.record_id, str(e)))
            continue
        problems = validate_example(ex)
        if problems:
            errors.append((ex.id, "; ".join(problems)))
        else:
            examples.append(ex)
    return examples, errors


def example_to_record(example: MultiHopExample) -> dict[str, Any]:
    rec: dict[str, Any] = {
        "_id": example.id,
        "question": example.question,
        "answer": example.answer,
        "supporting_facts": [[t, i] for t, i in example.gold_supports],
        "context": [[p.title, list(p.sentences)] for p in example.paragraphs],
    }
    if example.qtype is not None:
        rec["type"] = example.qtype
    if example.level is not None:
        rec["level"] = example.level
    return rec


def write_dataset(examples: Iterable[MultiHopExample], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([example_to_record(e) for e in examples], ensure_ascii=False, indent=1),
        encoding="utf-8",
    )


# -- hop supervision -------------------------------------------------------------


def _question_position(question: str, title: str) -> float:
    pos = first_mention(question, strip_disambiguation(title))
    return math.inf if pos is None else pos


def _order_chain(question: str, paras: list[Paragraph], seed: Optional[Paragraph] = None) -> list[Paragraph]:
    """Greedy title-mention chain.

    At each step prefer a paragraph whose title is mentioned in the question or
    in the previously chained paragraph, then earliest question mention, then
    source order.
    """
    chain = [seed] if seed is not None else []
    remaining = [p for p in paras if p is not seed]
    while remaining:
        prev_text = chain[-1].text if chain else ""

        def key(p: Paragraph) -> tuple:
            title = strip_disambiguation(p.title)
            linked = first_mention(question, title) is not None or (
                bool(prev_text) and contains_phrase(prev_text, title)
            )
            return (0 if linked else 1, _question_position(question, p.title), p.source_index)

        nxt = min(remaining, key=key)
        chain.append(nxt)
        remaining.remove(nxt)
    return chain


def gold_chain(example: MultiHopExample) -> list[Paragraph]:
    """Order the gold paragraphs into a reasoning chain ending at the answer."""
    gold = sorted(
        (p for p in example.paragraphs if p.title in set(example.support_titles)),
        key=lambda p: p.source_index,
    )
    if len(gold) <= 1:
        return gold
    holders = [] if example.is_yes_no else [p for p in gold if contains_phrase(p.text, example.answer)]
    if len(holders) == 1:
        final = holders[0]
        return _order_chain(example.question, [p for p in gold if p is not final]) + [final]
    first = min(gold, key=lambda p: (_question_position(example.question, p.title), p.source_index))
    return _order_chain(example.question, gold, seed=first)


def derive_hop_labels(example: MultiHopExample, max_hops: int, fold_overflow: bool = False) -> HopSupervision:
    """Build per-hop supporting-sentence and end labels from gold supports.

    Chains with more paragraphs than ``max_hops`` raise :class:`HopOverflowError`;
    with ``fold_overflow`` their trailing paragraphs go to the final hop instead.
    """
    if max_hops < 2:
        raise ValueError("max_hops must be at least 2")
    chain = gold_chain(example)
    if not chain:
        raise ValueError(f"example {example.id!r} has no gold supporting facts")
    if not fold_overflow and len(chain) > max_hops:
        raise HopOverflowError(example.id, len(chain), max_hops)
    end_hop = max(1, min(len(chain) - 1, max_hops - 1))
    gold = example.gold_supports
    per_hop = []
    for k in range(1, max_hops):
        if k <= end_hop:
            para = chain[min(k - 1, len(chain) - 1)]
            per_hop.append(frozenset(pair for pair in gold if pair[0] == para.title))
        else:
            per_hop.append(frozenset())
    return HopSupervision(
        max_hops=max_hops,
        per_hop_sentence_labels=tuple(per_hop),
        end_labels=tuple(1 if k == end_hop else 0 for k in range(1, max_hops)),
        end_hop=end_hop,
        final_labels=frozenset(gold),
    )
