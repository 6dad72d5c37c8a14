"""Hop-indexed reader input sequences.

Intermediate hop ``k``::

    [CLS] HOP=k [SEP] Q [SUB] q1 [BDG] a1 ... [SEP] [SENT] s11 [SENT] s12 [SEP] [SENT] s21 ... [SEP]

The final hop inserts ``yes no [SEP]`` right before the context. Every
paragraph is closed by its own ``[SEP]``; the last one doubles as the
sequence terminator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

from .datamodel import SupportPair
from .filter import RelevantContext
from .text import normalize_answer, spans

CLS = "[CLS]"
SEP = "[SEP]"
SENT = "[SENT]"
SUB = "[SUB]"
BDG = "[BDG]"
YES = "yes"
NO = "no"
ELLIPSIS = "..."

DEFAULT_MAX_LEN = 512
MAX_SUB_ANSWER_TOKENS = 20


def hop_token(k: int) -> str:
    return f"HOP={k}"


def special_tokens(max_hops: int) -> list[str]:
    return [CLS, SEP, SENT, SUB, BDG] + [hop_token(k) for k in range(1, max_hops + 1)]


def write_manifest(path: str | Path, max_hops: int) -> None:
    """Persist the reader's marker inventory so other tokenizers can avoid it."""
    Path(path).write_text(
        json.dumps({"special_tokens": special_tokens(max_hops), "answer_tokens": [YES, NO]}, indent=1),
        encoding="utf-8",
    )


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


class EncodingError(ValueError):
    pass


class TruncationError(EncodingError):
    pass


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> list[tuple[str, int, int]]:
        """Tokens with character offsets into ``text``."""
        ...


class WordTokenizer:
    """Word/punctuation splitter used with the tiny backend."""

    def tokenize(self, text: str) -> list[tuple[str, int, int]]:
        return spans(text)


@dataclass(frozen=True)
class SubQA:
    question: str
    answer: str
    hop: int

    def __post_init__(self):
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        if not self.question.strip():
            raise ValueError("sub-question must be non-empty")


@dataclass(frozen=True)
class _SentenceUnit:
    par_pos: int
    title: str
    sentence_index: int
    pieces: tuple[tuple[str, int, int], ...]  # offsets relative to the paragraph text


@dataclass(frozen=True)
class EncodedSequence:
    tokens: tuple[str, ...]
    hop: int
    is_final: bool
    sent_positions: tuple[tuple[int, str, int], ...]
    yes_position: Optional[int]
    no_position: Optional[int]
    context_span: Optional[tuple[int, int]]
    offset_map: Mapping[int, tuple[int, int, int]]  # token -> (paragraph position, char start, char end)
    paragraph_texts: tuple[str, ...]
    header_len: int
    max_len: Optional[int] = None
    dropped: tuple[SupportPair, ...] = ()
    units: tuple[_SentenceUnit, ...] = field(default=(), repr=False, compare=False)

    cls_position: int = 0

    @property
    def n_sentences(self) -> int:
        return len(self.sent_positions)

    def __len__(self) -> int:
        return len(self.tokens)

    def render(self) -> str:
        return " ".join(self.tokens)

    def sentence_pairs(self) -> list[SupportPair]:
        return [(t, i) for _, t, i in self.sent_positions]

    def span_text(self, start: int, end: int) -> str:
        """Original paragraph text covered by context tokens ``start..end``."""
        a, b = self.offset_map.get(start), self.offset_map.get(end)
        if a is None or b is None or a[0] != b[0] or b[2] < a[1]:
            raise EncodingError(f"tokens {start}..{end} do not form a span inside one paragraph")
        return self.paragraph_texts[a[0]][a[1] : b[2]]

    def candidate_positions(self) -> list[int]:
        """Positions the span heads may point at: context words plus yes/no."""
        out = sorted(self.offset_map)
        if self.is_final:
            out = [self.yes_position, self.no_position] + out
        return out


def _cap_answer(pieces: list[tuple[str, int, int]]) -> list[str]:
    toks = [t for t, _, _ in pieces]
    if len(toks) > MAX_SUB_ANSWER_TOKENS:
        toks = toks[:MAX_SUB_ANSWER_TOKENS] + [ELLIPSIS]
    return toks


def _assemble(
    header: list[str],
    yes_pos: Optional[int],
    no_pos: Optional[int],
    units: Sequence[_SentenceUnit],
    hop: int,
    is_final: bool,
    paragraph_texts: tuple[str, ...],
    max_len: Optional[int],
    dropped: tuple[SupportPair, ...] = (),
) -> EncodedSequence:
    tokens = list(header)
    sent_positions = []
    offset_map = {}
    for i, u in enumerate(units):
        sent_positions.append((len(tokens), u.title, u.sentence_index))
        tokens.append(SENT)
        for tok, a, b in u.pieces:
            offset_map[len(tokens)] = (u.par_pos, a, b)
            tokens.append(tok)
        if i + 1 == len(units) or units[i + 1].par_pos != u.par_pos:
            tokens.append(SEP)
    span = (len(header), len(tokens) - 1) if units else None
    return EncodedSequence(
        tokens=tuple(tokens),
        hop=hop,
        is_final=is_final,
        sent_positions=tuple(sent_positions),
        yes_position=yes_pos,
        no_position=no_pos,
        context_span=span,
        offset_map=offset_map,
        paragraph_texts=paragraph_texts,
        header_len=len(header),
        max_len=max_len,
        dropped=dropped,
        units=tuple(units),
    )


def build_sequence(
    hop: int,
    question: str,
    history: Sequence[SubQA],
    context: RelevantContext,
    is_final: bool,
    tokenizer: Optional[Tokenizer] = None,
    max_len: Optional[int] = DEFAULT_MAX_LEN,
) -> EncodedSequence:
    """Encode one hop's reader input; truncates to ``max_len`` when given."""
    if hop < 1:
        raise EncodingError(f"hop must be >= 1, got {hop}")
    prev = 0
    for h in history:
        if h.hop <= prev or h.hop >= hop:
            raise EncodingError(f"history hops must be strictly increasing and below {hop}")
        prev = h.hop
    tok = tokenizer or WordTokenizer()

    header = [CLS, hop_token(hop), SEP]
    header += [t for t, _, _ in tok.tokenize(question)]
    for h in history:
        header.append(SUB)
        header += [t for t, _, _ in tok.tokenize(h.question)]
        header.append(BDG)
        header += _cap_answer(tok.tokenize(h.answer))
    header.append(SEP)
    yes_pos = no_pos = None
    if is_final:
        yes_pos, no_pos = len(header), len(header) + 1
        header += [YES, NO, SEP]

    units = []
    for pi, p in enumerate(context.paragraphs):
        for si, (sent, off) in enumerate(zip(p.sentences, p.sentence_offsets())):
            pieces = tuple((t, a + off, b + off) for t, a, b in tok.tokenize(sent))
            units.append(_SentenceUnit(pi, p.title, si, pieces))
    texts = tuple(p.text for p in context.paragraphs)
    seq = _assemble(header, yes_pos, no_pos, units, hop, is_final, texts, max_len)
    if max_len is not None:
        seq = truncate(seq, max_len)
    return seq


def truncate(seq: EncodedSequence, max_len: int) -> EncodedSequence:
    """Drop whole trailing sentences until the sequence fits in ``max_len``."""
    if seq.header_len > max_len:
        raise TruncationError(f"header of {seq.header_len} tokens exceeds max_len={max_len}")
    if len(seq) <= max_len:
        return seq
    units = list(seq.units)
    dropped = list(seq.dropped)

    def length(us: list[_SentenceUnit]) -> int:
        n = seq.header_len + sum(1 + len(u.pieces) for u in us)
        return n + len({u.par_pos for u in us})

    while units and length(units) > max_len:
        u = units.pop()
        dropped.insert(0, (u.title, u.sentence_index))
    header = list(seq.tokens[: seq.header_len])
    return _assemble(
        header, seq.yes_position, seq.no_position, units, seq.hop, seq.is_final,
        seq.paragraph_texts, max_len, tuple(dropped),
    )


def sentence_lookup(seq: EncodedSequence, marker_index: int) -> SupportPair:
    for pos, title, idx in seq.sent_positions:
        if pos == marker_index:
            return (title, idx)
    raise KeyError(f"token {marker_index} is not a [SENT] marker")


# -- label helpers -------------------------------------------------------------


def sentence_labels(seq: EncodedSequence, positives: frozenset[SupportPair] | set[SupportPair]) -> list[int]:
    return [int((t, i) in positives) for _, t, i in seq.sent_positions]


def locate_answer(
    seq: EncodedSequence, answer: str, prefer: frozenset[SupportPair] | set[SupportPair] = frozenset()
) -> Optional[tuple[int, int]]:
    """Token start/end of ``answer`` in the final-hop sequence.

    yes/no answers point at the inserted tokens. Span answers are searched in
    ``prefer`` sentences first, then anywhere in the retained context.
    """
    if not seq.is_final:
        raise EncodingError("answer spans exist only on the final hop")
    norm = normalize_answer(answer)
    if norm == "yes":
        return (seq.yes_position, seq.yes_position)
    if norm == "no":
        return (seq.no_position, seq.no_position)
    target = normalize_answer(answer).split()
    if not target:
        return None
    # Gather the word tokens of each sentence in order.
    sent_tokens: list[tuple[SupportPair, list[int]]] = []
    markers = [p for p, _, _ in seq.sent_positions] + [len(seq.tokens)]
    for (pos, title, idx), nxt in zip(seq.sent_positions, markers[1:]):
        sent_tokens.append(((title, idx), [i for i in range(pos + 1, nxt) if i in seq.offset_map]))
    ordered = [s for s in sent_tokens if s[0] in prefer] + [s for s in sent_tokens if s[0] not in prefer]
    for _, idxs in ordered:
        norms = [normalize_answer(seq.tokens[i]) for i in idxs]
        for a in range(len(idxs)):
            if not norms[a]:
                continue
            for b in range(a, len(idxs)):
                text = " ".join(n for n in norms[a : b + 1] if n)
                if text == norm:
                    if normalize_answer(seq.span_text(idxs[a], idxs[b])) == norm:
                        return (idxs[a], idxs[b])
                if len(text) > len(norm):
                    break
    return None

