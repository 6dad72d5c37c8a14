"""Paragraph relevance scoring and selection of the question-relevant context."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

from .datamodel import MultiHopExample, Paragraph, SupportPair
from .text import content_bigrams, content_words

logger = logging.getLogger(__name__)

HOTPOT_CONTEXT_SIZE = 4
TWOWIKI_CONTEXT_SIZE = 5


class SelectionError(ValueError):
    pass


class ScorerError(RuntimeError):
    def __init__(self, message: str, paragraph_index: Optional[int] = None):
        self.paragraph_index = paragraph_index
        super().__init__(message if paragraph_index is None else f"paragraph {paragraph_index}: {message}")


@dataclass(frozen=True)
class ParagraphScore:
    paragraph_ref: int  # source_index
    score: float


@dataclass(frozen=True)
class RelevantContext:
    paragraphs: tuple[Paragraph, ...]
    origin: Mapping[tuple[int, int], SupportPair] = field(default_factory=dict, compare=False)

    @classmethod
    def of(cls, paragraphs: Sequence[Paragraph]) -> "RelevantContext":
        origin = {
            (pi, si): (p.title, si) for pi, p in enumerate(paragraphs) for si in range(len(p.sentences))
        }
        return cls(paragraphs=tuple(paragraphs), origin=origin)

    @property
    def source_indices(self) -> list[int]:
        return [p.source_index for p in self.paragraphs]

    @property
    def titles(self) -> list[str]:
        return [p.title for p in self.paragraphs]

    @classmethod
    def from_indices(cls, example: MultiHopExample, indices: Sequence[int]) -> "RelevantContext":
        by_idx = {p.source_index: p for p in example.paragraphs}
        return cls.of([by_idx[i] for i in indices])


class RelevanceScorer(Protocol):
    def score(self, question: str, paragraphs: Sequence[Paragraph]) -> list[float]: ...


class OverlapScorer:
    """Fraction of the question's content words found in the paragraph (title included)."""

    def score(self, question: str, paragraphs: Sequence[Paragraph]) -> list[float]:
        q = set(content_words(question))
        out = []
        for p in paragraphs:
            if not q:
                out.append(0.0)
                continue
            words = set(content_words(p.title + " " + p.text))
            out.append(len(q & words) / len(q))
        return out


def score_paragraphs(question: str, paragraphs: Sequence[Paragraph], scorer: RelevanceScorer) -> list[ParagraphScore]:
    if not paragraphs:
        raise ValueError("no paragraphs to score")
    try:
        raw = scorer.score(question, paragraphs)
    except ScorerError:
        raise
    except Exception as e:
        raise ScorerError(f"scorer failed: {e}") from e
    if len(raw) != len(paragraphs):
        raise ScorerError(f"scorer returned {len(raw)} scores for {len(paragraphs)} paragraphs")
    out = []
    for p, s in zip(paragraphs, raw):
        s = float(s)
        if not 0.0 <= s <= 1.0:
            raise ScorerError(f"score {s} outside [0, 1]", p.source_index)
        out.append(ParagraphScore(p.source_index, s))
    return out


def _ranked(paragraphs: Sequence[Paragraph], scores: Sequence[ParagraphScore]) -> list[Paragraph]:
    by_ref = {s.paragraph_ref: s.score for s in scores}
    missing = [p.source_index for p in paragraphs if p.source_index not in by_ref]
    if missing:
        raise SelectionError(f"no score for paragraphs {missing}")
    return sorted(paragraphs, key=lambda p: (-by_ref[p.source_index], p.source_index))


def shares_phrase(question: str, paragraph: Paragraph) -> bool:
    """True if question and paragraph share a non-stopword bigram."""
    return bool(content_bigrams(question) & content_bigrams(paragraph.title + " . " + paragraph.text))


def select_hotpot(
    question: str,
    paragraphs: Sequence[Paragraph],
    scores: Sequence[ParagraphScore],
    hyperlinks: Optional[Mapping[str, Sequence[str]]] = None,
    size: int = HOTPOT_CONTEXT_SIZE,
) -> RelevantContext:
    """Two-hop selection: phrase-matched first pick, hyperlinked second, then by score."""
    if len(paragraphs) < 2:
        raise SelectionError("two-hop selection needs at least 2 paragraphs")
    ranked = _ranked(paragraphs, scores)
    first = next((p for p in ranked if shares_phrase(question, p)), ranked[0])
    picks = [first]
    links = set((hyperlinks or {}).get(first.title, ()))
    second = next((p for p in ranked if p is not first and p.title in links), None)
    if second is not None:
        picks.append(second)
    for p in ranked:
        if len(picks) >= size:
            break
        if p not in picks:
            picks.append(p)
    return RelevantContext.of(picks)


def select_topk(scores: Sequence[ParagraphScore], paragraphs: Sequence[Paragraph], k: int = TWOWIKI_CONTEXT_SIZE) -> RelevantContext:
    if k < 1:
        raise ValueError("k must be >= 1")
    return RelevantContext.of(_ranked(paragraphs, scores)[:k])


def select_context(
    example: MultiHopExample,
    scorer: RelevanceScorer,
    format: str = "hotpot",
    hyperlinks: Optional[Mapping[str, Sequence[str]]] = None,
) -> RelevantContext:
    scores = score_paragraphs(example.question, example.paragraphs, scorer)
    if format == "hotpot":
        return select_hotpot(example.question, example.paragraphs, scores, hyperlinks)
    return select_topk(scores, example.paragraphs, TWOWIKI_CONTEXT_SIZE)


def gold_recall(examples: Sequence[MultiHopExample], contexts: Sequence[RelevantContext]) -> float:
    """Fraction of examples whose gold-support paragraphs all survive selection."""
    if not examples:
        return 0.0
    hits = sum(set(ex.support_titles) <= set(ctx.titles) for ex, ctx in zip(examples, contexts))
    return hits / len(examples)


def load_hyperlinks(path: str | Path) -> dict[str, list[str]]:
    """Read a hyperlink sidecar: a JSON object or JSON-lines of ``{"title", "links"}`` records."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        out: dict[str, list[str]] = {}
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                out[rec["title"]] = list(rec["links"])
        return out
    data = json.loads(text)
    return {str(k): list(v) for k, v in data.items()}
