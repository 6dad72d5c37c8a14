"""Tokenization and normalization helpers shared across modules."""

from __future__ import annotations

import re
import string
from collections.abc import Iterable

# Fixed list, no stemming. Used for prompt intersection, phrase overlap and
# the toy relevance scorer.
STOPWORDS = frozenset(
    """
    a an the and or but if of at by for with about to from in on into as
    is are was were be been being has have had do does did this that these
    those it its which who whom what when where why how than then so not
    """.split()
)

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def spans(text: str) -> list[tuple[str, int, int]]:
    """Split ``text`` into word and punctuation tokens with character offsets."""
    return [(m.group(), m.start(), m.end()) for m in _WORD_RE.finditer(text)]


def words(text: str) -> list[str]:
    """Lowercased word tokens, punctuation removed."""
    return [tok.lower() for tok, _, _ in spans(text) if not is_punct(tok)]


def is_punct(token: str) -> bool:
    return not any(ch.isalnum() for ch in token)


def content_words(text: str) -> list[str]:
    return [w for w in words(text) if w not in STOPWORDS]


def content_bigrams(text: str) -> set[tuple[str, str]]:
    """Adjacent token pairs where neither token is a stopword."""
    toks = words(text)
    return {
        (a, b)
        for a, b in zip(toks, toks[1:])
        if a not in STOPWORDS and b not in STOPWORDS
    }


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES_RE.sub(" ", s)
    return " ".join(s.split())


def contains_phrase(haystack: str, needle: str) -> bool:
    """Whole-word containment after answer normalization."""
    n = normalize_answer(needle)
    if not n:
        return False
    return f" {n} " in f" {normalize_answer(haystack)} "


def first_mention(text: str, phrase: str) -> int | None:
    """Word offset of the first whole-word occurrence of ``phrase`` in ``text``."""
    target = normalize_answer(phrase).split()
    if not target:
        return None
    toks = normalize_answer(text).split()
    n = len(target)
    for i in range(len(toks) - n + 1):
        if toks[i : i + n] == target:
            return i
    return None


def strip_disambiguation(title: str) -> str:
    """``"Cherry Point (band)"`` -> ``"Cherry Point"``."""
    return re.sub(r"\s*\([^)]*\)\s*$", "", title).strip() or title


def dedupe(items: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for it in items:
        if it not in seen:
            seen.add(it)
            out.append(it)
    return out
