"""Grounded single-hop question generation and single-hop answering."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .text import STOPWORDS, dedupe, is_punct, spans, words

logger = logging.getLogger(__name__)

MAX_ANSWER_TOKENS = 20

# Words the template generator may introduce that come from neither the
# supports nor the prompt.
TEMPLATE_WORDS = frozenset({"what", "where", "when", "who", "is", "about"})
_AUX = ("is", "was", "are", "were")
_PLACE_PREPS = ("at", "in", "on")


class GeneratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class PromptedQGInput:
    prompt: tuple[str, ...]
    supports: tuple[str, ...]

    @property
    def rendered(self) -> str:
        return " ".join(["[CLS]", *self.prompt, "[SEP]", *(s.strip() for s in self.supports), "[SEP]"])

    @classmethod
    def build(cls, question: str, supports: Sequence[str]) -> "PromptedQGInput":
        return cls(tuple(intersection_prompt(question, supports)), tuple(supports))


@dataclass(frozen=True)
class SimpleQARecord:
    context_sentence: str
    question: str
    answer_text: str
    answer_start: int

    def __post_init__(self):
        if self.context_sentence[self.answer_start : self.answer_start + len(self.answer_text)] != self.answer_text:
            raise ValueError(f"answer {self.answer_text!r} not found at offset {self.answer_start}")


def intersection_prompt(question: str, supports: Sequence[str]) -> list[str]:
    """Question tokens that also occur in the supports, in question order.

    Tokens are case-folded with punctuation and stopwords removed.
    """
    support_vocab = {w for s in supports for w in words(s)}
    return dedupe(w for w in words(question) if w not in STOPWORDS and w in support_vocab)


class QuestionGenerator(Protocol):
    def generate(self, inp: PromptedQGInput) -> str: ...


class Answerer(Protocol):
    def answer(self, question: str, supports: Sequence[str]) -> str: ...


class TemplateGenerator:
    """Deterministic rule-based generator for CPU runs and tests.

    Picks the support sentence sharing most prompt tokens and rewrites its
    copular clause into a wh-question, so every output word comes from the
    supports, the prompt, or :data:`TEMPLATE_WORDS`.
    """

    def generate(self, inp: PromptedQGInput) -> str:
        if not inp.supports:
            return ""
        prompt = set(inp.prompt)
        sents = [words(s) for s in inp.supports]
        best = max(range(len(sents)), key=lambda i: (len(prompt & set(sents[i])), -i))
        toks = sents[best]
        if not toks:
            return ""
        aux_i = next((i for i, t in enumerate(toks) if i > 0 and t in _AUX), None)
        if aux_i is None:
            subject = [t for t in toks if t in prompt] or toks[:3]
            return "what about " + " ".join(subject)
        subject, aux, rest = toks[:aux_i], toks[aux_i], toks[aux_i + 1 :]
        for j, t in enumerate(rest):
            if t in _PLACE_PREPS:
                obj = rest[j + 1 : j + 2]
                wh = "when" if obj and obj[0].isdigit() and len(obj[0]) == 4 else "where"
                return " ".join([wh, aux, *subject, *rest[:j]])
            if t == "by":
                return " ".join(["who", aux, *subject, *rest[:j], "by"])
        return " ".join(["what", aux, *subject])


class OverlapAnswerer:
    """Lexical span picker: the best run of non-question content tokens.

    Runs are ranked by how many question words their sentence shares, then
    capitalization, then distance to the nearest question word.
    """

    def answer(self, question: str, supports: Sequence[str]) -> str:
        text = " ".join(s.strip() for s in supports)
        toks = spans(text)
        if not toks:
            return ""
        qwords = set(words(question))
        content_q = qwords - STOPWORDS

        sentence_of, sent_id = [], 0
        for tok, _, _ in toks:
            sentence_of.append(sent_id)
            if tok in (".", "!", "?"):
                sent_id += 1
        overlap: dict[int, int] = {}
        for sid in set(sentence_of):
            sent_words = {toks[i][0].lower() for i in range(len(toks)) if sentence_of[i] == sid}
            overlap[sid] = len(content_q & sent_words)
        anchors = [i for i, (tok, _, _) in enumerate(toks) if tok.lower() in content_q]

        def keep(i: int) -> bool:
            tok = toks[i][0]
            low = tok.lower()
            return not is_punct(tok) and low not in STOPWORDS and low not in qwords

        runs, i = [], 0
        while i < len(toks):
            if keep(i):
                j = i
                while j + 1 < len(toks) and keep(j + 1) and sentence_of[j + 1] == sentence_of[i] and j + 1 - i < MAX_ANSWER_TOKENS:
                    j += 1
                runs.append((i, j))
                i = j + 1
            else:
                i += 1
        if not runs:
            # Nothing outside the question: fall back to the first word token.
            first = next((t for t in toks if not is_punct(t[0])), toks[0])
            return text[first[1] : first[2]]

        def score(run: tuple[int, int]) -> tuple:
            a, b = run
            cap = toks[a][0][:1].isupper() or toks[a][0][:1].isdigit()
            dist = min((min(abs(a - k), abs(b - k)) for k in anchors), default=len(toks))
            return (overlap.get(sentence_of[a], 0), cap, -dist, -a)

        a, b = max(runs, key=score)
        return text[toks[a][1] : toks[b][2]]


def _fallback_question(inp: PromptedQGInput) -> str:
    subject = list(inp.prompt) or (words(inp.supports[0])[:3] if inp.supports else [])
    return "what is " + " ".join(subject) + "?"


def generate_subquestion(inp: PromptedQGInput, generator: QuestionGenerator) -> str:
    """Generate ``q_k`` and normalize it to a non-empty question ending in '?'."""
    q = (generator.generate(inp) or "").strip()
    q = re.sub(r"[\s.!?]+$", "", q)
    if not q:
        logger.warning("empty generation for prompt %r; using fallback question", inp.prompt)
        return _fallback_question(inp)
    return q + "?"


def answer_subquestion(q: str, supports: Sequence[str], answerer: Answerer) -> str:
    if not supports or not any(s.strip() for s in supports):
        logger.warning("no supports to answer %r", q)
        return ""
    return answerer.answer(q, supports)


def build_qg_pretraining(corpus: Sequence[SimpleQARecord]) -> list[tuple[str, str]]:
    """(rendered prompt+sentence, question) pairs for generator pretraining."""
    return [(PromptedQGInput.build(r.question, [r.context_sentence]).rendered, r.question) for r in corpus]


# -- simple-question corpus ------------------------------------------------------

_SENT_SPLIT = re.compile(r"(?<=[.!?])\s+(?=[A-Z0-9\"'(])")


def _sentence_bounds(context: str) -> list[tuple[int, int]]:
    bounds, start = [], 0
    for m in _SENT_SPLIT.finditer(context):
        bounds.append((start, m.start()))
        start = m.end()
    bounds.append((start, len(context)))
    return bounds


def _record_from(context: str, question: str, answer: str, start: int) -> Optional[SimpleQARecord]:
    if context[start : start + len(answer)] != answer:
        return None
    for a, b in _sentence_bounds(context):
        if a <= start and start + len(answer) <= b:
            return SimpleQARecord(context[a:b], question, answer, start - a)
    return None  # answer crosses a sentence boundary


def load_simple_corpus(path: str | Path) -> list[SimpleQARecord]:
    """Read SQuAD-style nested JSON or flat records (context/question/answer/answer_start).

    Each record is reduced to the single sentence holding the answer; answers
    that straddle sentences are skipped.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        raw = [json.loads(line) for line in text.splitlines() if line.strip()]
    else:
        raw = json.loads(text)
    items: list[tuple[str, str, str, int]] = []
    if isinstance(raw, dict) and "data" in raw:
        for article in raw["data"]:
            for para in article["paragraphs"]:
                for qa in para["qas"]:
                    if qa.get("is_impossible") or not qa.get("answers"):
                        continue
                    ans = qa["answers"][0]
                    items.append((para["context"], qa["question"], ans["text"], ans["answer_start"]))
    else:
        for r in raw:
            items.append((r["context"], r["question"], r["answer"], r["answer_start"]))
    out, skipped = [], 0
    for ctx, q, a, s in items:
        rec = _record_from(ctx, q, a, s)
        if rec is None:
            skipped += 1
        else:
            out.append(rec)
    if skipped:
        logger.info("skipped %d records whose answer is not inside one sentence", skipped)
    return out


# -- pretrained implementations ---------------------------------------------------


class Seq2SeqGenerator:
    """Encoder-decoder question generator (e.g. BART) decoding greedily by default."""

    def __init__(self, name_or_path: str, model=None, tokenizer=None, max_input_len: int = 512,
                 max_new_tokens: int = 48, num_beams: int = 1):
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        self.tokenizer = tokenizer or AutoTokenizer.from_pretrained(name_or_path)
        self.model = model or AutoModelForSeq2SeqLM.from_pretrained(name_or_path)
        self.model.eval()
        self.max_input_len = max_input_len
        self.max_new_tokens = max_new_tokens
        self.num_beams = num_beams

    def generate(self, inp: PromptedQGInput) -> str:
        import torch

        enc = self.tokenizer(inp.rendered, return_tensors="pt", truncation=True, max_length=self.max_input_len)
        with torch.no_grad():
            out = self.model.generate(
                **enc, max_new_tokens=self.max_new_tokens, num_beams=self.num_beams, do_sample=False
            )
        return self.tokenizer.decode(out[0], skip_special_tokens=True)


class ExtractiveAnswerer:
    """Extractive QA model; picks argmax start*end with start <= end and bounded length."""

    def __init__(self, name_or_path: str, model=None, tokenizer=None, max_answer_tokens: int = MAX_ANSWER_TOKENS,
                 max_len: int = 384):
        from transformers import AutoModelForQuestionAnswering, AutoTokenizer

        self.tokenizer = tokenizer or AutoTokenizer.from_pretrained(name_or_path, use_fast=True)
        self.model = model or AutoModelForQuestionAnswering.from_pretrained(name_or_path)
        self.model.eval()
        self.max_answer_tokens = max_answer_tokens
        self.max_len = max_len

    def answer(self, question: str, supports: Sequence[str]) -> str:
        import torch

        context = " ".join(s.strip() for s in supports)
        enc = self.tokenizer(
            question, context, return_tensors="pt", truncation="only_second",
            max_length=self.max_len, return_offsets_mapping=True,
        )
        offsets = enc.pop("offset_mapping")[0].tolist()
        seq_ids = enc.sequence_ids(0)
        with torch.no_grad():
            out = self.model(**enc)
        ps = torch.softmax(out.start_logits[0], -1)
        pe = torch.softmax(out.end_logits[0], -1)
        ctx = [i for i, s in enumerate(seq_ids) if s == 1]
        if not ctx:
            return ""
        best, best_score = (ctx[0], ctx[0]), -1.0
        for i in ctx:
            for j in ctx:
                if j < i or j - i >= self.max_answer_tokens:
                    continue
                score = float(ps[i] * pe[j])
                if score > best_score:
                    best, best_score = (i, j), score
        return context[offsets[best[0]][0] : offsets[best[1]][1]]


def finetune_generator(pairs: Sequence[tuple[str, str]], name_or_path: str, out_dir: str | Path,
                       epochs: int = 3, lr: float = 3e-5, batch_size: int = 16, seed: int = 0) -> Path:
    """Fine-tune a seq2seq model on (input, target) pairs and save it to ``out_dir``."""
    import random

    import torch
    from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

    torch.manual_seed(seed)
    tok = AutoTokenizer.from_pretrained(name_or_path)
    model = AutoModelForSeq2SeqLM.from_pretrained(name_or_path)
    opt = torch.optim.AdamW(model.parameters(), lr=lr)
    order = list(range(len(pairs)))
    rng = random.Random(seed)
    model.train()
    for _ in range(epochs):
        rng.shuffle(order)
        for b in range(0, len(order), batch_size):
            chunk = [pairs[i] for i in order[b : b + batch_size]]
            enc = tok([c[0] for c in chunk], text_target=[c[1] for c in chunk], return_tensors="pt",
                      padding=True, truncation=True, max_length=512)
            enc["labels"][enc["labels"] == tok.pad_token_id] = -100
            loss = model(**enc).loss
            loss.backward()
            opt.step()
            opt.zero_grad()
    out_dir = Path(out_dir)
    model.save_pretrained(out_dir)
    tok.save_pretrained(out_dir)
    return out_dir


def finetune_answerer(corpus: Sequence[SimpleQARecord], name_or_path: str, out_dir: str | Path,
                      epochs: int = 2, lr: float = 3e-5, batch_size: int = 16, seed: int = 0) -> Path:
    """Fine-tune an extractive QA model on single-sentence records."""
    import random

    import torch
    from transformers import AutoModelForQuestionAnswering, AutoTokenizer

    torch.manual_seed(seed)
    tok = AutoTokenizer.from_pretrained(name_or_path, use_fast=True)
    model = AutoModelForQuestionAnswering.from_pretrained(name_or_path)
    opt = torch.optim.AdamW(model.parameters(), lr=lr)
    rng = random.Random(seed)
    order = list(range(len(corpus)))
    model.train()
    for _ in range(epochs):
        rng.shuffle(order)
        for b in range(0, len(order), batch_size):
            chunk = [corpus[i] for i in order[b : b + batch_size]]
            enc = tok([r.question for r in chunk], [r.context_sentence for r in chunk], return_tensors="pt",
                      padding=True, truncation="only_second", max_length=384, return_offsets_mapping=True)
            offsets = enc.pop("offset_mapping")
            starts, ends = [], []
            for k, r in enumerate(chunk):
                a, b_ = r.answer_start, r.answer_start + len(r.answer_text)
                seq_ids = enc.sequence_ids(k)
                s = e = 0
                for i, ((o0, o1), sid) in enumerate(zip(offsets[k].tolist(), seq_ids)):
                    if sid != 1:
                        continue
                    if o0 <= a < o1:
                        s = i
                    if o0 < b_ <= o1:
                        e = i
                starts.append(s)
                ends.append(max(e, s))
            loss = model(**enc, start_positions=torch.tensor(starts), end_positions=torch.tensor(ends)).loss
            loss.backward()
            opt.step()
            opt.zero_grad()
    out_dir = Path(out_dir)
    model.save_pretrained(out_dir)
    tok.save_pretrained(out_dir)
    return out_dir


def make_generator(kind: str, name_or_path: Optional[str] = None) -> QuestionGenerator:
    if kind == "stub":
        return TemplateGenerator()
    if kind == "pretrained":
        if not name_or_path:
            raise ValueError("a pretrained generator needs a model path")
        return Seq2SeqGenerator(name_or_path)
    raise ValueError(f"unknown generator {kind!r}")


def make_answerer(kind: str, name_or_path: Optional[str] = None) -> Answerer:
    if kind == "stub":
        return OverlapAnswerer()
    if kind == "pretrained":
        if not name_or_path:
            raise ValueError("a pretrained answerer needs a model path")
        return ExtractiveAnswerer(name_or_path)
    raise ValueError(f"unknown answerer {kind!r}")
