"""Dynamic stepwise inference: intermediate hops, then final-hop answer and supports."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import TrainingConfig
from .datamodel import MultiHopExample, SupportPair
from .decomposer import Answerer, PromptedQGInput, QuestionGenerator, answer_subquestion, generate_subquestion
from .encoder import EncodedSequence, SubQA, build_sequence
from .filter import RelevantContext
from .reader import ReaderOutputs, ReaderParams, forward

logger = logging.getLogger(__name__)


class DecodeError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, message: str, example_id: str, partial_trace: list["HopStep"]):
        self.example_id = example_id
        self.partial_trace = partial_trace
        super().__init__(f"{example_id}: {message} (after {len(partial_trace)} hops)")


@dataclass(frozen=True)
class HopStep:
    hop: int
    predicted_supports: tuple[SupportPair, ...]
    sub_question: str
    sub_answer: str
    end_prob: float

    def to_json(self) -> dict:
        return {
            "hop": self.hop,
            "supports": [list(p) for p in self.predicted_supports],
            "sub_question": self.sub_question,
            "sub_answer": self.sub_answer,
            "end_prob": self.end_prob,
        }


@dataclass(frozen=True)
class Prediction:
    example_id: str
    answer: str
    supports: tuple[SupportPair, ...]
    trace: tuple[HopStep, ...] = field(default=())


ReasoningTrace = tuple[HopStep, ...]


def select_supports(
    outputs: ReaderOutputs, seq: EncodedSequence, threshold: float = 0.5, min_count: int = 1
) -> frozenset[SupportPair]:
    """Sentences scoring above ``threshold``; tops up to ``min_count`` by probability."""
    probs = np.asarray(outputs.sentence_probs, dtype=np.float64)
    if len(probs) != seq.n_sentences:
        raise ValueError(f"{len(probs)} sentence probabilities for {seq.n_sentences} sentences")
    if seq.n_sentences == 0:
        logger.warning("no sentences to select from at hop %d", seq.hop)
        return frozenset()
    chosen = [i for i, p in enumerate(probs) if p > threshold]
    if len(chosen) < min_count:
        # Stable sort keeps the lowest position on ties.
        order = sorted(range(len(probs)), key=lambda i: -probs[i])
        chosen = order[: min(min_count, len(probs))]
    pairs = seq.sentence_pairs()
    return frozenset(pairs[i] for i in chosen)


def _ordered(pairs: Iterable[SupportPair], seq: EncodedSequence) -> tuple[SupportPair, ...]:
    rank = {p: i for i, p in enumerate(seq.sentence_pairs())}
    return tuple(sorted(pairs, key=lambda p: rank.get(p, len(rank))))


def decode_answer(outputs: ReaderOutputs, seq: EncodedSequence, max_answer_tokens: int = 30) -> str:
    """Best start/end pair by ``p_start * p_end`` over valid spans and the yes/no slots.

    Spans stay inside one paragraph and satisfy ``end - start < max_answer_tokens``.
    Ties go to the earliest start, then the earliest end.
    """
    if not seq.is_final:
        raise DecodeError("answers are decoded on the final hop only")
    ps = np.asarray(outputs.span_start, dtype=np.float64)
    pe = np.asarray(outputs.span_end, dtype=np.float64)
    xs, ys, scores = [], [], []
    for slot in (seq.yes_position, seq.no_position):
        xs.append(np.array([slot]))
        ys.append(np.array([slot]))
        scores.append(np.array([ps[slot] * pe[slot]]))
    pos = np.array(sorted(seq.offset_map), dtype=np.int64)
    par = np.array([seq.offset_map[int(p)][0] for p in pos], dtype=np.int64)
    n = len(pos)
    for shift in range(min(max_answer_tokens, n)):
        a, b = pos[: n - shift], pos[shift:]
        ok = (b - a < max_answer_tokens) & (par[: n - shift] == par[shift:])
        if not ok.any():
            continue
        xs.append(a[ok])
        ys.append(b[ok])
        scores.append(ps[a[ok]] * pe[b[ok]])
    x, y, s = np.concatenate(xs), np.concatenate(ys), np.concatenate(scores)
    if len(s) == 0:
        raise DecodeError("no valid answer candidate")
    best = np.lexsort((y, x, -s))[0]
    bx, by = int(x[best]), int(y[best])
    if bx == seq.yes_position:
        return "yes"
    if bx == seq.no_position:
        return "no"
    return seq.span_text(bx, by)


def end_decision(end_prob: float, hop: int, cfg: TrainingConfig) -> bool:
    if hop > cfg.max_hops - 1:
        raise ValueError(f"hop {hop} beyond the last intermediate hop {cfg.max_hops - 1}")
    return end_prob > cfg.end_threshold or hop == cfg.max_hops - 1


def _support_texts(example: MultiHopExample, pairs: Sequence[SupportPair]) -> list[str]:
    return [example.sentence(p) for p in pairs]


def run_stepwise(
    example: MultiHopExample,
    context: RelevantContext,
    reader: ReaderParams,
    generator: QuestionGenerator,
    answerer: Answerer,
    cfg: TrainingConfig,
) -> Prediction:
    """Reason hop by hop until the end head fires (or K-1 hops), then infer the answer."""
    K = cfg.max_hops
    tok = reader.tokenizer
    trace: list[HopStep] = []
    history: list[SubQA] = []
    try:
        if cfg.intermediate_hops:
            for k in range(1, K):
                seq = build_sequence(k, example.question, history, context, False, tok, cfg.max_seq_len)
                out = forward([seq], reader)[0]
                supports = _ordered(select_supports(out, seq, cfg.support_threshold), seq)
                texts = _support_texts(example, supports)
                q = generate_subquestion(PromptedQGInput.build(example.question, texts), generator)
                a = answer_subquestion(q, texts, answerer)
                trace.append(HopStep(k, supports, q, a, out.end_prob))
                history.append(SubQA(q, a, k))
                if end_decision(out.end_prob, k, cfg):
                    break
        seq = build_sequence(K, example.question, history, context, True, tok, cfg.max_seq_len)
        out = forward([seq], reader)[0]
        answer = decode_answer(out, seq, cfg.max_answer_tokens)
        supports = _ordered(select_supports(out, seq, cfg.support_threshold, cfg.final_min_supports), seq)
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(f"{type(e).__name__}: {e}", example.id, trace) from e
    return Prediction(example.id, answer, supports, tuple(trace))


# -- output files -----------------------------------------------------------------


def predictions_payload(preds: Sequence[Prediction]) -> dict:
    return {
        "answer": {p.example_id: p.answer for p in preds},
        "sp": {p.example_id: [list(s) for s in p.supports] for p in preds},
    }


def write_predictions(preds: Sequence[Prediction], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(predictions_payload(preds), ensure_ascii=False, sort_keys=True, indent=1), encoding="utf-8"
    )


def write_traces(preds: Sequence[Prediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            rec = {"_id": p.example_id, "trace": [h.to_json() for h in p.trace]}
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_traces(path: str | Path) -> dict[str, list[dict]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["_id"]] = rec["trace"]
    return out
