"""Joint training objective, the training loop, and exposure-bias mitigation."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import torch

from .config import TrainingConfig
from .datamodel import HopSupervision, MultiHopExample, SupportPair
from .decomposer import (
    Answerer,
    OverlapAnswerer,
    PromptedQGInput,
    QuestionGenerator,
    TemplateGenerator,
    answer_subquestion,
    generate_subquestion,
)
from .encoder import EncodedSequence, SubQA, build_sequence, locate_answer, sentence_labels
from .filter import RelevantContext
from .pipeline import select_supports
from .reader import (
    HeadTensors,
    ReaderParams,
    build_vocab,
    forward,
    load_checkpoint,
    load_train_state,
    loss_end,
    loss_sf,
    loss_span,
    new_reader,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

Number = Union[float, torch.Tensor]
TrainItem = tuple[MultiHopExample, HopSupervision, RelevantContext]


class SupervisionError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, step: int, diagnostics: dict[str, Any]):
        self.step = step
        self.diagnostics = diagnostics
        super().__init__(f"step {step}: {message}; {diagnostics}")


# -- joint objective -------------------------------------------------------------


@dataclass
class LossBreakdown:
    per_hop_sf: list[Number]
    per_hop_end: list[Number]
    final_sf: Number
    span: Number
    int_sf: Number
    int_end: Number
    total: Number

    def as_floats(self) -> dict[str, Any]:
        f = lambda v: float(v) if v is not None else None  # noqa: E731
        return {
            "per_hop_sf": [f(v) for v in self.per_hop_sf],
            "per_hop_end": [f(v) for v in self.per_hop_end],
            "final_sf": f(self.final_sf),
            "span": f(self.span),
            "int_sf": f(self.int_sf),
            "int_end": f(self.int_end),
            "total": f(self.total),
        }


def end_hop_of(end_labels: Sequence[int]) -> int:
    ones = [k for k, y in enumerate(end_labels, start=1) if int(y) == 1]
    if len(ones) != 1:
        raise SupervisionError(f"expected exactly one end label set, got {list(end_labels)}")
    return ones[0]


def joint_loss(
    per_hop_sf: Sequence[Optional[Number]],
    per_hop_end: Sequence[Optional[Number]],
    end_labels: Sequence[int],
    final_sf: Number,
    span: Number,
    cfg: TrainingConfig,
) -> LossBreakdown:
    """Weighted combination of intermediate, end, final supporting-fact and span losses.

    Intermediate supporting-fact losses count only for hops that are still
    running, i.e. no earlier hop carries the end label; end losses average
    over hops 1..k_e. Entries for hops past k_e may be ``None``.
    """
    n = cfg.max_hops - 1
    if len(per_hop_sf) != n or len(per_hop_end) != n or len(end_labels) != n:
        raise SupervisionError(f"expected {n} per-hop entries for K={cfg.max_hops}")
    k_e = end_hop_of(end_labels)
    # Hop 1 always counts; hop k>1 counts while the reasoning has not ended.
    running = [1] + [0] * (n - 1)
    for k in range(2, n + 1):
        running[k - 1] = running[k - 2] * (1 - int(end_labels[k - 2]))
    sf_sum: Number = 0.0
    for k in range(1, n + 1):
        if running[k - 1]:
            sf_sum = sf_sum + per_hop_sf[k - 1]
    int_sf = sf_sum / sum(running)
    end_sum: Number = 0.0
    for k in range(1, k_e + 1):
        end_sum = end_sum + per_hop_end[k - 1]
    int_end = end_sum / k_e
    total = cfg.lambda1 * int_sf + cfg.lambda2 * int_end + cfg.lambda3 * final_sf + span
    return LossBreakdown(list(per_hop_sf), list(per_hop_end), final_sf, span, int_sf, int_end, total)


# -- teacher-forced inputs ------------------------------------------------------


@dataclass(frozen=True)
class HopRecord:
    """One cached (S_k, q_k, a_k) triple used to build later-hop inputs."""

    hop: int
    supports: tuple[SupportPair, ...]
    question: str
    answer: str

    def to_json(self) -> dict:
        return {"hop": self.hop, "supports": [list(p) for p in self.supports], "question": self.question, "answer": self.answer}

    @classmethod
    def from_json(cls, d: dict) -> "HopRecord":
        return cls(d["hop"], tuple((t, int(i)) for t, i in d["supports"]), d["question"], d["answer"])


def _doc_order(example: MultiHopExample, pairs) -> tuple[SupportPair, ...]:
    rank = {p.title: p.source_index for p in example.paragraphs}
    return tuple(sorted(pairs, key=lambda p: (rank.get(p[0], 1 << 30), p[1])))


def teacher_history(
    example: MultiHopExample,
    supervision: HopSupervision,
    generator: QuestionGenerator,
    answerer: Answerer,
    supports_override: Optional[Sequence[frozenset[SupportPair]]] = None,
) -> list[HopRecord]:
    """Sub-questions and sub-answers for hops 1..k_e from supervision supports.

    ``supports_override`` replaces the gold per-hop supports (used with
    re-predicted supports when mitigating exposure bias).
    """
    out = []
    for k in range(1, supervision.end_hop + 1):
        pairs = supports_override[k - 1] if supports_override is not None else supervision.hop_labels(k)
        pairs = _doc_order(example, pairs)
        texts = [example.sentence(p) for p in pairs]
        q = generate_subquestion(PromptedQGInput.build(example.question, texts), generator)
        a = answer_subquestion(q, texts, answerer)
        out.append(HopRecord(k, pairs, q, a))
    return out


@dataclass
class TrainingInstance:
    example_id: str
    sequences: list[EncodedSequence]
    sf_labels: list[list[int]]
    end_labels: tuple[int, ...]
    end_hop: int
    span_label: Optional[tuple[int, int]]

    @property
    def n_intermediate(self) -> int:
        return len(self.sequences) - 1


def build_instance(
    example: MultiHopExample,
    supervision: HopSupervision,
    context: RelevantContext,
    history: Sequence[HopRecord],
    cfg: TrainingConfig,
    tokenizer=None,
) -> TrainingInstance:
    K = cfg.max_hops
    if supervision.max_hops != K:
        raise SupervisionError(f"{example.id}: supervision built for K={supervision.max_hops}, config has K={K}")
    subqa = [SubQA(h.question, h.answer, h.hop) for h in history]
    seqs, labels = [], []
    if cfg.intermediate_hops:
        for k in range(1, supervision.end_hop + 1):
            seq = build_sequence(k, example.question, subqa[: k - 1], context, False, tokenizer, cfg.max_seq_len)
            seqs.append(seq)
            labels.append(sentence_labels(seq, supervision.hop_labels(k)))
        final_history = subqa[: supervision.end_hop]
    else:
        final_history = []
    final = build_sequence(K, example.question, final_history, context, True, tokenizer, cfg.max_seq_len)
    seqs.append(final)
    labels.append(sentence_labels(final, supervision.final_labels))
    span = locate_answer(final, example.answer, supervision.final_labels)
    if span is None:
        logger.debug("%s: answer not found in the retained context; span loss masked", example.id)
    return TrainingInstance(example.id, seqs, labels, supervision.end_labels, supervision.end_hop, span)


def _sf_or_zero(probs: torch.Tensor, labels: Sequence[int]) -> torch.Tensor:
    # A hop whose sentences were all truncated away contributes nothing.
    if len(labels) == 0:
        return probs.new_zeros(())
    return loss_sf(probs, labels)


def instance_loss(inst: TrainingInstance, heads: HeadTensors, offset: int, cfg: TrainingConfig) -> LossBreakdown:
    """Joint loss for one instance whose sequences start at ``offset`` in ``heads``."""
    m = inst.n_intermediate
    fin = offset + m
    final_sf = _sf_or_zero(heads.sentence_probs[fin], inst.sf_labels[-1])
    if inst.span_label is not None and cfg.span_loss:
        x, y = inst.span_label
        valid = inst.sequences[-1].candidate_positions()
        span = loss_span(heads.span_start[fin], heads.span_end[fin], x, y, valid)
    else:
        span = final_sf.new_zeros(())
    if not cfg.intermediate_hops:
        zero = final_sf.new_zeros(())
        total = cfg.lambda3 * final_sf + span
        return LossBreakdown([], [], final_sf, span, zero, zero, total)
    n = cfg.max_hops - 1
    sf: list[Optional[Number]] = [None] * n
    end: list[Optional[Number]] = [None] * n
    for k in range(1, m + 1):
        sf[k - 1] = _sf_or_zero(heads.sentence_probs[offset + k - 1], inst.sf_labels[k - 1])
        end[k - 1] = loss_end(heads.end_probs[offset + k - 1], inst.end_labels[k - 1])
    return joint_loss(sf, end, inst.end_labels, final_sf, span, cfg)


# -- training loop --------------------------------------------------------------


def _linear_schedule(total_steps: int, warmup_fraction: float) -> Callable[[int], float]:
    warmup = int(round(total_steps * warmup_fraction))

    def factor(step: int) -> float:
        if warmup > 0 and step < warmup:
            return (step + 1) / warmup
        return max(0.0, (total_steps - step) / max(1, total_steps - warmup))

    return factor


def training_texts(train_set: Sequence[TrainItem], histories: Mapping[str, Sequence[HopRecord]]) -> list[str]:
    texts = []
    for ex, _, ctx in train_set:
        texts.append(ex.question)
        texts.extend(s for p in ctx.paragraphs for s in p.sentences)
        for h in histories.get(ex.id, ()):
            texts.extend([h.question, h.answer])
    return texts


@dataclass
class TrainResult:
    params: ReaderParams
    log: list[dict[str, Any]] = field(default_factory=list)
    steps: int = 0


def train(
    train_set: Sequence[TrainItem],
    cfg: TrainingConfig,
    backend: Union[str, ReaderParams] = "tiny",
    *,
    generator: Optional[QuestionGenerator] = None,
    answerer: Optional[Answerer] = None,
    histories: Optional[Mapping[str, Sequence[HopRecord]]] = None,
    backend_options: Optional[dict[str, Any]] = None,
    log_path: Optional[str | Path] = None,
    checkpoint_dir: Optional[str | Path] = None,
    resume: bool = False,
    max_steps: Optional[int] = None,
    stop_after: Optional[int] = None,
    on_step: Optional[Callable[[int, LossBreakdown], None]] = None,
) -> TrainResult:
    """Jointly train the reader over every hop of every example.

    ``backend`` is a backend name (``"tiny"`` or ``"pretrained"``) or an
    existing :class:`ReaderParams` to continue from. Histories default to
    teacher-forced sub-QA pairs built from gold per-hop supports.
    ``max_steps`` shortens the schedule; ``stop_after`` halts at that step
    with the schedule intact, so a later ``resume`` continues it exactly.
    """
    if not train_set:
        raise ValueError("empty training set")
    generator = generator or TemplateGenerator()
    answerer = answerer or OverlapAnswerer()
    if histories is None:
        histories = {ex.id: teacher_history(ex, sup, generator, answerer) for ex, sup, _ in train_set}
    missing = [ex.id for ex, _, _ in train_set if ex.id not in histories and cfg.intermediate_hops]
    if missing:
        raise SupervisionError(f"no teacher-forced history for {missing[:5]}")

    torch.manual_seed(cfg.seed)
    opts = dict(backend_options or {})
    state = None
    if resume and checkpoint_dir is not None and (Path(checkpoint_dir) / "manifest.json").exists():
        params = load_checkpoint(checkpoint_dir)
        state = load_train_state(checkpoint_dir)
    elif isinstance(backend, ReaderParams):
        params = backend
    elif backend == "tiny":
        opts.setdefault("max_len", cfg.max_seq_len)
        opts.setdefault("seed", cfg.seed)
        vocab = build_vocab(training_texts(train_set, histories), cfg.max_hops)
        params = new_reader("tiny", vocab=vocab, max_hops=cfg.max_hops, **opts)
    else:
        params = new_reader(backend, max_hops=cfg.max_hops, **opts)
    params.config = {**params.config, "training": cfg.to_dict()}
    model = params.model
    tok = params.tokenizer

    instances = [
        build_instance(ex, sup, ctx, histories.get(ex.id, ()), cfg, tok) for ex, sup, ctx in train_set
    ]
    per_epoch = math.ceil(len(instances) / cfg.batch_size)
    total_steps = per_epoch * cfg.epochs
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, _linear_schedule(total_steps, cfg.warmup_fraction))
    step = 0
    rng = random.Random(cfg.seed)
    order = list(range(len(instances)))
    if state is not None:
        optimizer.load_state_dict(state["optimizer"])
        scheduler.load_state_dict(state["scheduler"])
        step = state["step"]
        rng.setstate(state["rng"])
        order = list(state["order"])
        torch.random.set_rng_state(state["torch_rng"])
        logger.info("resuming at step %d", step)

    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    log: list[dict[str, Any]] = []
    model.train()
    try:
        stop = total_steps if stop_after is None else min(total_steps, stop_after)
        while step < stop:
            epoch_pos = step % per_epoch
            if epoch_pos == 0:
                rng.shuffle(order)
            idx = order[epoch_pos * cfg.batch_size : (epoch_pos + 1) * cfg.batch_size]
            batch = [instances[i] for i in idx]
            flat = [s for inst in batch for s in inst.sequences]
            heads = model.forward_tensors(flat)
            breakdowns, offset = [], 0
            for inst in batch:
                breakdowns.append(instance_loss(inst, heads, offset, cfg))
                offset += len(inst.sequences)
            loss = sum(b.total for b in breakdowns) / len(breakdowns)
            record = _mean_breakdown(breakdowns)
            record.update(step=step, lr=scheduler.get_last_lr()[0], seed=cfg.seed)
            if not torch.isfinite(loss):
                raise TrainingError("non-finite loss", step, {"ids": [inst.example_id for inst in batch], **record})
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip and cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            scheduler.step()
            step += 1
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            if on_step:
                on_step(step, breakdowns[0])
    finally:
        if log_fh:
            log_fh.close()
    model.eval()
    if checkpoint_dir is not None:
        save_checkpoint(
            params,
            checkpoint_dir,
            {
                "optimizer": optimizer.state_dict(),
                "scheduler": scheduler.state_dict(),
                "step": step,
                "rng": rng.getstate(),
                "torch_rng": torch.random.get_rng_state(),
                "order": order,
            },
        )
    return TrainResult(params, log, step)


def _mean_breakdown(items: Sequence[LossBreakdown]) -> dict[str, Any]:
    keys = ("final_sf", "span", "int_sf", "int_end", "total")
    return {k: sum(float(torch.as_tensor(getattr(b, k)).detach()) for b in items) / len(items) for k in keys}


# -- exposure-bias mitigation -------------------------------------------------------


def intermediate_only(cfg: TrainingConfig) -> TrainingConfig:
    """Config for the separate reader that learns intermediate supports only."""
    return replace(cfg, lambda3=0.0, span_loss=False, intermediate_hops=True)


def repredict_supports(
    train_set: Sequence[TrainItem],
    intermediate_only_params: ReaderParams,
    cfg: TrainingConfig,
    generator: Optional[QuestionGenerator] = None,
    answerer: Optional[Answerer] = None,
    flip_prob: float = 0.0,
    seed: int = 0,
) -> dict[str, list[frozenset[SupportPair]]]:
    """Per-hop predicted supports for hops 1..k_e of every training example.

    Predictions are kept as-is, mistakes included. Later hops see the
    sub-QA history built from earlier re-predicted supports. ``flip_prob``
    optionally injects extra sentence flips.
    """
    generator = generator or TemplateGenerator()
    answerer = answerer or OverlapAnswerer()
    rng = random.Random(seed)
    tok = intermediate_only_params.tokenizer
    out: dict[str, list[frozenset[SupportPair]]] = {}
    for ex, sup, ctx in train_set:
        history: list[SubQA] = []
        hops = []
        for k in range(1, sup.end_hop + 1):
            seq = build_sequence(k, ex.question, history, ctx, False, tok, cfg.max_seq_len)
            res = forward([seq], intermediate_only_params)[0]
            pred = set(select_supports(res, seq, cfg.support_threshold))
            if flip_prob > 0:
                for pair in seq.sentence_pairs():
                    if rng.random() < flip_prob:
                        pred ^= {pair}
                if not pred and seq.n_sentences:
                    pred = {seq.sentence_pairs()[0]}
            pairs = _doc_order(ex, pred)
            hops.append(frozenset(pairs))
            texts = [ex.sentence(p) for p in pairs]
            q = generate_subquestion(PromptedQGInput.build(ex.question, texts), generator)
            history.append(SubQA(q, answer_subquestion(q, texts, answerer), k))
        out[ex.id] = hops
    return out


def disagreement_rate(
    repredicted: Mapping[str, Sequence[frozenset[SupportPair]]], gold: Mapping[str, HopSupervision]
) -> float:
    """Fraction of (example, hop) pairs whose re-predicted supports differ from gold."""
    total = wrong = 0
    for ex_id, hops in repredicted.items():
        sup = gold[ex_id]
        for k, pred in enumerate(hops, start=1):
            total += 1
            wrong += set(pred) != set(sup.hop_labels(k))
    return wrong / total if total else 0.0


@dataclass(frozen=True)
class AugmentationPair:
    example_id: str
    hop: int
    input: str
    target: str

    def to_json(self) -> dict:
        return {"_id": self.example_id, "hop": self.hop, "input": self.input, "target": self.target}


def build_qg_augmentation(
    repredicted: Mapping[str, Sequence[frozenset[SupportPair]]],
    gold_supervision: Mapping[str, HopSupervision],
    generator: QuestionGenerator,
    examples: Mapping[str, MultiHopExample],
) -> list[AugmentationPair]:
    """Generator training pairs: re-predicted supports in, gold-grounded question out."""
    pairs = []
    for ex_id in repredicted:
        ex, sup = examples[ex_id], gold_supervision[ex_id]
        for k, pred in enumerate(repredicted[ex_id], start=1):
            try:
                gold_texts = [ex.sentence(p) for p in _doc_order(ex, sup.hop_labels(k))]
                target = generate_subquestion(PromptedQGInput.build(ex.question, gold_texts), generator)
                pred_texts = [ex.sentence(p) for p in _doc_order(ex, pred)]
                inp = PromptedQGInput.build(ex.question, pred_texts).rendered
            except Exception as e:  # generator failures skip the pair
                logger.warning("skipping augmentation for %s hop %d: %s", ex_id, k, e)
                continue
            pairs.append(AugmentationPair(ex_id, k, inp, target))
    return pairs


@dataclass
class MitigationResult:
    main: TrainResult
    repredicted: dict[str, list[frozenset[SupportPair]]]
    augmentation: list[AugmentationPair]
    histories: dict[str, list[HopRecord]]


def train_with_bias_mitigation(
    train_set: Sequence[TrainItem],
    cfg: TrainingConfig,
    backend: str = "tiny",
    *,
    generator: Optional[QuestionGenerator] = None,
    answerer: Optional[Answerer] = None,
    backend_options: Optional[dict[str, Any]] = None,
    log_path: Optional[str | Path] = None,
    checkpoint_dir: Optional[str | Path] = None,
    flip_prob: float = 0.0,
) -> "MitigationResult":
    """Two-phase training: separate intermediate reader, re-predict, augment, main run."""
    generator = generator or TemplateGenerator()
    answerer = answerer or OverlapAnswerer()
    first = train(
        train_set, intermediate_only(cfg), backend, generator=generator, answerer=answerer,
        backend_options=backend_options,
    )
    repredicted = repredict_supports(
        train_set, first.params, cfg, generator, answerer, flip_prob=flip_prob, seed=cfg.seed
    )
    gold = {ex.id: sup for ex, sup, _ in train_set}
    examples = {ex.id: ex for ex, _, _ in train_set}
    augmentation = build_qg_augmentation(repredicted, gold, generator, examples)
    histories = {
        ex.id: teacher_history(ex, sup, generator, answerer, repredicted[ex.id]) for ex, sup, _ in train_set
    }
    main = train(
        train_set, cfg, backend, generator=generator, answerer=answerer, histories=histories,
        backend_options=backend_options, log_path=log_path, checkpoint_dir=checkpoint_dir,
    )
    return MitigationResult(main, repredicted, augmentation, histories)
