"""Trainable paragraph relevance scorer.

The question and all candidate paragraphs are encoded together; a binary
head on each paragraph's ``[PARA]`` marker predicts whether that paragraph
holds a gold supporting fact. Trained and frozen before reader training.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import torch
from torch import nn

from .datamodel import MultiHopExample, Paragraph
from .encoder import CLS, SEP, WordTokenizer
from .filter import ScorerError
from .reader import BACKENDS, PretrainedBackend, TinyBackend, build_vocab

logger = logging.getLogger(__name__)

PARA = "[PARA]"


@dataclass(frozen=True)
class ScorerInput:
    tokens: tuple[str, ...]
    para_positions: tuple[int, ...]


def scorer_input(question: str, paragraphs: Sequence[Paragraph], tokenizer=None, max_len: int = 512) -> ScorerInput:
    """``[CLS] Q [SEP] [PARA] title : text ... [SEP]`` with an equal token budget per paragraph."""
    tok = tokenizer or WordTokenizer()
    q = [t for t, _, _ in tok.tokenize(question)]
    header = [CLS] + q + [SEP]
    if not paragraphs:
        return ScorerInput(tuple(header), ())
    budget = (max_len - len(header) - 1) // len(paragraphs) - 1
    if budget < 1:
        raise ScorerError(f"question too long for {len(paragraphs)} paragraphs within {max_len} tokens")
    tokens, positions = list(header), []
    for p in paragraphs:
        body = [t for t, _, _ in tok.tokenize(f"{p.title} : {p.text}")][:budget]
        positions.append(len(tokens))
        tokens += [PARA] + body
    tokens.append(SEP)
    return ScorerInput(tuple(tokens), tuple(positions))


class ParagraphScorerModel(nn.Module):
    def __init__(self, backend: nn.Module, max_len: int = 512):
        super().__init__()
        self.backend = backend
        self.max_len = max_len
        self.head = nn.Linear(backend.hidden_size, 1).double()

    def probs(self, inputs: Sequence[ScorerInput]) -> list[torch.Tensor]:
        ids = [self.backend.token_ids(x.tokens) for x in inputs]
        width = max(len(i) for i in ids)
        input_ids = torch.zeros(len(ids), width, dtype=torch.long)
        mask = torch.zeros(len(ids), width, dtype=torch.long)
        for r, x in enumerate(ids):
            input_ids[r, : len(x)] = torch.tensor(x)
            mask[r, : len(x)] = 1
        hidden = self.backend(input_ids, mask).to(torch.float64)
        out = []
        for r, x in enumerate(inputs):
            pos = torch.tensor(x.para_positions, dtype=torch.long)
            out.append(torch.sigmoid(self.head(hidden[r, pos]).squeeze(-1)))
        return out


class NeuralScorer:
    """Frozen scorer usable wherever a relevance scorer is expected."""

    def __init__(self, model: ParagraphScorerModel):
        self.model = model.eval()

    def score(self, question: str, paragraphs: Sequence[Paragraph]) -> list[float]:
        x = scorer_input(question, paragraphs, self.model.backend.tokenizer, self.model.max_len)
        with torch.no_grad():
            p = self.model.probs([x])[0]
        return [float(v) for v in p]

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        b = self.model.backend
        b.save(directory)
        torch.save(self.model.state_dict(), directory / "scorer.pt")
        meta = {"backend": b.kind, "settings": b.settings, "max_len": self.model.max_len}
        (directory / "scorer.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "NeuralScorer":
        directory = Path(directory)
        meta_path = directory / "scorer.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"no paragraph scorer at {directory}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        backend = BACKENDS[meta["backend"]].restore(directory, meta["settings"])
        model = ParagraphScorerModel(backend, meta["max_len"])
        model.load_state_dict(torch.load(directory / "scorer.pt", weights_only=True))
        return cls(model)


def train_scorer(
    examples: Sequence[MultiHopExample],
    backend: str = "tiny",
    *,
    epochs: int = 3,
    batch_size: int = 8,
    learning_rate: float = 1e-3,
    max_len: int = 512,
    seed: int = 0,
    backend_options: Optional[dict] = None,
) -> NeuralScorer:
    """Per-paragraph binary cross-entropy against gold-support membership."""
    if not examples:
        raise ValueError("empty training set")
    opts = dict(backend_options or {})
    torch.manual_seed(seed)
    if backend == "tiny":
        texts = [ex.question for ex in examples] + [f"{p.title} : {p.text}" for ex in examples for p in ex.paragraphs]
        opts.setdefault("seed", seed)
        b = TinyBackend(build_vocab(texts, 2, extra_markers=[PARA]), max_len=max_len, **opts)
    else:
        b = PretrainedBackend(opts.pop("name_or_path"), 2, extra_markers=[PARA], **opts)
    model = ParagraphScorerModel(b, max_len)
    tok = b.tokenizer
    data = []
    for ex in examples:
        gold = set(ex.support_titles)
        x = scorer_input(ex.question, ex.paragraphs, tok, max_len)
        y = torch.tensor([float(p.title in gold) for p in ex.paragraphs], dtype=torch.float64)
        data.append((x, y))
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    rng = random.Random(seed)
    order = list(range(len(data)))
    model.train()
    for epoch in range(epochs):
        rng.shuffle(order)
        total = 0.0
        for s in range(math.ceil(len(order) / batch_size)):
            batch = [data[i] for i in order[s * batch_size : (s + 1) * batch_size]]
            probs = model.probs([x for x, _ in batch])
            loss = sum(
                nn.functional.binary_cross_entropy(p.clamp(1e-12, 1 - 1e-12), y) for p, (_, y) in zip(probs, batch)
            ) / len(batch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
        logger.info("scorer epoch %d loss %.4f", epoch + 1, total / max(1, math.ceil(len(order) / batch_size)))
    return NeuralScorer(model)
