"""Shared test doubles and small corpora."""

from typing import Callable, Sequence

import torch
from torch import nn

from stepwise_qa.datamodel import derive_hop_labels
from stepwise_qa.encoder import EncodedSequence, WordTokenizer
from stepwise_qa.filter import OverlapScorer, select_context
from stepwise_qa.reader import HeadTensors, ReaderParams
from stepwise_qa.synthetic import make_corpus

# (sentence_probs, end_prob, span_start, span_end) for one sequence
Script = Callable[[EncodedSequence], tuple[Sequence[float], float, Sequence[float], Sequence[float]]]


class _Scripted(nn.Module):
    def __init__(self, script: Script):
        super().__init__()
        self.script = script
        self.tokenizer = WordTokenizer()
        self.calls: list[EncodedSequence] = []

    def forward_tensors(self, batch):
        sp, ep, ss, se = [], [], [], []
        for seq in batch:
            self.calls.append(seq)
            s, e, a, b = self.script(seq)
            sp.append(torch.tensor(list(s), dtype=torch.float64))
            ep.append(float(e))
            ss.append(torch.tensor(list(a), dtype=torch.float64))
            se.append(torch.tensor(list(b), dtype=torch.float64))
        return HeadTensors(sp, torch.tensor(ep, dtype=torch.float64), ss, se)


def scripted_reader(script: Script) -> ReaderParams:
    """A reader whose head outputs are computed by ``script`` from the sequence."""
    return ReaderParams(_Scripted(script), {"backend": "scripted"})


def uniform_span(seq: EncodedSequence) -> list[float]:
    return [1.0 / len(seq)] * len(seq)


def train_items(n: int, seed: int = 0, max_hops: int = 2, hops: int = 2, n_distractors: int = 2, prefix: str = "syn"):
    """Synthetic (example, supervision, context) triples."""
    fmt = "hotpot" if max_hops == 2 else "twowiki"
    out = []
    for ex in make_corpus(n, seed=seed, hops=hops, n_distractors=n_distractors, prefix=prefix):
        out.append((ex, derive_hop_labels(ex, max_hops), select_context(ex, OverlapScorer(), fmt)))
    return out
