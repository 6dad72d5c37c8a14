"""The unified reader: an encoder backend plus sentence, end and span heads."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .encoder import CLS, NO, SEP, YES, EncodedSequence, WordTokenizer, special_tokens
from .text import spans

EPS = 1e-12
PAD = "[PAD]"
UNK = "[UNK]"


class BackendError(RuntimeError):
    pass


class LabelError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


# -- losses ----------------------------------------------------------------------


def _f64(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def loss_sf(sentence_probs, labels, mask=None) -> torch.Tensor:
    """Mean binary cross-entropy over the unmasked sentences."""
    p = _f64(sentence_probs).clamp(EPS, 1 - EPS)
    y = _f64(labels)
    m = torch.ones_like(p) if mask is None else _f64(mask)
    if p.shape != y.shape or p.shape != m.shape:
        raise ValueError(f"shape mismatch: probs {tuple(p.shape)}, labels {tuple(y.shape)}, mask {tuple(m.shape)}")
    n = m.sum()
    if n.item() == 0:
        raise DegenerateInputError("no unmasked sentences")
    bce = -y * torch.log(p) - (1 - y) * torch.log(1 - p)
    return (bce * m).sum() / n


def loss_end(end_prob, label) -> torch.Tensor:
    p = _f64(end_prob).clamp(EPS, 1 - EPS)
    y = float(label)
    return -y * torch.log(p) - (1 - y) * torch.log(1 - p)


def loss_span(span_start, span_end, x: int, y: int, valid: Optional[Iterable[int]] = None) -> torch.Tensor:
    """Negative log-likelihood of the gold start ``x`` and end ``y``.

    ``valid`` optionally lists the admissible label positions (context tokens
    plus the yes/no slots); labels outside it raise :class:`LabelError`.
    """
    ps, pe = _f64(span_start), _f64(span_end)
    n = ps.shape[-1]
    if not (0 <= x < n and 0 <= y < n):
        raise LabelError(f"span label ({x}, {y}) outside a {n}-token sequence")
    if valid is not None:
        allowed = set(valid)
        if x not in allowed or y not in allowed:
            raise LabelError(f"span label ({x}, {y}) is not a context or yes/no position")
    return -torch.log(ps[x].clamp_min(EPS)) - torch.log(pe[y].clamp_min(EPS))


# -- outputs ------------------------------------------------------------------


@dataclass
class ReaderOutputs:
    sentence_probs: np.ndarray
    end_prob: float
    span_start: np.ndarray
    span_end: np.ndarray


@dataclass
class HeadTensors:
    """Differentiable per-sequence head outputs used during training."""

    sentence_probs: list[torch.Tensor]
    end_probs: torch.Tensor
    span_start: list[torch.Tensor]
    span_end: list[torch.Tensor]


# -- backends -----------------------------------------------------------------


def build_vocab(
    texts: Iterable[str], max_hops: int, min_count: int = 1, extra_markers: Sequence[str] = ()
) -> list[str]:
    """Lowercased word vocabulary for the tiny backend, markers first."""
    counts: Counter[str] = Counter()
    for t in texts:
        counts.update(tok.lower() for tok, _, _ in spans(t))
    fixed = [PAD, UNK] + special_tokens(max_hops) + list(extra_markers) + [YES, NO, "..."]
    words = sorted(w for w, c in counts.items() if c >= min_count and w not in fixed)
    return fixed + words


def _is_marker(token: str) -> bool:
    return (token.startswith("[") and token.endswith("]")) or token.startswith("HOP=")


class TinyBackend(nn.Module):
    """Small transformer encoder over a word vocabulary; CPU-friendly and seeded."""

    kind = "tiny"

    def __init__(
        self,
        vocab: Sequence[str],
        max_len: int = 512,
        width: int = 64,
        layers: int = 2,
        heads: int = 4,
        ff: int = 128,
        dropout: float = 0.0,
        seed: int = 0,
    ):
        super().__init__()
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.tokenizer = WordTokenizer()
        self.hidden_size = width
        self.settings = dict(max_len=max_len, width=width, layers=layers, heads=heads, ff=ff, dropout=dropout, seed=seed)
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        self.embed = nn.Embedding(len(self.vocab), width, padding_idx=0)
        self.position = nn.Embedding(max_len, width)
        layer = nn.TransformerEncoderLayer(width, heads, ff, dropout=dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(width)
        torch.random.set_rng_state(gen_state)

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        out = []
        unk = self.index[UNK]
        for t in tokens:
            if _is_marker(t):
                if t not in self.index:
                    raise BackendError(f"marker {t!r} is not in the backend vocabulary")
                out.append(self.index[t])
            else:
                out.append(self.index.get(t.lower(), unk))
        return out

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        pos = torch.arange(input_ids.shape[1], device=input_ids.device)
        h = self.embed(input_ids) + self.position(pos)[None]
        h = self.encoder(h, src_key_padding_mask=~attention_mask.bool())
        return self.norm(h)

    def manifest(self) -> dict[str, Any]:
        return {"kind": self.kind, "settings": self.settings, "vocab": self.vocab}

    def save(self, directory: Path) -> None:
        (directory / "vocab.json").write_text(json.dumps(self.vocab, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def restore(cls, directory: Path, settings: dict[str, Any]) -> "TinyBackend":
        vocab = json.loads((directory / "vocab.json").read_text(encoding="utf-8"))
        return cls(vocab, **settings)


class HFTokenizer:
    """Adapter exposing a fast HuggingFace tokenizer as (token, start, end) triples."""

    def __init__(self, hf_tokenizer):
        self.hf = hf_tokenizer

    def tokenize(self, text: str) -> list[tuple[str, int, int]]:
        enc = self.hf(text, add_special_tokens=False, return_offsets_mapping=True)
        toks = self.hf.convert_ids_to_tokens(enc["input_ids"])
        return [(t, a, b) for t, (a, b) in zip(toks, enc["offset_mapping"])]


class PretrainedBackend(nn.Module):
    """A pretrained bidirectional encoder (BERT/ELECTRA/ALBERT family) with reader markers added."""

    kind = "pretrained"

    def __init__(self, name_or_path: str, max_hops: int, model=None, hf_tokenizer=None,
                 extra_markers: Sequence[str] = ()):
        super().__init__()
        from transformers import AutoModel, AutoTokenizer

        self.name_or_path = name_or_path
        hf_tokenizer = hf_tokenizer or AutoTokenizer.from_pretrained(name_or_path, use_fast=True)
        markers = [t for t in special_tokens(max_hops) if t not in (CLS, SEP)] + list(extra_markers)
        hf_tokenizer.add_special_tokens({"additional_special_tokens": markers})
        self.hf_tokenizer = hf_tokenizer
        self.model = model if model is not None else AutoModel.from_pretrained(name_or_path)
        self.model.resize_token_embeddings(len(hf_tokenizer))
        self.tokenizer = HFTokenizer(hf_tokenizer)
        self.hidden_size = self.model.config.hidden_size
        self.settings = {"name_or_path": name_or_path, "max_hops": max_hops, "extra_markers": list(extra_markers)}
        self._cls, self._sep = hf_tokenizer.cls_token, hf_tokenizer.sep_token

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        mapped = [self._cls if t == CLS else self._sep if t == SEP else t for t in tokens]
        ids = self.hf_tokenizer.convert_tokens_to_ids(mapped)
        unk = self.hf_tokenizer.unk_token_id
        for t, i in zip(mapped, ids):
            if i == unk and _is_marker(t) and t != self.hf_tokenizer.unk_token:
                raise BackendError(f"marker {t!r} is not in the backend vocabulary")
        return ids

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        return self.model(input_ids=input_ids, attention_mask=attention_mask).last_hidden_state

    def manifest(self) -> dict[str, Any]:
        return {"kind": self.kind, "settings": self.settings, "vocab_size": len(self.hf_tokenizer)}

    def save(self, directory: Path) -> None:
        self.hf_tokenizer.save_pretrained(directory / "tokenizer")
        self.model.config.save_pretrained(directory / "encoder_config")

    @classmethod
    def restore(cls, directory: Path, settings: dict[str, Any]) -> "PretrainedBackend":
        from transformers import AutoConfig, AutoModel, AutoTokenizer

        tok = AutoTokenizer.from_pretrained(directory / "tokenizer", use_fast=True)
        model = AutoModel.from_config(AutoConfig.from_pretrained(directory / "encoder_config"))
        return cls(settings["name_or_path"], settings["max_hops"], model=model, hf_tokenizer=tok,
                   extra_markers=settings.get("extra_markers", ()))


BACKENDS = {"tiny": TinyBackend, "pretrained": PretrainedBackend}


# -- reader -------------------------------------------------------------------


class Reader(nn.Module):
    """Backend plus the three heads.

    The sentence head is shared between intermediate hops and the final hop's
    supporting-fact prediction. Heads run in float64.
    """

    def __init__(self, backend: nn.Module):
        super().__init__()
        self.backend = backend
        h = backend.hidden_size
        self.sentence_head = nn.Linear(h, 1).double()
        self.end_head = nn.Linear(h, 1).double()
        self.span_head = nn.Linear(h, 2).double()

    @property
    def tokenizer(self):
        return self.backend.tokenizer

    def encode_batch(self, batch: Sequence[EncodedSequence]) -> torch.Tensor:
        ids = [self.backend.token_ids(seq.tokens) for seq in batch]
        width = max(len(x) for x in ids)
        input_ids = torch.zeros(len(batch), width, dtype=torch.long)
        mask = torch.zeros(len(batch), width, dtype=torch.long)
        for i, x in enumerate(ids):
            input_ids[i, : len(x)] = torch.tensor(x, dtype=torch.long)
            mask[i, : len(x)] = 1
        return self.backend(input_ids, mask).to(torch.float64)

    def heads(self, hidden: torch.Tensor, batch: Sequence[EncodedSequence]) -> HeadTensors:
        """Apply the heads to precomputed hidden states of shape (B, T, H)."""
        sent_probs, starts, ends = [], [], []
        end_probs = torch.sigmoid(self.end_head(hidden[:, 0]).squeeze(-1))
        for i, seq in enumerate(batch):
            h = hidden[i, : len(seq)]
            pos = torch.tensor([p for p, _, _ in seq.sent_positions], dtype=torch.long)
            sent_probs.append(torch.sigmoid(self.sentence_head(h[pos]).squeeze(-1)) if len(pos) else h.new_zeros(0))
            n = len(seq)
            cand = seq.candidate_positions() if seq.is_final else []
            if cand:
                logits = self.span_head(h)
                mask = torch.full((n,), float("-inf"), dtype=torch.float64)
                mask[torch.tensor(cand, dtype=torch.long)] = 0.0
                starts.append(torch.softmax(logits[:, 0] + mask, dim=0))
                ends.append(torch.softmax(logits[:, 1] + mask, dim=0))
            else:
                uniform = torch.full((n,), 1.0 / n, dtype=torch.float64)
                starts.append(uniform)
                ends.append(uniform)
        return HeadTensors(sent_probs, end_probs, starts, ends)

    def forward_tensors(self, batch: Sequence[EncodedSequence]) -> HeadTensors:
        return self.heads(self.encode_batch(batch), batch)


@dataclass
class ReaderParams:
    model: Reader
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def manifest_hash(self) -> str:
        blob = json.dumps(self.model.backend.manifest(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @property
    def tokenizer(self):
        return self.model.tokenizer


def new_reader(backend: str, *, vocab: Optional[Sequence[str]] = None, max_hops: int = 2, **kwargs) -> ReaderParams:
    if backend == "tiny":
        if vocab is None:
            raise ValueError("the tiny backend needs a vocabulary")
        b = TinyBackend(vocab, **kwargs)
    elif backend == "pretrained":
        b = PretrainedBackend(kwargs.pop("name_or_path"), max_hops, **kwargs)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    seed = getattr(b, "settings", {}).get("seed", 0)
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed + 1)
    reader = Reader(b)
    torch.random.set_rng_state(gen_state)
    return ReaderParams(reader, {"backend": backend, "max_hops": max_hops})


def forward(batch: Sequence[EncodedSequence], params: ReaderParams) -> list[ReaderOutputs]:
    """Evaluation-mode forward pass; returns numpy outputs per sequence."""
    if not batch:
        return []
    model = params.model
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model.forward_tensors(batch)
    finally:
        model.train(was_training)
    return [
        ReaderOutputs(
            sentence_probs=out.sentence_probs[i].numpy().copy(),
            end_prob=float(out.end_probs[i]),
            span_start=out.span_start[i].numpy().copy(),
            span_end=out.span_end[i].numpy().copy(),
        )
        for i in range(len(batch))
    ]


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(params: ReaderParams, directory: str | Path, state: Optional[dict[str, Any]] = None) -> Path:
    """Write params, backend vocabulary/manifest and a config snapshot into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    backend = params.model.backend
    backend.save(directory)
    torch.save(params.model.state_dict(), directory / "params.pt")
    meta = {
        "backend": backend.kind,
        "settings": backend.settings,
        "manifest_hash": params.manifest_hash,
        "config": params.config,
    }
    (directory / "manifest.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
    if state is not None:
        torch.save(state, directory / "train_state.pt")
    return directory


def load_checkpoint(directory: str | Path) -> ReaderParams:
    directory = Path(directory)
    manifest = directory / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"no checkpoint at {directory}")
    meta = json.loads(manifest.read_text(encoding="utf-8"))
    backend = BACKENDS[meta["backend"]].restore(directory, meta["settings"])
    reader = Reader(backend)
    reader.load_state_dict(torch.load(directory / "params.pt", weights_only=True))
    reader.eval()
    params = ReaderParams(reader, meta.get("config", {}))
    if params.manifest_hash != meta["manifest_hash"]:
        raise BackendError(f"vocabulary manifest hash mismatch in {directory}")
    return params


def load_train_state(directory: str | Path) -> Optional[dict[str, Any]]:
    path = Path(directory) / "train_state.pt"
    return torch.load(path, weights_only=False) if path.exists() else None

