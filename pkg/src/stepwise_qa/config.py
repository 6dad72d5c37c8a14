"""Training and inference settings with per-dataset defaults."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any


@dataclass(frozen=True)
class TrainingConfig:
    max_hops: int = 2
    lambda1: float = 10.0
    lambda2: float = 2.0
    lambda3: float = 5.0
    batch_size: int = 48
    epochs: int = 10
    learning_rate: float = 3e-5
    warmup_fraction: float = 0.1
    max_seq_len: int = 512
    seed: int = 0
    grad_clip: float = 1.0
    # Loss switches: the separate intermediate-only reader turns the span loss
    # off; the no-intermediate-hop ablation trains the final hop alone.
    span_loss: bool = True
    intermediate_hops: bool = True
    # Inference
    support_threshold: float = 0.5
    end_threshold: float = 0.5
    max_answer_tokens: int = 30
    final_min_supports: int = 2

    def __post_init__(self):
        if self.max_hops < 2:
            raise ValueError(f"max_hops must be >= 2, got {self.max_hops}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0 or self.max_seq_len < 8:
            raise ValueError("batch_size, epochs and max_seq_len must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must be in [0, 1]")

    @classmethod
    def for_dataset(cls, name: str, **overrides: Any) -> "TrainingConfig":
        if name == "hotpot":
            base = cls()
        elif name == "twowiki":
            base = cls(max_hops=4, lambda1=5.0, batch_size=24, epochs=5, learning_rate=5e-5)
        else:
            raise ValueError(f"unknown dataset {name!r}")
        return replace(base, **overrides)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)
