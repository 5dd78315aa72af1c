"""Transformer architecture description and closed-form size/FLOP/time formulas.

All formulas assume a GPT-style decoder stack of identical layers followed by
a logit (vocabulary projection) layer.  A FLOP is counted regardless of the
numeric precision it runs at.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path


@dataclass(frozen=True)
class ModelSpec:
    layers: int
    hidden_size: int
    attention_heads: int
    sequence_length: int
    vocab_size: int
    name: str = ""

    def __post_init__(self):
        for field in ("layers", "hidden_size", "attention_heads", "sequence_length", "vocab_size"):
            value = getattr(self, field)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{field} must be a positive integer, got {value!r}")
        if self.hidden_size % self.attention_heads:
            raise ValueError(
                f"hidden_size {self.hidden_size} is not divisible by "
                f"attention_heads {self.attention_heads}"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        keys = ("layers", "hidden_size", "attention_heads", "sequence_length", "vocab_size")
        missing = [k for k in keys if k not in data]
        if missing:
            raise ValueError(f"model description is missing keys: {', '.join(missing)}")
        return cls(**{k: data[k] for k in keys}, name=str(data.get("name", "")))

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainingJob:
    global_batch: int
    total_tokens: float = 0.0
    achieved_throughput: float | None = None  # FLOP/s per device

    def __post_init__(self):
        if self.global_batch < 1:
            raise ValueError(f"global_batch must be >= 1, got {self.global_batch}")
        if self.total_tokens < 0:
            raise ValueError(f"total_tokens must be >= 0, got {self.total_tokens}")


@dataclass(frozen=True)
class FlopBreakdown:
    """Per-iteration FLOPs split by GEMM.

    The five transformer entries are forward-pass FLOPs of a *single* layer
    for the whole batch; ``layer_factor`` multiplies them into forward +
    backward (+ recomputed forward) work and ``layers`` scales to the stack.
    ``logit_layer`` already includes its backward pass.
    """

    qkv_transform: int
    attention_matrix: int
    attention_over_values: int
    post_attention_projection: int
    feed_forward: int
    logit_layer: int
    layers: int
    layer_factor: int

    @property
    def layer_forward(self) -> int:
        return (
            self.qkv_transform
            + self.attention_matrix
            + self.attention_over_values
            + self.post_attention_projection
            + self.feed_forward
        )

    @property
    def per_layer(self) -> int:
        return self.layer_factor * self.layer_forward

    @property
    def total(self) -> int:
        return self.layers * self.per_layer + self.logit_layer


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def param_count(spec: ModelSpec) -> int:
    l, h, s, V = spec.layers, spec.hidden_size, spec.sequence_length, spec.vocab_size
    return _round_half_up(12 * l * h**2 * (1 + 13 / (12 * h) + (V + s) / (12 * l * h)))


def flops_breakdown(spec: ModelSpec, global_batch: int, recompute: bool = True) -> FlopBreakdown:
    if global_batch < 1:
        raise ValueError(f"global_batch must be >= 1, got {global_batch}")
    B, s, h = global_batch, spec.sequence_length, spec.hidden_size
    return FlopBreakdown(
        qkv_transform=6 * B * s * h**2,
        attention_matrix=2 * B * s**2 * h,
        attention_over_values=2 * B * s**2 * h,
        post_attention_projection=2 * B * s * h**2,
        feed_forward=16 * B * s * h**2,
        logit_layer=6 * B * s * h * spec.vocab_size,
        layers=spec.layers,
        layer_factor=4 if recompute else 3,
    )


def flops_per_iteration(spec: ModelSpec, global_batch: int, recompute: bool = True) -> float:
    """FLOPs of one training iteration over ``global_batch`` sequences.

    With ``recompute`` the transformer term includes the extra forward pass run
    before each backward pass.  Turning it off scales only the transformer
    term by 3/4; the logit layer is never recomputed.

    The closed form is expanded into integer terms so the result is the
    correctly rounded float of the exact count (the count overflows 2**53
    at paper scale).
    """
    if global_batch < 1:
        raise ValueError(f"global_batch must be >= 1, got {global_batch}")
    B, s, l, h, V = (
        global_batch,
        spec.sequence_length,
        spec.layers,
        spec.hidden_size,
        spec.vocab_size,
    )
    # 96Bslh^2 (1 + s/6h) == 96Bslh^2 + 16Bs^2lh; the logit term V/16lh gives 6BshV.
    transformer = 96 * B * s * l * h**2 + 16 * B * s**2 * l * h
    if not recompute:
        transformer = transformer * 3 // 4
    return float(transformer + 6 * B * s * h * V)


def training_time_estimate(params: float, tokens: float, devices: int, throughput: float) -> float:
    """End-to-end training seconds, ``8 * T * P / (n * X)``."""
    if params <= 0 or tokens <= 0 or devices <= 0 or throughput <= 0:
        raise ValueError("params, tokens, devices and throughput must all be positive")
    return 8 * tokens * params / (devices * throughput)


def iterations(spec: ModelSpec, job: TrainingJob) -> float:
    return job.total_tokens / (job.global_batch * spec.sequence_length)


def layer_forward_flops(spec: ModelSpec, microbatch: int) -> int:
    """Forward FLOPs of one transformer layer for ``microbatch`` sequences."""
    s, h = spec.sequence_length, spec.hidden_size
    return 24 * microbatch * s * h**2 + 4 * microbatch * s**2 * h


SECONDS_PER_DAY = 86400.0
