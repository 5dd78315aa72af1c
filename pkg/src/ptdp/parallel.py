"""Parallel configuration ``(p, t, d, b, v)`` and the quantities derived from it."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .model import ModelSpec, TrainingJob

GPIPE = "gpipe"
ONE_F_ONE_B = "one_f_one_b"
INTERLEAVED = "interleaved"
SCHEDULE_KINDS = (GPIPE, ONE_F_ONE_B, INTERLEAVED)

_ALIASES = {"1f1b": ONE_F_ONE_B, "pipedream_flush": ONE_F_ONE_B}


def schedule_kind(name: str) -> str:
    kind = _ALIASES.get(name, name)
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule {name!r}; expected one of gpipe, 1f1b, interleaved")
    return kind


class ConfigError(ValueError):
    """A configuration violates one or more constraints; see ``violations``."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DivisibilityError(ConfigError):
    pass


class BudgetError(ConfigError):
    pass


@dataclass(frozen=True)
class ParallelConfig:
    pipeline_size: int = 1
    tensor_size: int = 1
    data_size: int = 1
    microbatch_size: int = 1
    chunks: int = 1
    schedule: str = ONE_F_ONE_B
    scatter_gather: bool = False
    activation_recompute: bool = True

    def __post_init__(self):
        object.__setattr__(self, "schedule", schedule_kind(self.schedule))

    @property
    def devices(self) -> int:
        return self.pipeline_size * self.tensor_size * self.data_size

    @property
    def model_parallel_size(self) -> int:
        return self.tensor_size * self.pipeline_size

    @classmethod
    def from_dict(cls, data: dict) -> "ParallelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown parallel config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "ParallelConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return asdict(self)

    def label(self) -> str:
        text = (
            f"p={self.pipeline_size} t={self.tensor_size} d={self.data_size} "
            f"b={self.microbatch_size} {self.schedule}"
        )
        if self.chunks > 1:
            text += f" v={self.chunks}"
        return text


@dataclass(frozen=True)
class DerivedQuantities:
    devices: int
    microbatches: int  # per pipeline, m = B / (d * b)
    microbatches_total: int  # B / b
    layers_per_stage: int  # l / p
    layers_per_chunk: int  # l / (p * v)
    model_parallel_size: int


def violations(
    config: ParallelConfig,
    model: ModelSpec,
    job: TrainingJob,
    device_budget: int | None = None,
) -> list[tuple[str, str]]:
    """Every violated constraint as ``(category, message)``; empty when valid."""
    found = []
    c = config
    sizes = {
        "pipeline_size": c.pipeline_size,
        "tensor_size": c.tensor_size,
        "data_size": c.data_size,
        "microbatch_size": c.microbatch_size,
        "chunks": c.chunks,
    }
    bad = [f"{k}={v}" for k, v in sizes.items() if not isinstance(v, int) or v < 1]
    if bad:
        return [("config", "sizes must be positive integers: " + ", ".join(bad))]
    if c.chunks > 1 and c.schedule != INTERLEAVED:
        found.append(("config", f"chunks={c.chunks} requires the interleaved schedule"))

    B, per_replica = job.global_batch, c.data_size * c.microbatch_size
    if B % per_replica:
        found.append(
            ("divisibility", f"global batch {B} is not divisible by d*b = {per_replica}")
        )
    elif c.schedule == INTERLEAVED and (B // per_replica) % c.pipeline_size:
        found.append(
            (
                "divisibility",
                f"interleaved schedule needs microbatches m={B // per_replica} "
                f"to be a multiple of p={c.pipeline_size}",
            )
        )
    stage_chunks = c.pipeline_size * c.chunks
    if model.layers % stage_chunks:
        found.append(
            ("divisibility", f"layers {model.layers} are not divisible by p*v = {stage_chunks}")
        )
    if device_budget is not None and c.devices != device_budget:
        found.append(
            ("budget", f"p*t*d = {c.devices} does not match the device budget {device_budget}")
        )
    return found


def validate(
    config: ParallelConfig,
    model: ModelSpec,
    job: TrainingJob,
    device_budget: int | None = None,
) -> DerivedQuantities:
    found = violations(config, model, job, device_budget)
    if found:
        messages = [msg for _, msg in found]
        categories = {cat for cat, _ in found}
        if "divisibility" in categories:
            raise DivisibilityError(messages)
        if "budget" in categories:
            raise BudgetError(messages)
        raise ConfigError(messages)
    c = config
    return DerivedQuantities(
        devices=c.devices,
        microbatches=job.global_batch // (c.data_size * c.microbatch_size),
        microbatches_total=job.global_batch // c.microbatch_size,
        layers_per_stage=model.layers // c.pipeline_size,
        layers_per_chunk=model.layers // (c.pipeline_size * c.chunks),
        model_parallel_size=c.model_parallel_size,
    )
