"""Analytical cost models: communication volumes, task durations, memory.

Volumes are returned as exact ``Fraction`` byte counts so the scatter/gather
and interleaving ratios hold exactly; convert with ``float()`` for timing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .hardware import INTER_NODE, INTRA_NODE
from .model import ModelSpec, layer_forward_flops, param_count
from .parallel import ParallelConfig
from .schedule import peak_inflight_closed_form

BYTES_PER_ELEMENT = 2  # fp16/bf16 activations and gradients
OPTIMIZER_BYTES_PER_PARAM = 16
INTERMEDIATE_TO_INPUT_RATIO = 17
BACKWARD_TO_FORWARD_RATIO = 2.0


@dataclass(frozen=True)
class CommVolumes:
    """Bytes moved per device; link classes say which network carries each."""

    pp_p2p_per_microbatch: Fraction
    tp_allreduce_per_microbatch_per_device: Fraction
    dp_allreduce_per_batch: Fraction
    pp_link: str = INTER_NODE
    tp_link: str = INTRA_NODE
    dp_link: str = INTER_NODE


@dataclass(frozen=True)
class TaskDurations:
    """Seconds for one microbatch through *all* of a device's layers.

    An interleaved device splits these evenly over its chunks.  Any
    recomputed forward pass is already folded into ``t_b``.
    """

    t_f: float
    t_b: float

    def __post_init__(self):
        if not (np.all(np.asarray(self.t_f) > 0) and np.all(np.asarray(self.t_b) > 0)):
            raise ValueError(f"durations must be positive (t_f={self.t_f}, t_b={self.t_b})")

    @property
    def total(self) -> float:
        return self.t_f + self.t_b


@dataclass(frozen=True)
class MemoryFootprint:
    weight_bytes: float
    optimizer_bytes: float
    activation_bytes: float
    inflight: int  # peak chunk activations held by the busiest device
    capacity: float
    checkpoints: int | None = None  # per chunk, when recomputing

    @property
    def total_bytes(self) -> float:
        return self.weight_bytes + self.optimizer_bytes + self.activation_bytes

    @property
    def out_of_memory(self) -> bool:
        return self.total_bytes > self.capacity


def tp_allreduce_volume(
    microbatch: int,
    seq_len: int,
    hidden: int,
    tensor_size: int,
    layers: int,
    bytes_per_element: int = BYTES_PER_ELEMENT,
) -> Fraction:
    """Tensor-parallel all-reduce bytes per device per microbatch.

    Two all-reduces of a ``b*s*h`` tensor in each of the forward and backward
    pass of every layer, each moving ``2 (t-1)/t`` of the tensor per device.
    """
    if tensor_size < 1:
        raise ValueError("tensor_size must be >= 1")
    per_layer = Fraction(8 * microbatch * seq_len * hidden * (tensor_size - 1), tensor_size)
    return layers * per_layer * bytes_per_element


def pp_p2p_volume(
    microbatch: int,
    seq_len: int,
    hidden: int,
    tensor_size: int,
    scatter_gather: bool,
    bytes_per_element: int = BYTES_PER_ELEMENT,
) -> Fraction:
    """Bytes a stage boundary carries per microbatch in one direction.

    With scatter/gather each tensor rank ships only its ``1/t`` slice of the
    replicated activation and the receiver re-assembles it over NVLink.
    """
    volume = Fraction(microbatch * seq_len * hidden * bytes_per_element)
    return volume / tensor_size if scatter_gather else volume


def dp_allreduce_cost(param_bytes: float, data_size: int, bandwidth: float) -> float:
    """Seconds for one ring all-reduce of the gradients across ``data_size`` replicas."""
    if data_size < 1:
        raise ValueError("data_size must be >= 1")
    if data_size == 1:
        return 0.0
    return 2 * float(param_bytes) * (data_size - 1) / data_size / bandwidth


def gradient_bytes(model: ModelSpec, config: ParallelConfig, bytes_per_element: int = BYTES_PER_ELEMENT) -> float:
    return bytes_per_element * param_count(model) / config.model_parallel_size


def forward_flops_per_device(model: ModelSpec, config: ParallelConfig) -> float:
    """Forward FLOPs one device spends on one microbatch across all its chunks."""
    layers = model.layers // config.pipeline_size
    return layers * layer_forward_flops(model, config.microbatch_size) / config.tensor_size


def task_durations(
    model: ModelSpec,
    config: ParallelConfig,
    hardware,
    overhead: float = 0.0,
    backward_ratio: float = BACKWARD_TO_FORWARD_RATIO,
) -> TaskDurations:
    """Compute-only durations from FLOPs at ``peak * efficiency``.

    ``overhead`` is a fixed cost per chunk pass (kernel launches and the
    like), paid once per chunk by each forward and backward pass.  The
    backward pass costs ``backward_ratio`` forwards, plus one more forward
    when activations are recomputed.
    """
    forward = forward_flops_per_device(model, config) / hardware.sustained_flops
    t_f = forward + config.chunks * overhead
    ratio = backward_ratio + (1.0 if config.activation_recompute else 0.0)
    return TaskDurations(t_f=t_f, t_b=ratio * t_f)


def optimal_checkpoints(layers: int, input_bytes: float, intermediate_bytes: float) -> int:
    """Integer checkpoint count minimising ``c*A_in + (layers/c)*A_int``.

    Ties go to the smaller count.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if input_bytes <= 0:
        raise ValueError("input activation size must be positive")
    if intermediate_bytes <= 0:
        return 1
    a_in, a_int = Fraction(input_bytes), Fraction(intermediate_bytes)
    guess = math.sqrt(layers * float(a_int / a_in))
    lo = max(1, math.floor(guess) - 1)
    hi = min(layers, math.ceil(guess) + 1)
    candidates = range(lo, hi + 1) if lo <= hi else [min(layers, max(1, round(guess)))]
    return min(candidates, key=lambda c: (c * a_in + Fraction(layers, c) * a_int, c))


def checkpoint_interval(layers: int, ratio: float = INTERMEDIATE_TO_INPUT_RATIO) -> int:
    """Layers between consecutive checkpoints at the optimum (largest segment)."""
    c = optimal_checkpoints(layers, 1, ratio)
    return -(-layers // c)


def activation_bytes_per_chunk(
    model: ModelSpec,
    config: ParallelConfig,
    bytes_per_element: int = BYTES_PER_ELEMENT,
    ratio: float = INTERMEDIATE_TO_INPUT_RATIO,
) -> tuple[float, int | None]:
    """Stashed bytes for one microbatch on one chunk, and the checkpoint count used."""
    layers = model.layers // (config.pipeline_size * config.chunks)
    a_in = bytes_per_element * config.microbatch_size * model.sequence_length * model.hidden_size
    a_int = ratio * a_in
    if not config.activation_recompute:
        return layers * (a_in + a_int), None
    c = optimal_checkpoints(layers, a_in, a_int)
    return c * a_in + layers / c * a_int, c


def inflight_microbatches(config: ParallelConfig, microbatches: int) -> int:
    """Peak chunk activations on the busiest device under ``config.schedule``."""
    return peak_inflight_closed_form(config.schedule, config.pipeline_size, microbatches, config.chunks)


def memory_footprint(
    model: ModelSpec,
    config: ParallelConfig,
    microbatches: int,
    capacity: float = 80e9,
    bytes_per_element: int = BYTES_PER_ELEMENT,
    optimizer_bytes_per_param: float = OPTIMIZER_BYTES_PER_PARAM,
    ratio: float = INTERMEDIATE_TO_INPUT_RATIO,
) -> MemoryFootprint:
    params = param_count(model) / config.model_parallel_size
    per_chunk, checkpoints = activation_bytes_per_chunk(model, config, bytes_per_element, ratio)
    inflight = inflight_microbatches(config, microbatches)
    return MemoryFootprint(
        weight_bytes=bytes_per_element * params,
        optimizer_bytes=optimizer_bytes_per_param * params,
        activation_bytes=inflight * per_chunk,
        inflight=inflight,
        capacity=capacity,
        checkpoints=checkpoints,
    )
