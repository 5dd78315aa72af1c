"""Enumerate, estimate and rank parallel configurations for a device budget.

The iteration-time model is the microbatch pipeline formula

    (m + (p - 1) / v) * (t_f + t_b)

with ``m = B / (d * b)`` and durations that include a fixed per-chunk-pass
overhead, so small microbatches pay for launch costs and large ones for the
pipeline bubble.  Tensor-parallel all-reduces are folded into the
durations, pipeline transfers on the fill and drain path are exposed, and
the data-parallel gradient all-reduce is paid once per batch.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .costs import (
    MemoryFootprint,
    TaskDurations,
    dp_allreduce_cost,
    gradient_bytes,
    memory_footprint,
    pp_p2p_volume,
    task_durations,
    tp_allreduce_volume,
)
from .hardware import (
    INTER_NODE,
    INTRA_NODE,
    HardwareSpec,
    MappingError,
    RankMapping,
    default_mapping,
    group_bandwidth,
    link_class,
)
from .model import ModelSpec, TrainingJob, flops_per_iteration
from .parallel import (
    INTERLEAVED,
    ONE_F_ONE_B,
    SCHEDULE_KINDS,
    ParallelConfig,
    schedule_kind,
    violations,
)
from .schedule import build_schedule, simulate

DEFAULT_OVERHEAD = 20e-6  # seconds per chunk pass
DEFAULT_MICROBATCHES = (1, 2, 4, 8, 16)
DEFAULT_TOP_K = 10


class EmptyPlanError(RuntimeError):
    """No configuration survives; ``constraints`` counts the binding reasons."""

    def __init__(self, constraints: dict[str, int]):
        self.constraints = dict(constraints)
        lines = [f"{count} x {reason}" for reason, count in sorted(constraints.items(), key=lambda kv: (-kv[1], kv[0]))]
        super().__init__("no feasible configuration; binding constraints: " + "; ".join(lines or ["none enumerated"]))


def divisors(n: int) -> list[int]:
    return [k for k in range(1, n + 1) if n % k == 0]


@dataclass(frozen=True)
class PlanQuery:
    devices: int
    global_batch: int
    model: ModelSpec
    hardware: HardwareSpec = field(default_factory=HardwareSpec)
    schedules: tuple[str, ...] = SCHEDULE_KINDS
    microbatch_sizes: tuple[int, ...] = DEFAULT_MICROBATCHES
    allow_cross_node_tensor: bool = False
    recompute_options: tuple[bool, ...] = (True, False)
    overhead: float = DEFAULT_OVERHEAD

    def __post_init__(self):
        if self.devices < 1:
            raise ValueError(f"device budget must be >= 1, got {self.devices}")
        if self.global_batch < 1:
            raise ValueError(f"global batch must be >= 1, got {self.global_batch}")
        if not self.microbatch_sizes or min(self.microbatch_sizes) < 1:
            raise ValueError("microbatch candidates must be a non-empty list of positive integers")
        object.__setattr__(self, "schedules", tuple(schedule_kind(s) for s in self.schedules))
        object.__setattr__(self, "microbatch_sizes", tuple(sorted(set(self.microbatch_sizes))))

    @property
    def job(self) -> TrainingJob:
        return TrainingJob(self.global_batch)

    @classmethod
    def from_dict(cls, data: dict) -> "PlanQuery":
        data = dict(data)
        try:
            model = data.pop("model")
            devices = data.pop("devices")
            batch = data.pop("global_batch")
        except KeyError as exc:
            raise ValueError(f"plan query is missing key {exc.args[0]!r}") from None
        kwargs = {}
        hw = data.pop("hardware", None)
        if isinstance(hw, str):
            from .hardware import preset

            kwargs["hardware"] = preset(hw)
        elif isinstance(hw, dict):
            kwargs["hardware"] = HardwareSpec.from_dict(hw)
        for key in ("schedules", "microbatch_sizes", "recompute_options"):
            if key in data:
                kwargs[key] = tuple(data.pop(key))
        for key in ("allow_cross_node_tensor", "overhead"):
            if key in data:
                kwargs[key] = data.pop(key)
        if data:
            raise ValueError(f"unknown plan query keys: {', '.join(sorted(data))}")
        return cls(
            devices=int(devices),
            global_batch=int(batch),
            model=model if isinstance(model, ModelSpec) else ModelSpec.from_dict(model),
            **kwargs,
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "PlanQuery":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class IterationEstimate:
    """Seconds per iteration split into its modeled parts."""

    pipeline: float  # compute, bubble and tensor all-reduces
    p2p: float  # pipeline transfers left exposed
    data_parallel: float
    durations: TaskDurations

    @property
    def seconds(self) -> float:
        return self.pipeline + self.p2p + self.data_parallel


@dataclass
class PlanResult:
    config: ParallelConfig
    seconds: float | None = None
    flops_per_device: float | None = None  # modeled FLOP/s
    bubble: Fraction | None = None
    memory: MemoryFootprint | None = None
    comm_bytes: dict[str, float] = field(default_factory=dict)  # per device per iteration
    reasons: list[str] = field(default_factory=list)
    simulated: bool = False

    @property
    def feasible(self) -> bool:
        return not self.reasons

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "feasible": self.feasible,
            "reasons": list(self.reasons),
            "seconds": self.seconds,
            "tflops_per_device": None if self.flops_per_device is None else self.flops_per_device / 1e12,
            "bubble": None if self.bubble is None else float(self.bubble),
            "memory_gb": None if self.memory is None else self.memory.total_bytes / 1e9,
            "comm_bytes": dict(self.comm_bytes),
            "simulated": self.simulated,
        }


def dp_pipeline_bubble(devices: int, data_size: int, batch_per_replica_scale: int) -> Fraction:
    """Bubble ``(n - d) / b'`` with ``t = 1`` so that ``p = n / d``.

    ``batch_per_replica_scale`` is ``b' = B / b``; the same expression is
    ``(p - 1) / m`` with ``m = b' / d``.
    """
    if devices % data_size:
        raise ValueError(f"d={data_size} does not divide n={devices}")
    return Fraction(devices - data_size, batch_per_replica_scale)


def _mapping(config: ParallelConfig, hardware: HardwareSpec, mapping: RankMapping | None) -> RankMapping:
    if mapping is not None:
        return mapping
    return default_mapping(
        config.pipeline_size,
        config.tensor_size,
        config.data_size,
        hardware,
        allow_cross_node_tensor=True,
    )


def effective_durations(
    model: ModelSpec,
    config: ParallelConfig,
    hardware: HardwareSpec,
    mapping: RankMapping | None = None,
    overhead: float = DEFAULT_OVERHEAD,
    zero_comm: bool = False,
) -> TaskDurations:
    """Compute durations with the tensor-parallel all-reduces folded in.

    Each layer runs two all-reduces in the forward pass and two in the
    backward pass; a recomputed forward repeats its pair.
    """
    base = task_durations(model, config, hardware, overhead)
    t = config.tensor_size
    if zero_comm or t == 1:
        return base
    mapping = _mapping(config, hardware, mapping)
    layers = model.layers // config.pipeline_size
    volume = float(
        tp_allreduce_volume(config.microbatch_size, model.sequence_length, model.hidden_size, t, layers)
    )
    cls, bw = group_bandwidth(mapping, [(0, k, 0) for k in range(t)], hardware)
    one_pass = volume / 2 / bw + 2 * layers * hardware.latency(cls)
    backward = one_pass * (2 if config.activation_recompute else 1)
    return TaskDurations(base.t_f + one_pass, base.t_b + backward)


def p2p_hop_time(model: ModelSpec, config: ParallelConfig, hardware: HardwareSpec, cls: str) -> float:
    """Seconds to move one microbatch's boundary activation across one hop.

    With scatter/gather, each rank sends its slice and the receiving node
    re-assembles the full tensor with an NVLink all-gather.
    """
    full = float(pp_p2p_volume(config.microbatch_size, model.sequence_length, model.hidden_size, 1, False))
    t = config.tensor_size
    if not (config.scatter_gather and t > 1):
        return hardware.transfer_time(full, cls)
    send = hardware.transfer_time(full / t, cls)
    gather = hardware.transfer_time(full * (t - 1) / t, INTRA_NODE)
    return send + gather


def _hop_classes(config: ParallelConfig, mapping: RankMapping) -> list[str]:
    """Link class of each stage boundary along the fill path."""
    p, v = config.pipeline_size, config.chunks
    return [
        link_class(mapping, (s % p, 0, 0), ((s + 1) % p, 0, 0))
        for s in range(p * v - 1)
    ]


def exposed_hops(kind: str, p: int, m: int, v: int = 1) -> int:
    """Stage-boundary transfers on the critical path of one batch.

    Fill and drain each cross every boundary once.  The one-forward-one-
    backward schedule has no slack after its warm-up, so in steady state a
    step waits for a round trip, except once every ``p`` microbatches.
    Counts are exact while a hop is shorter than a task; checked against
    the simulator.
    """
    fill_drain = 2 * (p * v - 1)
    if kind != ONE_F_ONE_B or m < 2:
        return fill_drain
    return fill_drain + 2 * (m - 1) - 2 * ((m - 2) // p + 1)


def iteration_breakdown(
    config: ParallelConfig,
    model: ModelSpec,
    job: TrainingJob,
    hardware: HardwareSpec,
    mapping: RankMapping | None = None,
    overhead: float = DEFAULT_OVERHEAD,
    zero_comm: bool = False,
) -> IterationEstimate:
    p, v, d = config.pipeline_size, config.chunks, config.data_size
    m = Fraction(job.global_batch, d * config.microbatch_size)
    mapping = None if zero_comm else _mapping(config, hardware, mapping)
    durations = effective_durations(model, config, hardware, mapping, overhead, zero_comm)
    pipeline = float(m + Fraction(p - 1, v)) * durations.total
    p2p = dp = 0.0
    if not zero_comm:
        if p > 1:
            hops = [p2p_hop_time(model, config, hardware, cls) for cls in _hop_classes(config, mapping)]
            p2p = exposed_hops(config.schedule, p, int(m), v) * sum(hops) / len(hops)
        if d > 1:
            cls, bw = group_bandwidth(mapping, [(0, 0, k) for k in range(d)], hardware)
            dp = dp_allreduce_cost(gradient_bytes(model, config), d, bw) + hardware.latency(cls)
    return IterationEstimate(pipeline, p2p, dp, durations)


def estimate_iteration_time(
    config: ParallelConfig,
    model: ModelSpec,
    job: TrainingJob,
    hardware: HardwareSpec,
    mapping: RankMapping | None = None,
    overhead: float = DEFAULT_OVERHEAD,
    zero_comm: bool = False,
) -> float:
    return iteration_breakdown(config, model, job, hardware, mapping, overhead, zero_comm).seconds


def simulated_iteration_time(
    config: ParallelConfig,
    model: ModelSpec,
    job: TrainingJob,
    hardware: HardwareSpec,
    mapping: RankMapping | None = None,
    overhead: float = DEFAULT_OVERHEAD,
    zero_comm: bool = False,
) -> float:
    """Like ``estimate_iteration_time`` but with the pipeline term simulated."""
    p, v, d = config.pipeline_size, config.chunks, config.data_size
    m = job.global_batch // (d * config.microbatch_size)
    durations = effective_durations(model, config, hardware, mapping, overhead, zero_comm)
    schedule = build_schedule(config.schedule, p, m, v)
    if zero_comm or p == 1:
        timeline = simulate(schedule, durations)
        return timeline.span
    mapping = _mapping(config, hardware, mapping)
    full = float(pp_p2p_volume(config.microbatch_size, model.sequence_length, model.hidden_size, 1, False))
    timeline = simulate(
        schedule,
        durations,
        p2p_bytes=full,
        hardware=hardware,
        mapping=mapping,
        transfer_time=lambda cls: p2p_hop_time(model, config, hardware, cls),
    )
    rest = iteration_breakdown(config, model, job, hardware, mapping, overhead).data_parallel
    return timeline.span + rest


def comm_bytes(
    config: ParallelConfig,
    model: ModelSpec,
    job: TrainingJob,
    mapping: RankMapping,
    hardware: HardwareSpec,
) -> dict[str, float]:
    """Bytes one busy device sends per iteration, keyed by link class."""
    totals = {INTRA_NODE: 0.0, INTER_NODE: 0.0}
    p, t, d, v, b = (
        config.pipeline_size,
        config.tensor_size,
        config.data_size,
        config.chunks,
        config.microbatch_size,
    )
    m = job.global_batch // (d * b)
    s, h = model.sequence_length, model.hidden_size
    if t > 1:
        tp = tp_allreduce_volume(b, s, h, t, model.layers // p) * m
        if config.activation_recompute:
            tp = tp * 3 / 2
        cls, _ = group_bandwidth(mapping, [(0, k, 0) for k in range(t)], hardware)
        totals[cls] += float(tp)
    if p > 1:
        # A device sends one activation and one gradient per chunk per microbatch.
        per = pp_p2p_volume(b, s, h, t, config.scatter_gather)
        totals[link_class(mapping, (0, 0, 0), (1 % p, 0, 0))] += float(2 * per * m * v)
    if d > 1:
        cls, _ = group_bandwidth(mapping, [(0, 0, k) for k in range(d)], hardware)
        totals[cls] += 2 * gradient_bytes(model, config) * (d - 1) / d
    return totals


def candidate_configs(query: PlanQuery):
    """Every (p, t, d, b, kind, v, recompute) point with ``p * t * d = n``."""
    n, l = query.devices, query.model.layers
    for p in divisors(n):
        for t in divisors(n // p):
            d = n // (p * t)
            for b in query.microbatch_sizes:
                for kind in query.schedules:
                    if kind == INTERLEAVED:
                        if p == 1 or l % p:
                            continue
                        chunk_options = [v for v in divisors(l // p) if v > 1]
                    else:
                        chunk_options = [1]
                    for v in chunk_options:
                        for recompute in query.recompute_options:
                            yield ParallelConfig(
                                pipeline_size=p,
                                tensor_size=t,
                                data_size=d,
                                microbatch_size=b,
                                chunks=v,
                                schedule=kind,
                                scatter_gather=t > 1,
                                activation_recompute=recompute,
                            )


def evaluate(query: PlanQuery, config: ParallelConfig) -> PlanResult:
    """Check one configuration and, when feasible, price it."""
    result = PlanResult(config)
    model, hw, job = query.model, query.hardware, query.job
    result.reasons = [msg for _, msg in violations(config, model, job, query.devices)]
    try:
        mapping = default_mapping(
            config.pipeline_size,
            config.tensor_size,
            config.data_size,
            hw,
            allow_cross_node_tensor=query.allow_cross_node_tensor,
        )
    except MappingError as exc:
        result.reasons.append(str(exc))
        mapping = None
    if result.reasons:
        return result
    m = job.global_batch // (config.data_size * config.microbatch_size)
    result.memory = memory_footprint(model, config, m, capacity=hw.memory_bytes)
    if result.memory.out_of_memory:
        result.reasons.append(
            f"memory {result.memory.total_bytes / 1e9:.4g} GB exceeds {hw.memory_bytes / 1e9:.4g} GB per device"
        )
        return result
    result.seconds = estimate_iteration_time(config, model, job, hw, mapping, query.overhead)
    result.flops_per_device = _flops_rate(query, config, result.seconds)
    result.bubble = Fraction(config.pipeline_size - 1, m * config.chunks)
    result.comm_bytes = comm_bytes(config, model, job, mapping, hw)
    return result


def _flops_rate(query: PlanQuery, config: ParallelConfig, seconds: float) -> float:
    work = flops_per_iteration(query.model, query.global_batch, config.activation_recompute)
    return work / (query.devices * seconds)


_KIND_ORDER = {kind: i for i, kind in enumerate(SCHEDULE_KINDS)}


def rank_key(result: PlanResult):
    """Time first, then smaller M, larger d, smaller b, then a fixed total order."""
    c = result.config
    return (
        result.seconds,
        c.model_parallel_size,
        -c.data_size,
        c.microbatch_size,
        _KIND_ORDER[c.schedule],
        c.chunks,
        c.pipeline_size,
        not c.activation_recompute,
    )


def _infeasible_key(result: PlanResult):
    c = result.config
    return (c.pipeline_size, c.tensor_size, c.data_size, c.microbatch_size, _KIND_ORDER[c.schedule], c.chunks, not c.activation_recompute)


def _evaluate_all(query: PlanQuery, workers: int) -> list[PlanResult]:
    configs = list(candidate_configs(query))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda c: evaluate(query, c), configs))
    return [evaluate(query, c) for c in configs]


def _binding(results: list[PlanResult]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in results:
        for reason in r.reasons:
            key = _constraint_kind(reason)
            counts[key] = counts.get(key, 0) + 1
    return counts


def _constraint_kind(reason: str) -> str:
    for marker, kind in (
        ("global batch", "global batch not divisible by d*b"),
        ("interleaved schedule needs", "interleaved needs m to be a multiple of p"),
        ("layers", "layers not divisible by p*v"),
        ("tensor-parallel size", "tensor-parallel size exceeds GPUs per node"),
        ("memory", "activations, weights and optimizer state exceed device memory"),
        ("device budget", "p*t*d does not match the device budget"),
    ):
        if marker in reason:
            return kind
    return reason


def enumerate_configs(query: PlanQuery, workers: int = 1) -> list[ParallelConfig]:
    """Feasible configurations in enumeration order; raises if there are none."""
    results = _evaluate_all(query, workers)
    feasible = [r.config for r in results if r.feasible]
    if not feasible:
        raise EmptyPlanError(_binding(results))
    return feasible


def plan(
    query: PlanQuery,
    explain: bool = False,
    simulate_top: int = 0,
    workers: int = 1,
) -> list[PlanResult]:
    """Rank feasible configurations by modeled iteration time.

    ``simulate_top`` re-prices that many leading candidates with the schedule
    simulator before the final sort.  With ``explain`` the infeasible
    configurations follow the ranked ones, each with its reasons.
    """
    results = _evaluate_all(query, workers)
    feasible = sorted((r for r in results if r.feasible), key=rank_key)
    if not feasible:
        raise EmptyPlanError(_binding(results))
    if simulate_top > 0:
        head = feasible[:simulate_top]
        for r in head:
            r.seconds = simulated_iteration_time(r.config, query.model, query.job, query.hardware, overhead=query.overhead)
            r.flops_per_device = _flops_rate(query, r.config, r.seconds)
            r.simulated = True
        feasible = sorted(head, key=rank_key) + feasible[simulate_top:]
    if explain:
        return feasible + sorted((r for r in results if not r.feasible), key=_infeasible_key)
    return feasible


@dataclass(frozen=True)
class SweepPoint:
    x: int
    seconds: float | None
    samples_per_second: float | None
    flops_per_device: float | None
    reason: str = ""

    @property
    def feasible(self) -> bool:
        return not self.reason


def _sweep_point(x, config, model, job, hardware, overhead, zero_comm, check_memory) -> SweepPoint:
    found = violations(config, model, job)
    if found:
        return SweepPoint(x, None, None, None, "; ".join(msg for _, msg in found))
    m = job.global_batch // (config.data_size * config.microbatch_size)
    if check_memory:
        mem = memory_footprint(model, config, m, capacity=hardware.memory_bytes)
        if mem.out_of_memory:
            return SweepPoint(x, None, None, None, f"memory {mem.total_bytes / 1e9:.4g} GB exceeds capacity")
    seconds = estimate_iteration_time(config, model, job, hardware, overhead=overhead, zero_comm=zero_comm)
    work = flops_per_iteration(model, job.global_batch, config.activation_recompute)
    return SweepPoint(x, seconds, job.global_batch / seconds, work / (config.devices * seconds))


def microbatch_sweep(
    config: ParallelConfig,
    model: ModelSpec,
    job: TrainingJob,
    hardware: HardwareSpec,
    candidates=DEFAULT_MICROBATCHES,
    overhead: float = DEFAULT_OVERHEAD,
    zero_comm: bool = False,
    check_memory: bool = True,
) -> list[SweepPoint]:
    """Throughput for each microbatch size; ``config.microbatch_size`` is ignored."""
    if not candidates:
        raise ValueError("microbatch candidate list is empty")
    return [
        _sweep_point(
            b,
            _with(config, microbatch_size=b),
            model,
            job,
            hardware,
            overhead,
            zero_comm,
            check_memory,
        )
        for b in candidates
    ]


def batch_sweep(
    config: ParallelConfig,
    model: ModelSpec,
    batches,
    hardware: HardwareSpec,
    overhead: float = DEFAULT_OVERHEAD,
    zero_comm: bool = False,
    check_memory: bool = True,
) -> list[SweepPoint]:
    if not batches:
        raise ValueError("batch-size candidate list is empty")
    return [
        _sweep_point(B, config, model, TrainingJob(B), hardware, overhead, zero_comm, check_memory)
        for B in batches
    ]


def best_point(points: list[SweepPoint]) -> SweepPoint | None:
    """Highest throughput; ties go to the earlier candidate."""
    best = None
    for point in points:
        if point.feasible and (best is None or point.samples_per_second > best.samples_per_second):
            best = point
    return best


def _with(config: ParallelConfig, **changes) -> ParallelConfig:
    data = config.to_dict()
    data.update(changes)
    return ParallelConfig(**data)
