"""Static pipeline schedules and a deterministic event simulator.

A schedule fixes, per pipeline device, the order in which forward and
backward passes of every (microbatch, model chunk) run.  ``simulate`` then
plays the orders out in time: a task starts as soon as its device is free
and its input (activation or gradient) has arrived from the neighbouring
stage.  The simulator never reorders tasks.

Which task waits on which, and the order transfers queue on a link, depend
only on the static orders.  They are resolved once per schedule
(``_resolve``); the timing pass then works on plain floats or on numpy
vectors holding many ``(t_f, t_b)`` samples at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .hardware import INTER_NODE, INTRA_NODE, HardwareSpec, RankMapping
from .parallel import GPIPE, INTERLEAVED, ONE_F_ONE_B, schedule_kind

FORWARD = "forward"
BACKWARD = "backward"

# Start/end times accumulate along critical paths of hundreds of tasks; extended
# precision keeps tiny bubbles (e.g. 1/256) accurate to ~1e-15 where available.
_ACC = np.longdouble


class ScheduleError(ValueError):
    pass


class DeadlockError(RuntimeError):
    pass


@dataclass(frozen=True)
class Task:
    microbatch: int  # 1-based
    chunk: int
    direction: str
    stage: int

    def __str__(self):
        tag = "F" if self.direction == FORWARD else "B"
        return f"{tag}{self.microbatch}" + (f".{self.chunk}" if self.chunk else "")

    @property
    def key(self) -> tuple[int, int, str]:
        return self.microbatch, self.stage, self.direction


@dataclass(frozen=True)
class StaticSchedule:
    kind: str
    pipeline_size: int
    microbatches: int
    chunks: int
    orders: tuple[tuple[Task, ...], ...]

    @property
    def stages(self) -> int:
        return self.pipeline_size * self.chunks


def _check_dims(kind, p, m, v):
    if min(p, m, v) < 1:
        raise ScheduleError(f"p, m and v must be >= 1 (got p={p}, m={m}, v={v})")
    if kind != INTERLEAVED and v != 1:
        raise ScheduleError(f"{kind} schedule runs one chunk per device (got v={v})")
    if kind == INTERLEAVED and m % p:
        raise ScheduleError(f"interleaved schedule needs m={m} to be a multiple of p={p}")


def warmup_forwards(kind: str, p: int, m: int, v: int, rank: int) -> int:
    """Forward passes device ``rank`` runs before its first backward pass."""
    if kind == GPIPE:
        return m
    if kind == ONE_F_ONE_B:
        return min(p - rank - 1, m)
    return min(2 * (p - rank - 1) + (v - 1) * p, m * v)


def peak_inflight_closed_form(kind: str, p: int, m: int, v: int = 1) -> int:
    """Peak chunk activations on device 0, the busiest device of every kind.

    After its warm-up a device alternates one forward and one backward, so
    it peaks one above its warm-up count.
    """
    return min(warmup_forwards(kind, p, m, v, 0) + 1, m * v)


def _gpipe_order(p, m, r):
    forwards = [Task(i, 0, FORWARD, r) for i in range(1, m + 1)]
    backwards = [Task(i, 0, BACKWARD, r) for i in range(1, m + 1)]
    return forwards + backwards


def _one_f_one_b_order(p, m, r):
    warmup = warmup_forwards(ONE_F_ONE_B, p, m, 1, r)
    order = [Task(i, 0, FORWARD, r) for i in range(1, warmup + 1)]
    for k in range(m - warmup):
        order.append(Task(warmup + k + 1, 0, FORWARD, r))
        order.append(Task(k + 1, 0, BACKWARD, r))
    order.extend(Task(i, 0, BACKWARD, r) for i in range(m - warmup + 1, m + 1))
    return order


def _interleaved_order(p, m, v, r):
    # Forward slot k walks chunk-major through groups of p microbatches:
    # chunk 0 for microbatches 1..p, chunk 1 for the same p, ..., then the next p.
    group = p * v

    def forward(k):
        chunk = (k % group) // p
        return Task((k // group) * p + k % p + 1, chunk, FORWARD, chunk * p + r)

    def backward(k):
        chunk = v - 1 - (k % group) // p
        return Task((k // group) * p + k % p + 1, chunk, BACKWARD, chunk * p + r)

    total = m * v
    warmup = warmup_forwards(INTERLEAVED, p, m, v, r)
    order = [forward(k) for k in range(warmup)]
    for k in range(total - warmup):
        order.append(forward(warmup + k))
        order.append(backward(k))
    order.extend(backward(k) for k in range(total - warmup, total))
    return order


def build_schedule(kind: str, pipeline_size: int, microbatches: int, chunks: int = 1) -> StaticSchedule:
    kind = schedule_kind(kind)
    p, m, v = pipeline_size, microbatches, chunks
    _check_dims(kind, p, m, v)
    if kind == GPIPE:
        orders = [_gpipe_order(p, m, r) for r in range(p)]
    elif kind == ONE_F_ONE_B:
        orders = [_one_f_one_b_order(p, m, r) for r in range(p)]
    else:
        orders = [_interleaved_order(p, m, v, r) for r in range(p)]
    return StaticSchedule(kind, p, m, v, tuple(tuple(o) for o in orders))


def static_peak_inflight(schedule: StaticSchedule) -> list[int]:
    """Per-device peak of chunk activations held between a forward and its backward.

    Devices run their orders sequentially, so this equals the timed peak of
    any simulation of ``schedule``.
    """
    peaks = []
    for order in schedule.orders:
        live = peak = 0
        for task in order:
            live += 1 if task.direction == FORWARD else -1
            peak = max(peak, live)
        peaks.append(peak)
    return peaks


def _dependency(task: Task, stages: int) -> tuple[int, int, str] | None:
    """Key of the task whose output ``task`` consumes, or None for a batch input."""
    if task.direction == FORWARD:
        return None if task.stage == 0 else (task.microbatch, task.stage - 1, FORWARD)
    if task.stage == stages - 1:
        return task.microbatch, task.stage, FORWARD
    return task.microbatch, task.stage + 1, BACKWARD


def _receiver(task: Task, p: int, stages: int) -> int | None:
    """Stage that consumes ``task``'s output on another stage, if any."""
    if task.direction == FORWARD and task.stage < stages - 1:
        return task.stage + 1
    if task.direction == BACKWARD and task.stage > 0:
        return task.stage - 1
    return None


@dataclass(frozen=True)
class _Resolved:
    tasks: tuple[Task, ...]  # in resolution order
    devices: tuple[int, ...]
    producer: tuple[int, ...]  # index of the task whose output is consumed, -1 for none
    previous: tuple[int, ...]  # previous task on the same device, -1 for first


@lru_cache(maxsize=256)
def _resolve(schedule: StaticSchedule) -> _Resolved:
    p, S = schedule.pipeline_size, schedule.stages
    cursor = [0] * p
    index = {}
    tasks, devices, producer, previous = [], [], [], []
    last_on = [-1] * p
    remaining = sum(len(o) for o in schedule.orders)
    while remaining:
        progressed = False
        for dev in range(p):
            order = schedule.orders[dev]
            while cursor[dev] < len(order):
                task = order[cursor[dev]]
                dep = _dependency(task, S)
                if dep is not None and dep not in index:
                    break
                i = len(tasks)
                tasks.append(task)
                devices.append(dev)
                producer.append(-1 if dep is None else index[dep])
                previous.append(last_on[dev])
                index[task.key] = i
                last_on[dev] = i
                cursor[dev] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            stuck = {d: str(schedule.orders[d][cursor[d]]) for d in range(p) if cursor[d] < len(schedule.orders[d])}
            raise DeadlockError(f"static order cannot make progress; blocked heads: {stuck}")
    return _Resolved(tuple(tasks), tuple(devices), tuple(producer), tuple(previous))


@dataclass(frozen=True)
class Transfer:
    src: int
    dst: int
    microbatch: int
    src_stage: int
    dst_stage: int
    direction: str
    nbytes: float
    link_class: str
    batch: int = 0


@dataclass(frozen=True)
class TaskRecord:
    device: int
    task: Task
    start: float
    end: float
    batch: int = 0


@dataclass
class Timeline:
    """Timed execution of one static schedule, possibly over several batches.

    ``start``/``end`` hold one row per task.  When the timeline was simulated
    for a vector of K duration samples, rows have K columns and every metric
    is returned per sample.
    """

    kind: str
    pipeline_size: int
    microbatches: int
    chunks: int
    t_f: float | np.ndarray  # per device per microbatch, all chunks
    t_b: float | np.ndarray
    tasks: list[Task] = field(default_factory=list)
    devices: list[int] = field(default_factory=list)
    batch_of: list[int] = field(default_factory=list)
    start: np.ndarray = field(default_factory=lambda: np.zeros(0))
    end: np.ndarray = field(default_factory=lambda: np.zeros(0))
    transfers: list[Transfer] = field(default_factory=list)
    comm_start: np.ndarray = field(default_factory=lambda: np.zeros(0))
    comm_end: np.ndarray = field(default_factory=lambda: np.zeros(0))
    batches: int = 1

    @property
    def vectorized(self) -> bool:
        return self.end.ndim == 2

    def _raw_span(self):
        span = self.end.max(axis=0) if len(self.end) else _ACC(0)
        if len(self.comm_end):
            span = np.maximum(span, self.comm_end.max(axis=0))
        return span

    @property
    def span(self):
        span = self._raw_span()
        return span.astype(float) if self.vectorized else float(span)

    @property
    def ideal(self):
        ideal = self.batches * self.microbatches * (np.asarray(self.t_f, dtype=_ACC) + np.asarray(self.t_b, dtype=_ACC))
        return ideal.astype(float) if self.vectorized else float(ideal)

    def busy(self, device: int):
        rows = [i for i, d in enumerate(self.devices) if d == device]
        total = (self.end[rows] - self.start[rows]).sum(axis=0)
        return total if self.vectorized else float(total)

    def idle(self, device: int):
        return self.span - self.busy(device)

    def records(self) -> list[TaskRecord]:
        if self.vectorized:
            raise ValueError("records() needs a timeline simulated for a single duration pair")
        return [
            TaskRecord(d, t, float(s), float(e), b)
            for d, t, s, e, b in zip(self.devices, self.tasks, self.start, self.end, self.batch_of)
        ]

    def to_dict(self) -> dict:
        if self.vectorized:
            raise ValueError("only single-sample timelines serialize to JSON")
        return {
            "kind": self.kind,
            "pipeline_size": self.pipeline_size,
            "microbatches": self.microbatches,
            "chunks": self.chunks,
            "t_f": float(self.t_f),
            "t_b": float(self.t_b),
            "batches": self.batches,
            "events": [
                {
                    "device": r.device,
                    "task": str(r.task),
                    "microbatch": r.task.microbatch,
                    "chunk": r.task.chunk,
                    "stage": r.task.stage,
                    "kind": r.task.direction,
                    "start": r.start,
                    "end": r.end,
                    "batch": r.batch,
                }
                for r in self.records()
            ],
            "comms": [
                {
                    "src": c.src,
                    "dst": c.dst,
                    "microbatch": c.microbatch,
                    "src_stage": c.src_stage,
                    "dst_stage": c.dst_stage,
                    "kind": c.direction,
                    "bytes": c.nbytes,
                    "link": c.link_class,
                    "start": float(s),
                    "end": float(e),
                    "batch": c.batch,
                }
                for c, s, e in zip(self.transfers, self.comm_start, self.comm_end)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Timeline":
        events = data["events"]
        comms = data.get("comms", [])
        return cls(
            kind=data["kind"],
            pipeline_size=data["pipeline_size"],
            microbatches=data["microbatches"],
            chunks=data["chunks"],
            t_f=data["t_f"],
            t_b=data["t_b"],
            tasks=[Task(e["microbatch"], e["chunk"], e["kind"], e["stage"]) for e in events],
            devices=[e["device"] for e in events],
            batch_of=[e.get("batch", 0) for e in events],
            start=np.array([e["start"] for e in events], dtype=float),
            end=np.array([e["end"] for e in events], dtype=float),
            transfers=[
                Transfer(
                    c["src"],
                    c["dst"],
                    c["microbatch"],
                    c["src_stage"],
                    c["dst_stage"],
                    c["kind"],
                    c["bytes"],
                    c["link"],
                    c.get("batch", 0),
                )
                for c in comms
            ],
            comm_start=np.array([c["start"] for c in comms], dtype=float),
            comm_end=np.array([c["end"] for c in comms], dtype=float),
            batches=data.get("batches", 1),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> "Timeline":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def simulate(
    schedule: StaticSchedule,
    durations,
    p2p_bytes: float = 0.0,
    hardware: HardwareSpec | None = None,
    mapping: RankMapping | None = None,
    batches: int = 1,
    transfer_time=None,
) -> Timeline:
    """Play ``schedule`` out in time.

    ``durations`` carries ``t_f`` and ``t_b``: forward and backward seconds of
    one microbatch over *all* of a device's chunks, so each chunk task takes
    ``t_f / v`` or ``t_b / v``.  Either may be a 1-D array of samples, in
    which case every sample is simulated in one pass.

    Without ``hardware`` (or with zero ``p2p_bytes``) stage-to-stage
    transfers are free.  Transfers occupy the directed link between two
    devices first-come first-served but never block compute.
    ``transfer_time(link_class)`` overrides the alpha-beta price of one
    transfer, e.g. to add the receiver-side gather of scatter/gather.
    """
    p, v, S = schedule.pipeline_size, schedule.chunks, schedule.stages
    vector = np.ndim(durations.t_f) > 0 or np.ndim(durations.t_b) > 0
    if vector:
        t_f, t_b = np.broadcast_arrays(
            np.asarray(durations.t_f, dtype=_ACC), np.asarray(durations.t_b, dtype=_ACC)
        )
        mx = np.maximum
        samples = len(t_f)
    else:
        t_f, t_b = _ACC(durations.t_f), _ACC(durations.t_b)
        mx = max
        samples = None
    if np.any(np.asarray(t_f) <= 0) or np.any(np.asarray(t_b) <= 0):
        raise ValueError("durations must be positive")
    if batches < 1:
        raise ValueError("batches must be >= 1")

    plan = _resolve(schedule)
    n = len(plan.tasks)
    cost = [(t_f if t.direction == FORWARD else t_b) / v for t in plan.tasks]

    comm_on = hardware is not None and p2p_bytes > 0
    sends = [None] * n
    if comm_on:
        mapping = mapping or RankMapping(p, 1, 1, hardware.gpus_per_node)
        for i, task in enumerate(plan.tasks):
            dst_stage = _receiver(task, p, S)
            if dst_stage is not None and dst_stage % p != plan.devices[i]:
                src, dst = plan.devices[i], dst_stage % p
                cls = INTRA_NODE if mapping.node(src) == mapping.node(dst) else INTER_NODE
                duration = transfer_time(cls) if transfer_time else hardware.transfer_time(p2p_bytes, cls)
                sends[i] = (src, dst, dst_stage, cls, duration)

    shape = (n * batches,) if samples is None else (n * batches, samples)
    start, end = np.empty(shape, dtype=_ACC), np.empty(shape, dtype=_ACC)
    transfers, c_starts, c_ends = [], [], []
    origin = _ACC(0) if samples is None else np.zeros(samples, dtype=_ACC)
    for batch in range(batches):
        ends = [None] * n
        arrival = [None] * n
        link_free = {}
        for i in range(n):
            prod, prev = plan.producer[i], plan.previous[i]
            ready = origin if prod < 0 else arrival[prod]
            begin = mx(ready, origin if prev < 0 else ends[prev])
            finish = begin + cost[i]
            row = batch * n + i
            start[row], end[row] = begin, finish
            ends[i] = arrival[i] = finish
            send = sends[i]
            if send is not None:
                src, dst, dst_stage, cls, duration = send
                c_begin = mx(finish, link_free.get((src, dst), origin))
                c_finish = c_begin + duration
                link_free[src, dst] = c_finish
                arrival[i] = c_finish
                task = plan.tasks[i]
                transfers.append(
                    Transfer(src, dst, task.microbatch, task.stage, dst_stage, task.direction, float(p2p_bytes), cls, batch)
                )
                c_starts.append(c_begin)
                c_ends.append(c_finish)
        block = end[batch * n : (batch + 1) * n]
        origin = block.max(axis=0)
        if c_ends:
            origin = mx(origin, np.max(np.asarray(c_ends), axis=0) if samples is not None else max(c_ends))

    comm_shape = (0,) if samples is None else (0, samples)
    return Timeline(
        kind=schedule.kind,
        pipeline_size=p,
        microbatches=schedule.microbatches,
        chunks=v,
        t_f=t_f,
        t_b=t_b,
        tasks=list(plan.tasks) * batches,
        devices=list(plan.devices) * batches,
        batch_of=[b for b in range(batches) for _ in range(n)],
        start=start,
        end=end,
        transfers=transfers,
        comm_start=np.array(c_starts, dtype=_ACC) if c_starts else np.empty(comm_shape, dtype=_ACC),
        comm_end=np.array(c_ends, dtype=_ACC) if c_ends else np.empty(comm_shape, dtype=_ACC),
        batches=batches,
    )


def bubble_fraction(timeline: Timeline):
    """Pipeline bubble relative to the ideal ``m * (t_f + t_b)`` per batch."""
    ideal = timeline.batches * timeline.microbatches * (
        np.asarray(timeline.t_f, dtype=_ACC) + np.asarray(timeline.t_b, dtype=_ACC)
    )
    fraction = (timeline._raw_span() - ideal) / ideal
    return fraction.astype(float) if timeline.vectorized else float(fraction)


def idle_fraction(timeline: Timeline):
    """Mean share of the span that devices spend without a compute task."""
    p = timeline.pipeline_size
    idle = sum(timeline.idle(d) for d in range(p))
    return idle / (p * timeline.span)


def _device_rows(timeline: Timeline) -> dict[int, np.ndarray]:
    rows = {}
    for i, d in enumerate(timeline.devices):
        rows.setdefault(d, []).append(i)
    return {d: np.array(r) for d, r in rows.items()}


def _time_order(timeline: Timeline, rows: np.ndarray) -> np.ndarray:
    """Row indices of ``rows`` sorted by start time, one column per sample."""
    starts = timeline.start[rows]
    if starts.ndim == 1:
        return rows[np.lexsort((timeline.end[rows], starts))]
    order = np.argsort(starts, axis=0, kind="stable")
    return rows[order]


def peak_inflight(timeline: Timeline) -> list:
    """Per-device peak of microbatch-chunks whose forward ran but backward has not."""
    sign = np.array([1 if t.direction == FORWARD else -1 for t in timeline.tasks])
    by_device = _device_rows(timeline)
    peaks = []
    for dev in range(timeline.pipeline_size):
        rows = by_device.get(dev, np.array([], dtype=int))
        if len(rows) == 0:
            peaks.append(0)
            continue
        ordered = _time_order(timeline, rows)
        live = np.cumsum(sign[ordered], axis=0)
        peak = live.max(axis=0)
        peaks.append(int(peak) if peak.ndim == 0 else peak)
    return peaks


def p2p_volume_per_link(timeline: Timeline, by_direction: bool = False) -> dict[tuple, float]:
    """Bytes moved per batch over each directed device pair.

    With ``by_direction`` keys gain a third entry, forward (activations) or
    backward (gradients).
    """
    volume = {}
    for c in timeline.transfers:
        key = (c.src, c.dst, c.direction) if by_direction else (c.src, c.dst)
        volume[key] = volume.get(key, 0.0) + c.nbytes
    return {k: v / timeline.batches for k, v in sorted(volume.items())}


def validate_timeline(timeline: Timeline, schedule: StaticSchedule | None = None, tol: float = 1e-12) -> list[str]:
    """Independent check of dependency, exclusivity and flush semantics.

    Returns human-readable violations; an empty list means the timeline is
    consistent.  Never raises on a malformed timeline.
    """
    try:
        return _validate(timeline, schedule, tol)
    except Exception as exc:  # malformed input is itself a violation
        return [f"timeline could not be checked: {exc!r}"]


def _validate(timeline, schedule, tol):
    problems = []
    p, m, v = timeline.pipeline_size, timeline.microbatches, timeline.chunks
    S = p * v
    start, end = timeline.start, timeline.end
    eps = tol * np.maximum(1.0, timeline.span)

    def bad(mask):
        mask = np.asarray(mask)
        return mask.any(axis=-1) if mask.ndim == 2 else mask

    index = {}
    for i, (t, b, d) in enumerate(zip(timeline.tasks, timeline.batch_of, timeline.devices)):
        key = (b, t.microbatch, t.stage, t.direction)
        if key in index:
            problems.append(f"duplicate task {t} (stage {t.stage}) in batch {b}")
        index[key] = i
        if t.stage % p != d or t.stage // p != t.chunk:
            problems.append(f"{t} at stage {t.stage} placed on device {d}")
    for i in np.nonzero(bad(end < start))[0]:
        problems.append(f"{timeline.tasks[i]} ends before it starts")

    for b in range(timeline.batches):
        for i in range(1, m + 1):
            for s in range(S):
                for direction in (FORWARD, BACKWARD):
                    if (b, i, s, direction) not in index:
                        problems.append(f"missing {direction} of microbatch {i} stage {s} in batch {b}")

    edge = {}
    for j, c in enumerate(timeline.transfers):
        edge[c.batch, c.microbatch, c.src_stage, c.dst_stage, c.direction] = j

    consumers, producers, comms, labels = [], [], [], []
    for (b, i, s, direction), row in index.items():
        if direction == FORWARD:
            if s == 0:
                continue
            prod_key, label = (b, i, s - 1, FORWARD), "a"
        elif s == S - 1:
            prod_key, label = (b, i, s, FORWARD), "b"
        else:
            prod_key, label = (b, i, s + 1, BACKWARD), "b"
        prod = index.get(prod_key)
        if prod is None:
            continue
        consumers.append(row)
        producers.append(prod)
        comms.append(edge.get((b, i, prod_key[2], s, direction), -1))
        labels.append(label)

    if consumers:
        cons, prod, comm = np.array(consumers), np.array(producers), np.array(comms)
        ready = end[prod].copy()
        has_comm = comm >= 0
        if has_comm.any():
            cidx = comm[has_comm]
            late = bad(timeline.comm_start[cidx] + eps < end[prod[has_comm]])
            for k in np.nonzero(late)[0]:
                problems.append(f"transfer of {timeline.tasks[prod[has_comm][k]]} leaves before it finishes")
            ready[has_comm] = timeline.comm_end[cidx]
        early = bad(start[cons] + eps < ready)
        for k in np.nonzero(early)[0]:
            t = timeline.tasks[cons[k]]
            problems.append(f"({labels[k]}) {t} at stage {t.stage} starts before its input is ready")

    for dev, rows in _device_rows(timeline).items():
        ordered = _time_order(timeline, rows)
        if len(ordered) < 2:
            continue
        first, second = ordered[:-1], ordered[1:]
        if ordered.ndim == 1:
            overlap = start[second] + eps < end[first]
        else:
            cols = np.arange(ordered.shape[1])
            overlap = (start[second, cols] + eps < end[first, cols]).any(axis=1)
        for k in np.nonzero(overlap)[0]:
            a = timeline.tasks[first[k] if first.ndim == 1 else first[k, 0]]
            problems.append(f"(c) device {dev} runs two tasks at once near {a}")

    batch_of = np.asarray(timeline.batch_of)
    comm_batch = np.array([c.batch for c in timeline.transfers], dtype=int)
    for b in range(1, timeline.batches):
        prev_end = end[batch_of == b - 1].max(axis=0)
        if len(comm_batch) and (comm_batch == b - 1).any():
            prev_end = np.maximum(prev_end, timeline.comm_end[comm_batch == b - 1].max(axis=0))
        first_start = start[batch_of == b].min(axis=0)
        if np.any(first_start + eps < prev_end):
            problems.append(f"(d) batch {b} starts before the flush of batch {b - 1}")

    if schedule is not None:
        rows_by_dev = _device_rows(timeline)
        for dev in range(p):
            expected = list(schedule.orders[dev])
            rows = rows_by_dev.get(dev, np.array([], dtype=int))
            for b in range(timeline.batches):
                sub = rows[batch_of[rows] == b] if len(rows) else rows
                if len(sub) != len(expected):
                    problems.append(f"device {dev} batch {b} ran {len(sub)} tasks, expected {len(expected)}")
                    continue
                want = [index.get((b, t.microbatch, t.stage, t.direction), -1) for t in expected]
                ordered = _time_order(timeline, sub)
                want = np.array(want) if ordered.ndim == 1 else np.array(want)[:, None]
                if not np.all(ordered == want):
                    problems.append(f"device {dev} batch {b} deviates from the static order")
    return problems
