import dataclasses
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptdp.costs import TaskDurations
from ptdp.hardware import HardwareSpec, RankMapping
from ptdp.schedule import (
    BACKWARD,
    FORWARD,
    ScheduleError,
    Timeline,
    Task,
    bubble_fraction,
    build_schedule,
    idle_fraction,
    p2p_volume_per_link,
    peak_inflight,
    peak_inflight_closed_form,
    simulate,
    static_peak_inflight,
    validate_timeline,
)

KINDS = ["gpipe", "one_f_one_b", "interleaved"]


def analytic_bubble(kind, p, m, v):
    return Fraction(p - 1, m * (v if kind == "interleaved" else 1))


shapes = st.tuples(
    st.sampled_from(KINDS), st.integers(1, 6), st.integers(1, 12), st.sampled_from([1, 2, 3])
).map(lambda k: (k[0], k[1], k[2] * k[1] if k[0] == "interleaved" else k[2], k[3] if k[0] == "interleaved" else 1))


def test_every_task_appears_once():
    for kind, p, m, v in [("gpipe", 3, 5, 1), ("one_f_one_b", 4, 3, 1), ("interleaved", 2, 4, 3)]:
        sched = build_schedule(kind, p, m, v)
        for r, order in enumerate(sched.orders):
            assert len(order) == 2 * m * v
            assert len(set(order)) == len(order)
            assert all(t.stage % p == r for t in order)


def test_one_f_one_b_order_for_four_stages():
    sched = build_schedule("1f1b", 4, 8)
    assert [str(t) for t in sched.orders[0][:6]] == ["F1", "F2", "F3", "F4", "B1", "F5"]
    assert [str(t) for t in sched.orders[3][:4]] == ["F1", "B1", "F2", "B2"]


def test_interleaved_order_device0():
    sched = build_schedule("interleaved", 4, 8, 2)
    first = [str(t) for t in sched.orders[0][:12]]
    assert first == ["F1", "F2", "F3", "F4", "F1.1", "F2.1", "F3.1", "F4.1", "F5", "F6", "F7", "B1.1"]


def test_gpipe_runs_all_forwards_first():
    order = build_schedule("gpipe", 3, 4).orders[1]
    assert all(t.direction == FORWARD for t in order[:4])
    assert all(t.direction == BACKWARD for t in order[4:])


@pytest.mark.parametrize("kind, p, m, v", [("interleaved", 4, 6, 2), ("one_f_one_b", 2, 4, 2), ("gpipe", 0, 4, 1)])
def test_build_rejects_bad_shapes(kind, p, m, v):
    with pytest.raises(ScheduleError):
        build_schedule(kind, p, m, v)


@settings(max_examples=150, deadline=None)
@given(shapes, st.floats(0.01, 10), st.floats(0.01, 10))
def test_bubble_matches_formula(shape, t_f, t_b):
    kind, p, m, v = shape
    sched = build_schedule(kind, p, m, v)
    tl = simulate(sched, TaskDurations(t_f, t_b))
    expected = float(analytic_bubble(kind, p, m, v))
    assert bubble_fraction(tl) == pytest.approx(expected, rel=1e-12, abs=1e-15)
    assert validate_timeline(tl, sched) == []


@settings(max_examples=80, deadline=None)
@given(shapes)
def test_peak_inflight_static_dynamic_closed_form_agree(shape):
    kind, p, m, v = shape
    sched = build_schedule(kind, p, m, v)
    tl = simulate(sched, TaskDurations(1.0, 2.0))
    dynamic = peak_inflight(tl)
    assert dynamic == static_peak_inflight(sched)
    assert max(dynamic) == dynamic[0] == peak_inflight_closed_form(kind, p, m, v)
    if kind == "gpipe":
        assert max(dynamic) == m
    if kind == "one_f_one_b":
        assert max(dynamic) <= p


def test_vectorized_matches_scalar():
    sched = build_schedule("interleaved", 4, 8, 2)
    rng = np.random.default_rng(7)
    t_f, t_b = rng.uniform(0.1, 2, 5), rng.uniform(0.1, 2, 5)
    vec = simulate(sched, TaskDurations(t_f, t_b))
    for k in range(5):
        one = simulate(sched, TaskDurations(float(t_f[k]), float(t_b[k])))
        assert vec.span[k] == pytest.approx(one.span, rel=1e-15)
        assert bubble_fraction(vec)[k] == pytest.approx(bubble_fraction(one), rel=1e-12)
    assert validate_timeline(vec, sched) == []


def test_span_of_single_stage_is_ideal():
    tl = simulate(build_schedule("1f1b", 1, 7), TaskDurations(1.5, 3.0))
    assert tl.span == pytest.approx(7 * 4.5)
    assert bubble_fraction(tl) == 0
    assert idle_fraction(tl) == 0


def _shift(tl: Timeline, row: int, delta: float) -> Timeline:
    start, end = tl.start.copy(), tl.end.copy()
    start[row] += delta
    end[row] += delta
    return dataclasses.replace(tl, start=start, end=end)


def test_validator_catches_dependency_violation():
    sched = build_schedule("1f1b", 3, 4)
    tl = simulate(sched, TaskDurations(1.0, 2.0))
    row = next(i for i, t in enumerate(tl.tasks) if t == Task(1, 0, FORWARD, 1))
    problems = validate_timeline(_shift(tl, row, -0.5), sched)
    assert any(p.startswith("(a)") for p in problems)
    row = next(i for i, t in enumerate(tl.tasks) if t == Task(2, 0, BACKWARD, 1))
    problems = validate_timeline(_shift(tl, row, -0.5), sched)
    assert any(p.startswith("(b)") for p in problems)


def test_validator_catches_overlap_and_missing():
    sched = build_schedule("gpipe", 2, 3)
    tl = simulate(sched, TaskDurations(1.0, 1.0))
    last = max(range(len(tl.tasks)), key=lambda i: float(tl.end[i]))
    shifted = _shift(tl, last, -0.25)
    assert any("(c)" in p for p in validate_timeline(shifted))
    trimmed = dataclasses.replace(
        tl, tasks=tl.tasks[1:], devices=tl.devices[1:], batch_of=tl.batch_of[1:], start=tl.start[1:], end=tl.end[1:]
    )
    assert any("missing" in p for p in validate_timeline(trimmed))


def test_validator_never_raises_on_garbage():
    tl = simulate(build_schedule("gpipe", 2, 2), TaskDurations(1.0, 1.0))
    broken = dataclasses.replace(tl, start=np.zeros(1))
    assert validate_timeline(broken)


def test_multi_batch_flush():
    sched = build_schedule("1f1b", 4, 8)
    tl = simulate(sched, TaskDurations(1.0, 2.0), batches=3)
    assert validate_timeline(tl, sched) == []
    assert tl.span == pytest.approx(3 * simulate(sched, TaskDurations(1.0, 2.0)).span)
    early = [i for i, b in enumerate(tl.batch_of) if b == 1]
    first = min(early, key=lambda i: float(tl.start[i]))
    assert any("(d)" in p for p in validate_timeline(_shift(tl, first, -1.0)))


def test_communication_delays_but_stays_valid():
    hw = HardwareSpec()
    sched = build_schedule("interleaved", 4, 8, 2)
    mapping = RankMapping(4, 8, 1, 8)
    free = simulate(sched, TaskDurations(1e-3, 2e-3))
    tl = simulate(sched, TaskDurations(1e-3, 2e-3), p2p_bytes=50e6, hardware=hw, mapping=mapping)
    assert tl.span > free.span
    assert validate_timeline(tl, sched) == []
    # Every stage boundary crossing is one transfer per microbatch and direction.
    assert len(tl.transfers) == 2 * 8 * (4 * 2 - 1)


def test_link_fifo_serializes_transfers():
    hw = HardwareSpec()
    tl = simulate(
        build_schedule("gpipe", 2, 4), TaskDurations(1e-6, 1e-6), p2p_bytes=25e9, hardware=hw, mapping=RankMapping(2, 8, 1, 8)
    )
    fwd = sorted(
        (float(s), float(e)) for c, s, e in zip(tl.transfers, tl.comm_start, tl.comm_end) if c.direction == FORWARD
    )
    for (_, e0), (s1, _) in zip(fwd, fwd[1:]):
        assert s1 >= e0


def test_timeline_json_roundtrip(tmp_path):
    sched = build_schedule("interleaved", 2, 4, 2)
    tl = simulate(sched, TaskDurations(0.3, 0.7), p2p_bytes=1e6, hardware=HardwareSpec(), mapping=RankMapping(2, 8, 1, 8))
    path = tmp_path / "tl.json"
    tl.save(path)
    back = Timeline.load(path)
    assert validate_timeline(back, sched) == []
    assert back.span == pytest.approx(tl.span)
    assert p2p_volume_per_link(back) == p2p_volume_per_link(tl)


def test_deterministic():
    sched = build_schedule("interleaved", 4, 8, 2)
    a = simulate(sched, TaskDurations(1.0, 2.0)).to_dict()
    b = simulate(sched, TaskDurations(1.0, 2.0)).to_dict()
    assert a == b


def test_random_durations_grid_sample():
    rng = random.Random(3)
    for _ in range(20):
        p = rng.randint(1, 8)
        v = rng.choice([1, 2, 4])
        kind = "interleaved" if v > 1 else rng.choice(["gpipe", "one_f_one_b"])
        m = p * rng.randint(1, 8)
        tl = simulate(build_schedule(kind, p, m, v), TaskDurations(rng.uniform(0.1, 3), rng.uniform(0.1, 3)))
        assert bubble_fraction(tl) == pytest.approx(float(analytic_bubble(kind, p, m, v)), rel=1e-12, abs=1e-15)
