from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptdp.costs import (
    TaskDurations,
    checkpoint_interval,
    dp_allreduce_cost,
    gradient_bytes,
    inflight_microbatches,
    memory_footprint,
    optimal_checkpoints,
    pp_p2p_volume,
    task_durations,
    tp_allreduce_volume,
)
from ptdp.hardware import HardwareSpec, RankMapping
from ptdp.model import ModelSpec, param_count
from ptdp.parallel import ParallelConfig
from ptdp.schedule import build_schedule, p2p_volume_per_link, simulate, static_peak_inflight

GPT_145B = ModelSpec(80, 12288, 96, 2048, 51200)


def brute_checkpoints(layers, a_in, a_int):
    costs = {c: c * Fraction(a_in) + Fraction(layers, c) * Fraction(a_int) for c in range(1, layers + 1)}
    best = min(costs.values())
    return min(c for c, cost in costs.items() if cost == best)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 300), st.integers(1, 1000), st.integers(0, 1000))
def test_optimal_checkpoints_brute_force(layers, a_in, a_int):
    assert optimal_checkpoints(layers, a_in, a_int) == brute_checkpoints(layers, a_in, a_int)


def test_optimal_checkpoints_examples():
    assert optimal_checkpoints(16, 1, 1) == 4
    assert optimal_checkpoints(1, 5, 5) == 1
    assert optimal_checkpoints(10, 1, 0) == 1


def test_default_interval_is_one_or_two_layers():
    assert {checkpoint_interval(layers) for layers in range(1, 65)} == {1, 2}


def test_interval_grows_like_square_root():
    # Optimal segment length is about sqrt(l / 17), so very deep stages exceed two layers.
    assert checkpoint_interval(96) == 3


def tp_oracle(b, s, h, t, layers, bpe=2):
    # Two all-reduces forward and two backward per layer; ring moves 2(t-1)/t of the tensor.
    per_allreduce = Fraction(2 * (t - 1), t) * b * s * h * bpe
    return 4 * layers * per_allreduce


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4096), st.integers(1, 20480), st.integers(1, 64), st.integers(1, 100))
def test_tp_volume_oracle(b, s, h, t, layers):
    assert tp_allreduce_volume(b, s, h, t, layers) == tp_oracle(b, s, h, t, layers)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 16), st.integers(1, 4096), st.integers(1, 20480), st.integers(1, 64))
def test_scatter_gather_divides_by_t(b, s, h, t):
    on = pp_p2p_volume(b, s, h, t, True)
    off = pp_p2p_volume(b, s, h, t, False)
    assert off == 2 * b * s * h
    assert on * t == off


def test_tp_volume_zero_without_tensor_parallelism():
    assert tp_allreduce_volume(1, 2048, 4096, 1, 4) == 0


def test_dp_allreduce_cost():
    assert dp_allreduce_cost(1e9, 1, 1e9) == 0
    assert dp_allreduce_cost(1e9, 4, 1e9) == pytest.approx(1.5)
    assert dp_allreduce_cost(1e9, 1024, 1e9) < 2


def test_gradient_bytes_share():
    config = ParallelConfig(4, 2, 8, 1)
    assert gradient_bytes(GPT_145B, config) == pytest.approx(2 * param_count(GPT_145B) / 8)


def test_task_durations_from_flops():
    hw = HardwareSpec()
    model = ModelSpec(4, 1024, 16, 512, 1000)
    base = task_durations(model, ParallelConfig(2, 1, 1, 1), hw)
    forward = 2 * (24 * 512 * 1024**2 + 4 * 512**2 * 1024) / hw.sustained_flops
    assert base.t_f == pytest.approx(forward)
    assert base.t_b == pytest.approx(3 * forward)
    no_rc = task_durations(model, ParallelConfig(2, 1, 1, 1, activation_recompute=False), hw)
    assert no_rc.t_b == pytest.approx(2 * forward)
    chunked = task_durations(model, ParallelConfig(2, 1, 1, 1, chunks=2, schedule="interleaved"), hw, overhead=1e-5)
    assert chunked.t_f == pytest.approx(forward + 2e-5)


def test_memory_recompute_makes_145b_fit():
    config = ParallelConfig(16, 8, 1, 1)
    m = 64
    assert memory_footprint(GPT_145B, config, m).out_of_memory is False
    off = ParallelConfig(16, 8, 1, 1, activation_recompute=False)
    assert memory_footprint(GPT_145B, off, m).out_of_memory is True


def test_memory_gpipe_grows_with_microbatches():
    model = ModelSpec(8, 1024, 16, 1024, 1000)
    config = ParallelConfig(4, 1, 1, 1, schedule="gpipe")
    small = memory_footprint(model, config, 4)
    big = memory_footprint(model, config, 64)
    assert big.activation_bytes == pytest.approx(16 * small.activation_bytes)
    flush = memory_footprint(model, ParallelConfig(4, 1, 1, 1), 64)
    assert flush.inflight == 4


@pytest.mark.parametrize("kind, p, m, v", [("gpipe", 4, 8, 1), ("one_f_one_b", 4, 2, 1), ("one_f_one_b", 8, 32, 1), ("interleaved", 4, 8, 2), ("interleaved", 8, 8, 4)])
def test_inflight_matches_schedule(kind, p, m, v):
    config = ParallelConfig(p, 1, 1, 1, chunks=v, schedule=kind)
    assert inflight_microbatches(config, m) == max(static_peak_inflight(build_schedule(kind, p, m, v)))


@pytest.mark.parametrize("p, v, m", [(2, 2, 4), (4, 2, 8), (4, 4, 8), (8, 2, 16)])
def test_interleaved_volume_per_adjacent_link(p, v, m):
    """Each link and direction the plain schedule uses carries v times the bytes.

    The interleaved schedule also uses the wrap-around link from the last
    device back to the first, which the plain schedule never touches.
    """
    hw = HardwareSpec()
    mapping = RankMapping(p, 8, 1, 8)
    nbytes = 1e6
    plain = p2p_volume_per_link(simulate(build_schedule("1f1b", p, m), TaskDurations(1, 2), nbytes, hw, mapping), True)
    inter = p2p_volume_per_link(simulate(build_schedule("interleaved", p, m, v), TaskDurations(1, 2), nbytes, hw, mapping), True)
    for link, volume in plain.items():
        assert inter[link] == v * volume
    extra = set(inter) - set(plain)
    assert extra == {(p - 1, 0, "forward"), (0, p - 1, "backward")}
    assert inter[p - 1, 0, "forward"] == (v - 1) * m * nbytes
