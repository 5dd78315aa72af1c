import pytest

from ptdp.model import ModelSpec, TrainingJob
from ptdp.parallel import (
    GPIPE,
    INTERLEAVED,
    ONE_F_ONE_B,
    BudgetError,
    ConfigError,
    DivisibilityError,
    ParallelConfig,
    schedule_kind,
    validate,
    violations,
)

MODEL = ModelSpec(32, 3840, 32, 2048, 51200)


def test_derived_quantities():
    q = validate(ParallelConfig(4, 2, 8, 2, chunks=2, schedule="interleaved"), MODEL, TrainingJob(512), 64)
    assert q.devices == 64
    assert q.microbatches == 32
    assert q.microbatches_total == 256
    assert q.layers_per_stage == 8
    assert q.layers_per_chunk == 4
    assert q.model_parallel_size == 8


def test_schedule_aliases():
    assert schedule_kind("1f1b") == ONE_F_ONE_B
    assert schedule_kind("pipedream_flush") == ONE_F_ONE_B
    assert ParallelConfig(schedule="gpipe").schedule == GPIPE
    with pytest.raises(ValueError):
        schedule_kind("zigzag")


@pytest.mark.parametrize(
    "config, job, budget, error, fragment",
    [
        (ParallelConfig(1, 1, 3, 1), TrainingJob(8), None, DivisibilityError, "d*b"),
        (ParallelConfig(3, 1, 1, 1), TrainingJob(8), None, DivisibilityError, "p*v"),
        (ParallelConfig(4, 1, 1, 1, chunks=2, schedule=INTERLEAVED), TrainingJob(6), None, DivisibilityError, "multiple of p"),
        (ParallelConfig(4, 1, 1, 1, chunks=3, schedule=INTERLEAVED), TrainingJob(8), None, DivisibilityError, "p*v"),
        (ParallelConfig(2, 2, 2, 1), TrainingJob(8), 16, BudgetError, "budget"),
        (ParallelConfig(2, 1, 1, 1, chunks=2), TrainingJob(8), None, ConfigError, "interleaved"),
        (ParallelConfig(0, 1, 1, 1), TrainingJob(8), None, ConfigError, "positive"),
    ],
)
def test_validation_errors(config, job, budget, error, fragment):
    with pytest.raises(error, match=fragment):
        validate(config, MODEL, job, budget)


def test_divisibility_takes_priority_over_budget():
    with pytest.raises(DivisibilityError) as info:
        validate(ParallelConfig(3, 1, 1, 1), MODEL, TrainingJob(8), 16)
    assert len(info.value.violations) == 2


def test_all_violations_reported():
    found = violations(ParallelConfig(3, 1, 3, 1), MODEL, TrainingJob(8), 4)
    assert [cat for cat, _ in found] == ["divisibility", "divisibility", "budget"]


def test_config_json_roundtrip(tmp_path):
    config = ParallelConfig(4, 8, 2, 2, chunks=2, schedule="interleaved", scatter_gather=True)
    path = tmp_path / "c.json"
    import json

    path.write_text(json.dumps(config.to_dict()))
    assert ParallelConfig.from_json(path) == config
    with pytest.raises(ValueError, match="unknown"):
        ParallelConfig.from_dict({"pipeline_size": 2, "stages": 3})


def test_label():
    assert ParallelConfig(4, 2, 1, 1, chunks=2, schedule="interleaved").label() == "p=4 t=2 d=1 b=1 interleaved v=2"
