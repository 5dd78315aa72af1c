"""Cost model, schedule simulator and planner for pipeline, tensor and data
parallel transformer training."""

from .costs import (
    MemoryFootprint,
    TaskDurations,
    checkpoint_interval,
    dp_allreduce_cost,
    memory_footprint,
    optimal_checkpoints,
    pp_p2p_volume,
    task_durations,
    tp_allreduce_volume,
)
from .hardware import HardwareSpec, MappingError, RankMapping, default_mapping, preset
from .model import (
    ModelSpec,
    TrainingJob,
    flops_breakdown,
    flops_per_iteration,
    param_count,
    training_time_estimate,
)
from .parallel import (
    ConfigError,
    DivisibilityError,
    BudgetError,
    ParallelConfig,
    validate,
)
from .planner import (
    EmptyPlanError,
    PlanQuery,
    PlanResult,
    enumerate_configs,
    estimate_iteration_time,
    microbatch_sweep,
    plan,
)
from .schedule import (
    Timeline,
    bubble_fraction,
    build_schedule,
    peak_inflight,
    simulate,
    validate_timeline,
)

__version__ = "0.1.0"
