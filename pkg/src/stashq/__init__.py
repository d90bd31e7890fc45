"""Low-precision LLM-training simulator with an analytic cost model.

Four quantization points per GEMM node (q0: forward operands, q1: the
stashed activation, q2: the re-fetched backward weight operand, q3: the
flushed activation gradient), a plateau-triggered precision ladder, and
arithmetic/DRAM cost accounting with a Roofline view.
"""

from .costmodel import (
    CostLedger,
    PhaseFit,
    RooflinePoint,
    TrafficProfile,
    UnitCostTable,
    default_traffic_profile,
    default_unit_cost_table,
    enumerate_gemm_nodes,
    estimate_static,
    fit_phase_durations,
    load_unit_cost_table,
    normalize,
    roofline,
)
from .formats import (
    NumberFormat,
    QuantizedBlock,
    max_abs_error_bound,
    parse_format,
    quantize_tensor,
    snap_bfp,
    snap_fixed,
    storage_bits,
)
from .qtraining import (
    Dataset,
    ModelSpec,
    PrecisionConfig,
    RunReport,
    StashBuffer,
    TrainState,
    adam_step,
    evaluate,
    init_state,
    linear_backward,
    linear_forward,
    lr_schedule,
    make_copy_task,
    train_run,
    transformer_step,
)
from .scheduler import (
    ScheduleLadder,
    ScheduleState,
    default_ladder,
    observe_validation,
    validate_ladder,
)

__version__ = "1.0.0"

__all__ = [
    "CostLedger",
    "Dataset",
    "ModelSpec",
    "NumberFormat",
    "PhaseFit",
    "PrecisionConfig",
    "QuantizedBlock",
    "RooflinePoint",
    "RunReport",
    "ScheduleLadder",
    "ScheduleState",
    "StashBuffer",
    "TrafficProfile",
    "TrainState",
    "UnitCostTable",
    "adam_step",
    "default_ladder",
    "default_traffic_profile",
    "default_unit_cost_table",
    "enumerate_gemm_nodes",
    "estimate_static",
    "evaluate",
    "fit_phase_durations",
    "init_state",
    "linear_backward",
    "linear_forward",
    "load_unit_cost_table",
    "lr_schedule",
    "make_copy_task",
    "max_abs_error_bound",
    "normalize",
    "observe_validation",
    "parse_format",
    "quantize_tensor",
    "roofline",
    "snap_bfp",
    "snap_fixed",
    "storage_bits",
    "train_run",
    "transformer_step",
    "validate_ladder",
]
