"""Approximate CNN inference toolkit: per-layer tunable approximations
(convolution perforation, filter sampling, emulated half precision), Pareto
autotuning of the accuracy/speedup space, confidence calibration, and runtime
adaptation strategies over input streams."""

from .adapt import (
    AdaptStep,
    ConfidenceStrategy,
    ConfidenceThresholds,
    ConfigurationLadder,
    FixedStrategy,
    LadderCursor,
    NaiveStrategy,
    StateDrivenStrategy,
    adapt_loop,
)
from .calibration import CalibrationFit, fit_temperature, single_T_policy
from .executor import BatchResult, InferenceResult, run_batch, run_inference
from .graph import (
    Configuration,
    KnobSetting,
    LayerSpec,
    NetworkGraph,
    build_graph,
    default_knob_domain,
    parse_configurations,
    serialize_configurations,
    validate_configuration,
)
from .ops import (
    ConvGeometry,
    CostCounter,
    FilterSampleSpec,
    PerforationSpec,
    softmax_t,
)
from .profiler import ProfileRecord, profile, reprofile_order_check
from .stream import StreamReport, run_adaptive
from .tensor import fp16_round_trip, load_archive, quantize, save_archive
from .tuner import TradeoffPoint, TunerParams, pareto_filter, tune

__version__ = "0.1.0"
