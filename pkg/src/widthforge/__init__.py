"""widthforge: FLOPs-constrained channel-width optimization at desk scale."""

__version__ = "0.1.0"

from .archspec import (
    ArchError,
    ArchSpec,
    BlockSpec,
    FlopsReport,
    LayerSpec,
    StageSpec,
    WidthUnit,
    WidthVector,
    apply_width,
    arch_digest,
    arch_from_json,
    arch_to_json,
    flops,
    round_channels,
    validate,
    width_from_json,
    width_to_json,
    width_units,
)
from .presets import PRESETS, PresetError, build_preset
from .projection import (
    DatasetSpec,
    OverheadReport,
    ProjectionConfig,
    ProjectionError,
    idealized_components,
    idealized_savings,
    optimization_overhead,
    project_arch,
    project_dataset,
    savings,
)
from .extrapolation import (
    BracketError,
    ExtrapolationError,
    MatchResult,
    TransferPlan,
    TransferResult,
    match_flops,
    stack_average_block,
    stack_last_block,
    transfer,
)
from .evaluators import (
    BridgeEvaluator,
    EvaluationResult,
    Evaluator,
    EvaluatorBudget,
    EvaluatorError,
    SyntheticEvaluator,
)
from .optimizers import (
    AuditLog,
    OptimizerConfig,
    OptimizerError,
    brute_force_oracle,
    optimize_greedy,
    optimize_slimming,
    optimize_uniform,
    run_optimizer,
)
from .analysis import (
    AnalysisError,
    RunRecord,
    average_width_profile,
    cosine_similarity,
    emit_report,
    per_layer_multipliers,
    similarity_matrix,
)
