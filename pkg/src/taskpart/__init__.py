"""Multi-task feature partitioning: sharing-spec matrices, channel-mask
synthesis, black-box search, and fast evaluators, with a CLI harness."""

from .partition import (
    ChannelMask,
    FeasibleSpec,
    SharingSpec,
    TaskMaskPair,
    avg_usage,
    constrain,
    format_mask,
    format_spec,
    gram,
    overlap_bounds,
    pack_symmetric,
    parse_feasible_spec,
    parse_mask,
    parse_sharing_spec,
    task_masks,
    unpack_symmetric,
)
from .synthesis import (
    MAX_TASKS,
    SubsetAllocation,
    SynthesisReport,
    build_report,
    format_report,
    fractions_objective,
    refine,
    round_to_mask,
    solve_fractions,
    subset_bits,
    synthesize,
)
from .evaluation import (
    EvalReport,
    Evaluator,
    SyntheticTaskProfile,
    curriculum_probabilities,
    curriculum_sample,
    make_synthetic_evaluator,
    synthetic_score,
)
from .search import (
    BASELINE_KINDS,
    EsConfig,
    HistoryRecord,
    SamplerConfig,
    SearchRun,
    baseline_label,
    baseline_spec,
    best_record,
    es_step,
    evaluate_baselines,
    evaluate_spec,
    run_search,
    sample_random,
)
from .distill import (
    DistillationRun,
    ToyDistillationSetup,
    distill_score,
    full_train_score,
    layer_shapes,
    make_distill_evaluator,
    make_full_train_evaluator,
    masked_backward,
    masked_forward,
    masked_sites,
)
from .records import (
    SCHEMA_NAME,
    SCHEMA_VERSION,
    RecordWriter,
    RunRecord,
    read_record_file,
)

__version__ = "0.1.0"
