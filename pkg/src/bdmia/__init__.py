"""Label-only membership inference auditing via decision-boundary distances.

The package measures how far samples sit from a hard-label classifier's
decision boundary (HopSkipJump-style attacks, including an all-targeted and a
candidate-filtering multi-targeted variant), turns those distances into
membership scores (single or neighbor-calibrated relative distance), and
evaluates attacks on correctly-classified balanced sets with low-FPR metrics.
"""

from .boundary import (
    AdvPredicate,
    BoundaryResult,
    BoundaryTrace,
    HsjaParams,
    MultiTargetConfig,
    all_targeted_hsja,
    bisect_to_boundary,
    class_seed,
    derive_seed,
    estimate_gradient,
    geometric_step,
    hsja_iterate,
    multi_targeted_hsja,
    sample_seed,
    select_class_inits,
    targeted_hsja,
    untargeted_hsja,
    write_trace_csv,
)
from .evaluation import (
    EvalEntry,
    EvalSet,
    MetricsReport,
    RocCurve,
    StabilityRecord,
    StabilityReport,
    auc,
    build_balanced_set,
    build_cbalanced_set,
    compute_metrics,
    min_region_analysis,
    roc_curve,
    spearman,
    stability_classify,
    stability_experiment,
    stability_summary,
    tpr_at_fpr,
    write_metrics_json,
    write_roc_csv,
    write_stability_csv,
)
from .mia import (
    KIND_BASELINE,
    KIND_RELATIVE,
    KIND_SINGLE,
    DistanceRow,
    NeighborSet,
    ScoreRecord,
    baseline_gap_attack,
    boundary_distance_score,
    decide_membership,
    make_boundary_attack,
    neighboring_points,
    read_scores_csv,
    relative_boundary_score,
    write_scores_csv,
)
from .model import (
    Dataset,
    HardLabelOracle,
    LabeledSample,
    LinearOracle,
    MlpModel,
    ModelOracle,
    NearestCentroidOracle,
    QueryLedger,
    RemoteOracle,
    Sample,
    TrainConfig,
    accuracy,
    half_plane_oracle,
    load_dataset,
    load_model,
    make_synthetic_dataset,
    predict_label,
    save_dataset,
    save_model,
    softmax,
    split_dataset,
    train_mlp,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
