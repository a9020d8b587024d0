"""Per-sample data measures and diversity-aware subset selection.

The pipeline: load a run bundle of serialized model outputs, compute the
23 per-sample measures, z-score them into a feature space, then pick
subsets with a score-weighted DPP greedy MAP or one of the baseline
selectors.
"""

from . import errors
from .bundle import (
    RunBundle,
    load_bundle,
    resolve_labels,
    validate_bundle,
    write_bundle,
)
from .measures import (
    DEFAULT_KNN_K,
    REGISTRY,
    REGISTRY_NAMES,
    MeasureMatrix,
    MeasureSpec,
    badge_score,
    compute_all,
    correctness,
    densities,
    ensemble_uncertainty,
    knn_distance,
    measure_spec,
    pll,
    same_class_knn_distance,
    static_confidence_entropy,
    training_dynamics,
)
from .oracle import (
    SynthConfig,
    generate_bundle,
    planted_noise_indices,
    reference_measures,
)
from .selection import (
    ACQUIRE,
    DEFAULT_BETA,
    PRUNE,
    DppKernel,
    SelectionResult,
    build_kernel,
    density_score,
    exhaustive_map,
    greedy_map,
    result_to_json,
    save_result,
    select,
)
from .space import (
    CorrelationMatrix,
    FeatureMatrix,
    FeaturesArtifact,
    correlation,
    load_features,
    normalize,
    pca_feature_select,
    project2d,
    write_features,
)

__version__ = "0.1.0"

__all__ = [
    "ACQUIRE",
    "DEFAULT_BETA",
    "DEFAULT_KNN_K",
    "CorrelationMatrix",
    "DppKernel",
    "FeatureMatrix",
    "FeaturesArtifact",
    "MeasureMatrix",
    "MeasureSpec",
    "PRUNE",
    "REGISTRY",
    "REGISTRY_NAMES",
    "RunBundle",
    "SelectionResult",
    "SynthConfig",
    "badge_score",
    "build_kernel",
    "compute_all",
    "correctness",
    "correlation",
    "densities",
    "density_score",
    "ensemble_uncertainty",
    "errors",
    "exhaustive_map",
    "generate_bundle",
    "greedy_map",
    "knn_distance",
    "load_bundle",
    "load_features",
    "measure_spec",
    "normalize",
    "pca_feature_select",
    "planted_noise_indices",
    "pll",
    "project2d",
    "reference_measures",
    "resolve_labels",
    "result_to_json",
    "same_class_knn_distance",
    "save_result",
    "select",
    "static_confidence_entropy",
    "training_dynamics",
    "validate_bundle",
    "write_bundle",
    "write_features",
]
