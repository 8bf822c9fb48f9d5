"""Label-free geometry diagnostics for stepwise model representations.

The package measures how much structure a model's hidden states carry while
it works through a prompt: a local intrinsic-dimension estimate over point
clouds, a log-determinant information volume for single trajectories, and a
combined health score that compares stimulus-driven structure against the
model's ambient representation capacity. Trajectories live in a small binary
file format with a JSON manifest; the ``manifold-probe`` command drives the
standard analyses end to end.
"""

from .estimators import (
    DEFAULT_K,
    IdEstimate,
    NeighborList,
    center,
    information_volume,
    knn,
    tle_global,
    tle_local,
)
from .stats import (
    DEFAULT_LEVEL,
    DEFAULT_N_BOOT,
    BootstrapCI,
    RankCorrelation,
    bootstrap_ci,
    spearman,
)
from .store import (
    DecodeConfig,
    EmbeddingMatrix,
    Manifest,
    ManifestEntry,
    TrajectoryHeader,
    TrajectoryRecord,
    TrajectorySet,
    ValidationReport,
    load_dataset,
    load_manifest,
    read_embeddings,
    read_trajectory,
    save_manifest,
    validate_manifest,
    write_embeddings,
    write_trajectory,
)
from .diagnostics import (
    DEFAULT_EPSILON,
    DEFAULT_VOCAB_SAMPLE,
    ControlReport,
    ExpansionCurve,
    HealthReport,
    LayerProfile,
    StimulusSummary,
    WorldDimensionality,
    alternate_control,
    expansion_curve,
    health_report,
    health_score,
    layer_profile,
    shuffle_control,
    stimulus_dimensionality,
    stimulus_volume,
    truncate_control,
    world_dimensionality,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "DEFAULT_K",
    "DEFAULT_EPSILON",
    "DEFAULT_LEVEL",
    "DEFAULT_N_BOOT",
    "DEFAULT_VOCAB_SAMPLE",
    "BootstrapCI",
    "ControlReport",
    "DecodeConfig",
    "EmbeddingMatrix",
    "ExpansionCurve",
    "HealthReport",
    "IdEstimate",
    "LayerProfile",
    "Manifest",
    "ManifestEntry",
    "NeighborList",
    "RankCorrelation",
    "StimulusSummary",
    "TrajectoryHeader",
    "TrajectoryRecord",
    "TrajectorySet",
    "ValidationReport",
    "WorldDimensionality",
    "alternate_control",
    "bootstrap_ci",
    "center",
    "expansion_curve",
    "health_report",
    "health_score",
    "information_volume",
    "knn",
    "layer_profile",
    "load_dataset",
    "load_manifest",
    "read_embeddings",
    "read_trajectory",
    "save_manifest",
    "shuffle_control",
    "spearman",
    "stimulus_dimensionality",
    "stimulus_volume",
    "tle_global",
    "tle_local",
    "truncate_control",
    "validate_manifest",
    "world_dimensionality",
    "write_embeddings",
    "write_trajectory",
]
