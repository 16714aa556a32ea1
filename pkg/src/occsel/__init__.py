"""Pool-based acquisition engine for dense per-sample class-probability data.

Scores unlabeled samples by how novel their class composition is relative
to the labeled set, how diverse the running selection stays, and how
uncertain the model is on the sample's rare classes; then greedily picks
an annotation batch.  Ships random, mean-entropy, and k-center coreset
baselines behind the same interface, a scalable min-divergence index, a
binary grid format with summary/selection/state files, and a synthetic
long-tail simulator for end-to-end validation at desk scale.
"""

from .distributions import (
    ClassDistribution,
    EmbeddingVector,
    VoxelProbabilityGrid,
    WeightVector,
    class_distribution,
    frequency_weighted_uncertainty,
    hellinger_embed,
    jsd,
    per_class_entropy_mass,
    prevalence_weights,
    voxel_entropy,
)
from .annindex import DivergenceIndex, IndexConfig, build_index
from .baselines import (
    PolicyConfig,
    select_coreset,
    select_entropy,
    select_random,
    select_with_policy,
)
from .selection import (
    ComponentScores,
    CycleState,
    SelectionConfig,
    SelectionEntry,
    SelectionResult,
    apply_selection,
    combined_score,
    inter_sample_diversity,
    intra_set_diversity,
    robust_normalize,
    select_batch,
)
from .simulate import (
    CycleReport,
    PoolSpec,
    SimPool,
    SurrogateLearner,
    compare_policies,
    generate_pool,
    simulate_cycles,
)
from .summaries import SampleSummary, SummaryBatch, summarize_grid
from . import errors, poolio

__version__ = "0.1.0"

__all__ = [
    "ClassDistribution",
    "ComponentScores",
    "CycleReport",
    "CycleState",
    "DivergenceIndex",
    "EmbeddingVector",
    "IndexConfig",
    "PolicyConfig",
    "PoolSpec",
    "SampleSummary",
    "SelectionConfig",
    "SelectionEntry",
    "SelectionResult",
    "SimPool",
    "SummaryBatch",
    "SurrogateLearner",
    "VoxelProbabilityGrid",
    "WeightVector",
    "apply_selection",
    "build_index",
    "class_distribution",
    "combined_score",
    "compare_policies",
    "errors",
    "frequency_weighted_uncertainty",
    "generate_pool",
    "hellinger_embed",
    "inter_sample_diversity",
    "intra_set_diversity",
    "jsd",
    "per_class_entropy_mass",
    "poolio",
    "prevalence_weights",
    "robust_normalize",
    "select_batch",
    "select_coreset",
    "select_entropy",
    "select_random",
    "select_with_policy",
    "simulate_cycles",
    "summarize_grid",
    "voxel_entropy",
]
