"""Few-shot class-incremental learning over pre-extracted feature embeddings.

The pipeline: load labeled embeddings, adapt a bottleneck head on the base
session with mixture-prototype losses, calibrate few-shot class statistics
against the base classes, score with shrunk-correlation Mahalanobis
distances, and optionally soft-vote with a random-projection ridge scorer.
"""

__version__ = "0.1.0"

from .store import (
    EmbeddingDataset,
    DatasetManifest,
    LabeledEmbedding,
    SessionPlan,
    build_session_plan,
    load_embeddings,
    sample_session_data,
    write_embeddings,
)
from .hypersphere import (
    VmfParams,
    assignment_weights,
    mixture_class_posterior,
    normalize,
    vmf_log_density_unnorm,
)
from .adaptation import (
    BottleneckHead,
    PrototypeBank,
    TrainConfig,
    balance_weights,
    extract_base_covariances,
    extract_base_prototypes,
    forward_embed,
    loss_ce,
    loss_compact,
    loss_proto_contrastive,
    loss_total,
    prune_prototypes,
    train_base_session,
    update_prototypes_ema,
)
from .analogy import (
    CalibrationParams,
    ClassStatistics,
    analogy_weights,
    build_new_class_prototypes,
    calibrate_covariance,
    calibrate_mean,
    mahalanobis,
    shrink_and_normalize,
    similarity,
)
from .protocol import (
    OtsScorer,
    ProtocolConfig,
    RandomProjectionScorer,
    SessionResult,
    macro_metrics,
    predict,
    run_protocol,
    soft_vote,
)
from .synth import make_synthetic_dataset

__all__ = [
    "EmbeddingDataset", "DatasetManifest", "LabeledEmbedding", "SessionPlan",
    "build_session_plan", "load_embeddings", "sample_session_data", "write_embeddings",
    "VmfParams", "assignment_weights", "mixture_class_posterior", "normalize",
    "vmf_log_density_unnorm",
    "BottleneckHead", "PrototypeBank", "TrainConfig", "balance_weights",
    "extract_base_covariances", "extract_base_prototypes", "forward_embed",
    "loss_ce", "loss_compact", "loss_proto_contrastive", "loss_total",
    "prune_prototypes", "train_base_session", "update_prototypes_ema",
    "CalibrationParams", "ClassStatistics", "analogy_weights",
    "build_new_class_prototypes", "calibrate_covariance", "calibrate_mean",
    "mahalanobis", "shrink_and_normalize", "similarity",
    "OtsScorer", "ProtocolConfig", "RandomProjectionScorer", "SessionResult",
    "macro_metrics", "predict", "run_protocol", "soft_vote",
    "make_synthetic_dataset",
]
