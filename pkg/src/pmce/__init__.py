"""Few-shot classification on precomputed embeddings.

Builds a knowledge bank of base-class statistics, calibrates novel-class
prototypes with semantically retrieved priors, and refines embeddings with
a caption-guided enhancer trained on base classes. Includes a synthetic
correlated-embedding generator and an episodic evaluation harness.
"""

from pmce.enhancer import (
    EnhancerConfig,
    EnhancerParams,
    backward,
    forward,
    init_params,
    load_params,
    project_semantics,
    save_params,
)
from pmce.episodic_eval import (
    CLASSIFIERS,
    Episode,
    EvalConfig,
    EvalReport,
    aggregate_report,
    aggregate_support_semantics,
    classify_lr,
    classify_nearest,
    episode_predictions,
    evaluate,
    fit_lr,
    run_episode,
    sample_episode,
)
from pmce.feature_store import (
    DatasetSplit,
    FeatureRecord,
    StoreManifest,
    read_store,
    write_store,
)
from pmce.gradcheck import check_objective_gradients, finite_diff_grad
from pmce.knowledge_bank import KnowledgeBank, build_bank, load_bank, save_bank
from pmce.objectives import (
    ClassifierParams,
    LossWeights,
    cross_entropy,
    rec_loss,
    supcon_loss,
    total_loss,
)
from pmce.prior_retrieval import (
    PriorConfig,
    alpha_from_variances,
    calibrate_prototype,
    cosine_scores,
    default_alpha,
    map_fuse,
    prior_mean,
    prior_weights,
    top_k,
)
from pmce.synthetic import SynthConfig, generate, prior_informativeness
from pmce.trainer import (
    TrainConfig,
    TrainLog,
    batch_loss_and_grads,
    default_enhancer_config,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CLASSIFIERS",
    "ClassifierParams",
    "DatasetSplit",
    "EnhancerConfig",
    "EnhancerParams",
    "Episode",
    "EvalConfig",
    "EvalReport",
    "FeatureRecord",
    "KnowledgeBank",
    "LossWeights",
    "PriorConfig",
    "StoreManifest",
    "SynthConfig",
    "TrainConfig",
    "TrainLog",
    "aggregate_report",
    "aggregate_support_semantics",
    "alpha_from_variances",
    "backward",
    "batch_loss_and_grads",
    "build_bank",
    "calibrate_prototype",
    "check_objective_gradients",
    "classify_lr",
    "classify_nearest",
    "cosine_scores",
    "cross_entropy",
    "default_alpha",
    "default_enhancer_config",
    "episode_predictions",
    "evaluate",
    "finite_diff_grad",
    "fit_lr",
    "forward",
    "generate",
    "init_params",
    "load_bank",
    "load_params",
    "map_fuse",
    "prior_informativeness",
    "prior_mean",
    "prior_weights",
    "project_semantics",
    "read_store",
    "rec_loss",
    "run_episode",
    "sample_episode",
    "save_bank",
    "save_params",
    "supcon_loss",
    "top_k",
    "total_loss",
    "train",
    "write_store",
    "__version__",
]
