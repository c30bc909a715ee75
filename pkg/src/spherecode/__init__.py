"""spherecode: spread identity vectors on the sphere, tokenize them into
short hierarchical codes, and train compact multi-token classifiers whose
output size grows with log(m) instead of m."""

from .baseline import (
    BaselineConfig,
    PullPushReport,
    ce_forward,
    ce_grad_decompose,
    init_centroids,
    train_baseline,
)
from .costs import CostProfile, fc_profile, gif_profile, scaling_table, subset_profile
from .data import (
    EmbeddingProvider,
    IdentitySampler,
    LongTailDataset,
    gen_identities,
    per_class_mean_init,
    sample_longtail,
)
from .errors import ConfigError, NumericAbort
from .model import (
    TokenHeads,
    TrainConfig,
    closed_set_accuracy,
    grad_ar,
    loss_ar,
    loss_total,
    predict_from_codes,
    predict_identities,
    token_probabilities,
    train_code_model,
)
from .sphere import (
    SeparationReport,
    UniformityConfig,
    gaussian_potential,
    normalize,
    optimize_code_vectors,
    separation_metrics,
    uniformity_grad,
    uniformity_loss,
)
from .tokenizer import (
    CodeShape,
    CodeTree,
    TokenizerConfig,
    assign_codes,
    build_code_tree,
    decode,
    spherical_kmeans,
    suggest_length,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "CodeShape",
    "CodeTree",
    "ConfigError",
    "CostProfile",
    "EmbeddingProvider",
    "IdentitySampler",
    "LongTailDataset",
    "NumericAbort",
    "PullPushReport",
    "SeparationReport",
    "TokenHeads",
    "TokenizerConfig",
    "TrainConfig",
    "UniformityConfig",
    "assign_codes",
    "build_code_tree",
    "ce_forward",
    "ce_grad_decompose",
    "closed_set_accuracy",
    "decode",
    "fc_profile",
    "gaussian_potential",
    "gen_identities",
    "gif_profile",
    "grad_ar",
    "init_centroids",
    "loss_ar",
    "loss_total",
    "normalize",
    "optimize_code_vectors",
    "per_class_mean_init",
    "predict_from_codes",
    "predict_identities",
    "sample_longtail",
    "scaling_table",
    "separation_metrics",
    "spherical_kmeans",
    "subset_profile",
    "suggest_length",
    "token_probabilities",
    "train_code_model",
    "train_baseline",
    "uniformity_grad",
    "uniformity_loss",
]
