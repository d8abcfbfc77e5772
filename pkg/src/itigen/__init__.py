"""Inclusive token tuning for text prompts.

Learns small per-category token blocks that, appended to a base prompt,
steer a frozen text encoder so composed prompts separate along the same
directions as reference image embeddings, then audits generated samples
against a target category distribution.
"""

from . import config, tensor
from .attributes import (
    BASELINE_CATEGORY,
    AggregatedBlock,
    AttributeSet,
    AttributeSpec,
    ComposedPrompt,
    InclusiveTokenTable,
    PromptSet,
    PromptTemplate,
    aggregate,
    compose_prompt,
    conditional_subset,
    enumerate_prompt_set,
    parameter_count,
    transplant,
)
from .bundle import TensorBundle, read_bundle, write_bundle
from .encoders import (
    ImageEmbeddingSource,
    TextEncoder,
    ToyLinearEncoder,
    TransformerTextEncoder,
)
from .errors import (
    CapacityError,
    ConfigError,
    ContractError,
    CorruptBundleError,
    DataError,
    DegenerateInputError,
    DimensionError,
    IncompleteTableError,
    NumericalError,
    SchemaError,
    ToolchainError,
    UndefinedDivergenceError,
)
from .losses import (
    BatchStats,
    attribute_loss,
    batch_stats,
    direction_alignment_loss,
    image_direction,
    off_attribute_combos,
    pair_loss,
    prompt_direction,
    semantic_consistency_loss,
)
from .sampling import (
    AttributeAudit,
    DiscrepancyReport,
    ProxyGeneration,
    SamplingPlan,
    classify,
    evaluate,
    kl_discrepancy,
    plan_samples,
    prompt_anchors,
    proxy_generate,
    quota_counts,
)
from .training import Checkpoint, TrainConfig, sample_minibatch, train, train_step

__version__ = "0.1.0"

__all__ = [
    "config",
    "tensor",
    # attribute model
    "BASELINE_CATEGORY",
    "AggregatedBlock",
    "AttributeSet",
    "AttributeSpec",
    "ComposedPrompt",
    "InclusiveTokenTable",
    "PromptSet",
    "PromptTemplate",
    "aggregate",
    "compose_prompt",
    "conditional_subset",
    "enumerate_prompt_set",
    "parameter_count",
    "transplant",
    # encoders
    "ImageEmbeddingSource",
    "TextEncoder",
    "ToyLinearEncoder",
    "TransformerTextEncoder",
    # losses
    "BatchStats",
    "attribute_loss",
    "batch_stats",
    "direction_alignment_loss",
    "image_direction",
    "off_attribute_combos",
    "pair_loss",
    "prompt_direction",
    "semantic_consistency_loss",
    # training
    "Checkpoint",
    "TrainConfig",
    "sample_minibatch",
    "train",
    "train_step",
    # sampling and evaluation
    "AttributeAudit",
    "DiscrepancyReport",
    "ProxyGeneration",
    "SamplingPlan",
    "classify",
    "evaluate",
    "kl_discrepancy",
    "plan_samples",
    "prompt_anchors",
    "proxy_generate",
    "quota_counts",
    # bundles
    "TensorBundle",
    "read_bundle",
    "write_bundle",
    # errors
    "ToolchainError",
    "ConfigError",
    "SchemaError",
    "ContractError",
    "DimensionError",
    "CapacityError",
    "IncompleteTableError",
    "DataError",
    "CorruptBundleError",
    "DegenerateInputError",
    "UndefinedDivergenceError",
    "NumericalError",
    "__version__",
]
