"""Scene-graph conditioned diffusion toolkit."""

from .conditioning import (
    ConditioningBuilder,
    ConditioningSignal,
    ExternalEmbeddingProvider,
    StubEmbeddingProvider,
    null_conditioning,
)
from .datasets import (
    ShapeColorDetector,
    ToyDatasetConfig,
    generate_toy_dataset,
    load_dataset,
    load_manifest,
    save_manifest,
    toy_vocabulary,
)
from .diffusion import (
    Denoiser,
    DiffusionTrainer,
    IdentityCodec,
    NoiseSchedule,
    make_schedule,
    q_sample,
    sample,
    sample_unconditional,
)
from .encoder import GraphConvLayer, GraphEncoder, NodeEdgeState
from .errors import DataError, NumericError
from .estimators import GraphClipAligner, SceneGraphDiffusion
from .gca import Discriminator, GcaTrainConfig, discriminator_loss, generator_loss, train_gca
from .losses import KernelSpec, LossWeights, l_align, l_clip, l_recon, l_train, mmd2
from .metrics import (
    MetricsReport,
    StubFeatureExtractor,
    compute_report,
    diversity_score,
    fid,
    inception_score,
    oor,
)
from .scenegraph import (
    BoxLayout,
    ImageGraphPair,
    SceneGraph,
    Vocabulary,
    synth_spatial_graph,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "BoxLayout",
    "ConditioningBuilder",
    "ConditioningSignal",
    "DataError",
    "Denoiser",
    "DiffusionTrainer",
    "Discriminator",
    "ExternalEmbeddingProvider",
    "GcaTrainConfig",
    "GraphClipAligner",
    "GraphConvLayer",
    "GraphEncoder",
    "IdentityCodec",
    "ImageGraphPair",
    "KernelSpec",
    "LossWeights",
    "MetricsReport",
    "NodeEdgeState",
    "NoiseSchedule",
    "NumericError",
    "SceneGraph",
    "SceneGraphDiffusion",
    "ShapeColorDetector",
    "StubEmbeddingProvider",
    "StubFeatureExtractor",
    "ToyDatasetConfig",
    "Vocabulary",
    "compute_report",
    "discriminator_loss",
    "diversity_score",
    "fid",
    "generate_toy_dataset",
    "generator_loss",
    "inception_score",
    "l_align",
    "l_clip",
    "l_recon",
    "l_train",
    "load_dataset",
    "load_manifest",
    "make_schedule",
    "mmd2",
    "null_conditioning",
    "oor",
    "q_sample",
    "sample",
    "sample_unconditional",
    "save_manifest",
    "synth_spatial_graph",
    "toy_vocabulary",
    "train_gca",
    "validate",
]
