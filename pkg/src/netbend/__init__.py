"""Bend a frozen image generator by training a small module spliced between
its layers, steered by prompt-conditioned embedding objectives.

The heavy submodules (`cli`, `report`, `images`, `manifest`) are not imported
here; import them explicitly where needed.
"""

__version__ = "0.1.0"

from .bending import (
    BendingConfig,
    BendingModule,
    CoordinateGrid,
    apply_bm,
    coordinate_grid,
    make_bm,
)
from .diffsort import SoftPermutation, hard_decode, permute_axis, row_scores, soft_sort
from .errors import (
    BendError,
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    DegenerateEmbeddingError,
    InvalidLayerError,
    ShapeError,
    SizeError,
    TrainingDivergedError,
    UnknownAdapterError,
)
from .generator import (
    LatentBatch,
    LayerDescriptor,
    LayeredGenerator,
    build_toy_generator,
    forward_with_injection,
    list_layers,
    load_external_generator,
    register_generator_adapter,
)
from .objectives import (
    Embedder,
    LossConfig,
    ToyEmbedder,
    great_circle_loss,
    infonce_from_similarities,
    infonce_loss,
    load_external_embedder,
    loss_fn,
    mean_pairwise_cosine,
    normalize,
    register_embedder_adapter,
)
from .training import (
    LatentStream,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    load_run_metadata,
    sample_latents,
    save_checkpoint,
    train_bm,
)

__all__ = [
    "__version__",
    "BendError",
    "BendingConfig",
    "BendingModule",
    "CheckpointError",
    "CheckpointVersionError",
    "ConfigError",
    "CoordinateGrid",
    "DegenerateEmbeddingError",
    "Embedder",
    "InvalidLayerError",
    "LatentBatch",
    "LatentStream",
    "LayerDescriptor",
    "LayeredGenerator",
    "LossConfig",
    "ShapeError",
    "SizeError",
    "SoftPermutation",
    "ToyEmbedder",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "UnknownAdapterError",
    "apply_bm",
    "build_toy_generator",
    "coordinate_grid",
    "forward_with_injection",
    "great_circle_loss",
    "hard_decode",
    "infonce_from_similarities",
    "infonce_loss",
    "list_layers",
    "load_checkpoint",
    "load_external_embedder",
    "load_external_generator",
    "load_run_metadata",
    "loss_fn",
    "make_bm",
    "mean_pairwise_cosine",
    "normalize",
    "permute_axis",
    "register_embedder_adapter",
    "register_generator_adapter",
    "row_scores",
    "sample_latents",
    "save_checkpoint",
    "soft_sort",
    "train_bm",
]
