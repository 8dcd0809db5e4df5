"""Generic-to-specific distillation of vision transformers."""

from ._core import (
    CheckpointError,
    Classifier,
    ConfigError,
    IndexError,
    NumericError,
    ShapeError,
    default_config,
    hard_label,
    known_recipes,
    linear_cka,
    load_checkpoint,
    masked_count,
    resolve_config,
    run_pipeline,
    sample_masks,
    save_checkpoint,
    synth_dataset,
)

__all__ = [
    "CheckpointError",
    "Classifier",
    "ConfigError",
    "IndexError",
    "NumericError",
    "ShapeError",
    "default_config",
    "hard_label",
    "known_recipes",
    "linear_cka",
    "load_checkpoint",
    "masked_count",
    "resolve_config",
    "run_pipeline",
    "sample_masks",
    "save_checkpoint",
    "synth_dataset",
]
