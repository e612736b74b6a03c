"""Python access to the fdft real/fake image classifier."""

from ._core import (
    ConfigError,
    DatasetError,
    DimensionError,
    Error,
    FormatError,
    MetricError,
    Model,
    NumericError,
    StateError,
    accuracy,
    auroc,
    cosine_lr,
    ftt_param_rows,
    generate_synthetic,
    load_ppm,
    mbblock_param_rows,
    save_ppm,
)

__all__ = [
    "ConfigError",
    "DatasetError",
    "DimensionError",
    "Error",
    "FormatError",
    "MetricError",
    "Model",
    "NumericError",
    "StateError",
    "accuracy",
    "auroc",
    "cosine_lr",
    "ftt_param_rows",
    "generate_synthetic",
    "load_ppm",
    "mbblock_param_rows",
    "save_ppm",
]
