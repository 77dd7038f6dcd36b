"""Prune backdoor channels of a CNN by per-channel spectral norm."""

from clp._core import (
    ClpError,
    ConfigError,
    DimensionError,
    FormatError,
    IndexError,
    IoError,
    Model,
    NumericalError,
    StructureError,
    apply_trigger,
    channel_sigma,
    defend,
    evaluate,
    load_model,
    make_resnet18,
    make_tinynet,
    model_from_bytes,
    pearson,
    spectral_norm,
    synthetic_dataset,
    uclc,
)

__all__ = [
    "ClpError",
    "ConfigError",
    "DimensionError",
    "FormatError",
    "IndexError",
    "IoError",
    "Model",
    "NumericalError",
    "StructureError",
    "apply_trigger",
    "channel_sigma",
    "defend",
    "evaluate",
    "load_model",
    "make_resnet18",
    "make_tinynet",
    "model_from_bytes",
    "pearson",
    "spectral_norm",
    "synthetic_dataset",
    "uclc",
]
