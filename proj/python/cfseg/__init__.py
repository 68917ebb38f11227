"""Synthetic SCM, segmentation metrics and preference-study primitives."""

from ._cfseg import (
    ArgumentError,
    ConfigError,
    ConflictError,
    DataError,
    NotFoundError,
    SessionStore,
    ValidationError,
    build_dataset,
    degrade_to_silver,
    density_overlap,
    dice,
    freedman_diaconis_bins,
    render,
    sample_attributes,
    volume,
)

__all__ = [
    "ArgumentError",
    "ConfigError",
    "ConflictError",
    "DataError",
    "NotFoundError",
    "SessionStore",
    "ValidationError",
    "build_dataset",
    "degrade_to_silver",
    "density_overlap",
    "dice",
    "freedman_diaconis_bins",
    "render",
    "sample_attributes",
    "volume",
]
