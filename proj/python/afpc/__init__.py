"""Affine-field frame prediction: numpy bindings to the C++ core."""

from ._core import (
    ConfigError,
    FormatError,
    Grid,
    IoError,
    NumericalError,
    UsageError,
    apply_field,
    cli,
    count_params,
    estimate_flops,
    extract_pair,
    generate_sequences,
    gradcheck,
    identity_field,
    rollout,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Grid",
    "IoError",
    "NumericalError",
    "UsageError",
    "apply_field",
    "cli",
    "count_params",
    "estimate_flops",
    "extract_pair",
    "generate_sequences",
    "gradcheck",
    "identity_field",
    "rollout",
]
