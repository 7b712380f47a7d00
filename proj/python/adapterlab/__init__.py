"""Low-rank residual adapters on a miniature ViT."""

from ._core import (
    PreconditionError,
    ShapeError,
    adapter_forward,
    adapter_param_count,
    elbow_check,
    residual_apply,
    run_cli,
    tail_decay,
    total_trainable_count,
    truncation_error,
)

__all__ = [
    "PreconditionError",
    "ShapeError",
    "adapter_forward",
    "adapter_param_count",
    "elbow_check",
    "residual_apply",
    "run_cli",
    "tail_decay",
    "total_trainable_count",
    "truncation_error",
]
