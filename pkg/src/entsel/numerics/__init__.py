"""Minimal dense-tensor math with reverse-mode autodiff."""

from .gradcheck import GradCheckReport, grad_check
from .tensor import (
    ComputeGraph,
    Tensor,
    add,
    add_scalar,
    backward,
    debug_checks_enabled,
    dropout,
    embedding,
    gelu,
    l2_normalize,
    layer_norm,
    log,
    matmul,
    mean_rows,
    mul,
    mul_scalar,
    neg,
    reshape,
    set_debug_checks,
    sigmoid,
    slice_rows,
    softmax,
    stack,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "ComputeGraph",
    "GradCheckReport",
    "Tensor",
    "add",
    "add_scalar",
    "backward",
    "debug_checks_enabled",
    "dropout",
    "embedding",
    "gelu",
    "grad_check",
    "l2_normalize",
    "layer_norm",
    "log",
    "matmul",
    "mean_rows",
    "mul",
    "mul_scalar",
    "neg",
    "reshape",
    "set_debug_checks",
    "sigmoid",
    "slice_rows",
    "softmax",
    "stack",
    "tmean",
    "transpose",
    "tsum",
]
