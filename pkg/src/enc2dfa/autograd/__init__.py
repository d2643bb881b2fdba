"""Minimal float64 tensor engine: taped reverse-mode autodiff plus AdamW."""

from .gradcheck import grad_check
from .optim import AdamWConfig, AdamWState, adamw_step
from .params import ParamStore
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    abs_,
    accumulate,
    add,
    as_tensor,
    backward,
    concat,
    constants,
    cross_entropy,
    custom_op,
    embedding_lookup,
    gelu,
    index,
    l1_distance,
    layer_norm,
    linear,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_,
    softmax,
    sub,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "AdamWConfig", "AdamWState", "NonFiniteError", "ParamStore", "ShapeError", "Tape", "Tensor",
    "abs_", "accumulate", "adamw_step", "add", "as_tensor", "backward", "concat", "constants", "cross_entropy", "custom_op",
    "embedding_lookup", "gelu", "grad_check", "index", "l1_distance", "layer_norm", "linear", "matmul", "mul",
    "relu", "reshape", "scale", "sigmoid", "slice_", "softmax", "sub", "sum_", "tanh", "transpose",
]
