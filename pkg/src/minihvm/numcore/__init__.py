from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    attention,
    cross_entropy,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    reshape,
    scatter_rows,
    softmax,
    sub,
    tensor,
    transpose,
)
from .gradcheck import grad_check
from .optim import AdamW, OptState, adamw_step
from .checkpoint import CheckpointError, read_arrays, write_arrays

__all__ = [
    "Tensor",
    "tensor",
    "NonFiniteError",
    "ShapeError",
    "add",
    "sub",
    "mul",
    "matmul",
    "reshape",
    "transpose",
    "gather_rows",
    "scatter_rows",
    "mean",
    "layer_norm",
    "softmax",
    "gelu",
    "attention",
    "cross_entropy",
    "grad_check",
    "OptState",
    "adamw_step",
    "AdamW",
    "read_arrays",
    "write_arrays",
    "CheckpointError",
]
