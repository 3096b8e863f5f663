"""Dense tensors with reverse-mode differentiation, layers' primitives and Adam."""

from . import functional
from .autograd import (
    NonFiniteError,
    Tensor,
    as_tensor,
    concat,
    cross,
    default_dtype,
    exp,
    get_default_dtype,
    log,
    matmul,
    mean,
    no_grad,
    norm,
    relu,
    set_default_dtype,
    sigmoid,
    softplus,
    split,
    sqrt,
    stack,
    sum_,
)
from .optim import AdamState, adam_step, clip_grad_norm
from .params import ParameterStore

__all__ = [
    "AdamState", "NonFiniteError", "ParameterStore", "Tensor", "adam_step",
    "as_tensor", "clip_grad_norm", "concat", "cross", "default_dtype", "exp",
    "functional", "get_default_dtype", "log", "matmul", "mean", "no_grad",
    "norm", "relu", "set_default_dtype", "sigmoid", "softplus", "split",
    "sqrt", "stack", "sum_",
]
