"""Minimal reverse-mode autodiff over dense numpy arrays.

Everything the models train with lives here: the Tensor graph, the primitive
operations, a named parameter store, derived random streams, and the
finite-difference gradient checker.
"""

from . import kernels
from .gradcheck import finite_diff_check
from .params import ParameterStore
from .rng import stream
from .tensor import (
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    constant,
    cos,
    div,
    gelu,
    matmul,
    mean,
    mul,
    neg,
    outer,
    reshape,
    sin,
    softmax,
    sqrt,
    sum_,
    take,
    tanh,
    transpose,
)

__all__ = [
    "ShapeError",
    "Tensor",
    "ParameterStore",
    "add",
    "backward",
    "concat",
    "constant",
    "cos",
    "div",
    "finite_diff_check",
    "gelu",
    "kernels",
    "matmul",
    "mean",
    "mul",
    "neg",
    "outer",
    "reshape",
    "sin",
    "softmax",
    "sqrt",
    "stream",
    "sum_",
    "take",
    "tanh",
    "transpose",
]
