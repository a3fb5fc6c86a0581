"""Reverse-mode differentiation and first-order optimisation."""

from .optim import AdamConfig, AdamState, adam_step
from .tape import (
    Node,
    Tape,
    add,
    as_matrix,
    broadcast_col,
    broadcast_row,
    cholesky,
    clamp_min,
    concat,
    cos,
    div,
    exp,
    jittered_cholesky,
    log,
    logdet_cholesky,
    matmul,
    mul,
    neg,
    sin,
    slice_,
    solve_triangular,
    sqrt,
    square,
    sub,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "AdamConfig",
    "AdamState",
    "Node",
    "Tape",
    "adam_step",
    "add",
    "as_matrix",
    "broadcast_col",
    "broadcast_row",
    "cholesky",
    "clamp_min",
    "concat",
    "cos",
    "div",
    "exp",
    "jittered_cholesky",
    "log",
    "logdet_cholesky",
    "matmul",
    "mul",
    "neg",
    "sin",
    "slice_",
    "solve_triangular",
    "sqrt",
    "square",
    "sub",
    "sum_",
    "tanh",
    "transpose",
]
