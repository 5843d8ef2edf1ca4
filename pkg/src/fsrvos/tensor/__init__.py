"""Minimal float64 tensor engine with reverse-mode autodiff."""

from .core import (
    NonFiniteError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    get_tape,
    no_grad,
    set_debug,
    tape_scope,
)
from .gradcheck import finite_diff_check, param_grad_check
from .ops import (
    ShapeError,
    add,
    bilinear_upsample,
    broadcast_to,
    clamp,
    concat,
    conv2d,
    div,
    embedding,
    exp,
    getitem,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    power,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    stack,
    sub,
    sum,
    swap_last,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
