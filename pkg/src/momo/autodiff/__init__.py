from .functional import conv1d, conv_output_length, pad_reflect, project_joints, upsample_nearest
from .gradcheck import check_gradients, numeric_grad, relative_error
from .optim import Adam, AdamState, adam_step
from .tensor import (
    DTYPE,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    clip,
    concat,
    cosine_similarity,
    div,
    exp,
    getitem,
    leaky_relu,
    log,
    matmul,
    maxpool_time,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    sub,
    tabs,
    transpose,
    tsum,
)

__all__ = [
    "DTYPE", "Tensor", "Adam", "AdamState", "adam_step", "add", "as_tensor", "broadcast_to",
    "check_gradients", "clip", "concat", "conv1d", "conv_output_length", "cosine_similarity",
    "div", "exp", "getitem", "leaky_relu", "log", "matmul", "maxpool_time", "mean", "mul",
    "numeric_grad", "pad_reflect", "project_joints", "relative_error", "relu", "reshape",
    "sigmoid", "sub", "tabs", "transpose", "tsum", "upsample_nearest",
]
