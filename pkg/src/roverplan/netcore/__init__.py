"""Differentiable compute core: tensors, layers, loss, SGD, checkpoints."""

from .checkpoint import (
    MAGIC,
    FingerprintError,
    arch_fingerprint,
    load_checkpoint,
    save_checkpoint,
)
from .loss import (
    PROB_FLOOR,
    clamp_event_count,
    cross_entropy,
    l2_penalty,
    loss_value,
    reset_clamp_events,
    xent_l2_loss,
)
from .ops import (
    ShapeError,
    add,
    channel_max,
    concat,
    conv2d,
    flatten,
    gather_cells,
    linear,
    matmul,
    maxpool2d,
    relu,
    reshape,
    scale,
    softmax,
    take_rows,
)
from .params import ParamStore, he_uniform, sgd_step
from .tensor import (
    Tensor,
    backward,
    default_dtype,
    grad_enabled,
    no_grad,
    precision,
)

__all__ = [
    "MAGIC",
    "FingerprintError",
    "ParamStore",
    "PROB_FLOOR",
    "ShapeError",
    "Tensor",
    "add",
    "arch_fingerprint",
    "backward",
    "channel_max",
    "clamp_event_count",
    "concat",
    "conv2d",
    "cross_entropy",
    "default_dtype",
    "flatten",
    "gather_cells",
    "grad_enabled",
    "he_uniform",
    "l2_penalty",
    "linear",
    "load_checkpoint",
    "matmul",
    "maxpool2d",
    "no_grad",
    "precision",
    "relu",
    "reshape",
    "save_checkpoint",
    "scale",
    "sgd_step",
    "softmax",
    "take_rows",
    "loss_value",
    "xent_l2_loss",
]
