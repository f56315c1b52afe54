from .checkpoint import MAGIC, load_into, read_checkpoint, save_checkpoint
from .ops import (
    BCE_EPS,
    add,
    bce_loss,
    bilinear_upsample2,
    concat_channels,
    conv2d,
    maxpool2,
    relu,
    scale,
    sigmoid,
    slice_channels,
)
from .optim import adam_step, zero_grad
from .tensor import Parameter, Tensor

__all__ = [
    "BCE_EPS",
    "MAGIC",
    "Parameter",
    "Tensor",
    "adam_step",
    "add",
    "bce_loss",
    "bilinear_upsample2",
    "concat_channels",
    "conv2d",
    "load_into",
    "maxpool2",
    "read_checkpoint",
    "relu",
    "save_checkpoint",
    "scale",
    "sigmoid",
    "slice_channels",
    "zero_grad",
]
