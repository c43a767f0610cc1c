from .tensor import Tensor, concat, conv2d, group_norm, linear, mse_loss, relu, silu, softmax, upsample2x
from .layers import Conv2d, CrossAttention, GroupNorm, Linear, Module, cross_attention, time_embedding
from .optim import ParamStore, adam_step
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "concat", "conv2d", "group_norm", "linear", "mse_loss", "relu", "silu", "softmax",
    "upsample2x", "Conv2d", "CrossAttention", "GroupNorm", "Linear", "Module", "cross_attention",
    "time_embedding", "ParamStore", "adam_step", "load_checkpoint", "save_checkpoint",
]
