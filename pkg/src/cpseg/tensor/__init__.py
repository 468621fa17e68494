"""Dense float tensors with reverse-mode automatic differentiation."""
from .conv import ConvParams, conv3d
from .core import (
    Node,
    ShapeError,
    Tensor,
    backward,
    default_dtype,
    get_default_dtype,
    graph,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
)
from .norm import BNParams, PReLUParams, batch_norm3d, prelu
from .ops import add, concat, max_pool2, mean, mul, scale, shift, sigmoid, split_channels, tsum
from .resample import interp_matrix, trilinear_upsample

__all__ = [
    "BNParams", "ConvParams", "Node", "PReLUParams", "ShapeError", "Tensor",
    "add", "backward", "batch_norm3d", "concat", "conv3d", "default_dtype",
    "get_default_dtype", "graph", "interp_matrix", "is_grad_enabled", "max_pool2",
    "mean", "mul", "no_grad", "prelu", "scale", "set_default_dtype", "shift",
    "sigmoid", "split_channels", "trilinear_upsample", "tsum",
]
