from litetok.numerics.tensor import (
    Tape, Tensor, backward, concat, default_dtype, exp, getitem, matmul, mean, no_tape,
    permute, precision, reshape, sqrt, square, take, tsum,
)
from litetok.numerics.functional import (
    LN_EPS, clamp_abs, depthwise_conv1d, gelu, layer_norm, linear, mse, softmax_last_axis,
)
from litetok.numerics.gradcheck import finite_difference_check
from litetok.numerics import ltf

__all__ = [
    "Tape", "Tensor", "backward", "concat", "default_dtype", "exp", "getitem", "matmul", "mean",
    "no_tape", "permute", "precision", "reshape", "sqrt", "square", "take", "tsum", "LN_EPS",
    "clamp_abs", "depthwise_conv1d", "gelu", "layer_norm", "linear", "mse", "softmax_last_axis",
    "finite_difference_check", "ltf",
]
