from .tensor import FLOAT32, FLOAT64, ShapeError, Tensor, as_tensor, grad_enabled, no_grad, parameter, record
from .ops import (
    GruParams,
    add,
    avgpool2x,
    bce_with_logits,
    bilinear_sample,
    concat,
    conv2d,
    div,
    gather_pixels,
    gru_cell,
    leaky_relu,
    lookup_volume,
    maximum,
    minimum,
    mul,
    neg,
    reshape,
    sigmoid,
    softplus,
    split,
    sub,
    tanh,
    tmean,
    tsum,
    upsample2x,
)
from .gradcheck import GradReport, check_gradients

__all__ = [
    "FLOAT32", "FLOAT64", "ShapeError", "Tensor", "as_tensor", "grad_enabled", "no_grad",
    "parameter", "record", "GruParams", "add", "avgpool2x", "bce_with_logits",
    "bilinear_sample", "concat", "conv2d", "div", "gather_pixels", "gru_cell",
    "leaky_relu", "lookup_volume", "maximum", "minimum", "mul", "neg", "reshape",
    "sigmoid", "softplus", "split", "sub", "tanh", "tmean", "tsum", "upsample2x",
    "GradReport", "check_gradients",
]
