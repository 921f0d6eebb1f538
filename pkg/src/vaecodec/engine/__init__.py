from .functional import (
    ShapeError,
    conv2d,
    conv_output_size,
    leaky_relu,
    mse,
    sigmoid,
    stable_sigmoid,
    transposed_conv2d,
    transposed_output_size,
)
from .gradcheck import check_gradients, numerical_grad, relative_error
from .optim import adam_step, zero_grad
from .tensor import Parameter, Tensor, backward, is_grad_enabled, no_grad, unbroadcast

__all__ = [
    "Parameter",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "check_gradients",
    "conv2d",
    "conv_output_size",
    "is_grad_enabled",
    "leaky_relu",
    "mse",
    "no_grad",
    "numerical_grad",
    "relative_error",
    "sigmoid",
    "stable_sigmoid",
    "transposed_conv2d",
    "transposed_output_size",
    "unbroadcast",
    "zero_grad",
]
