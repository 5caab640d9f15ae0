"""Minimal reverse-mode automatic differentiation on top of numpy."""

from . import ops
from .gradcheck import grad_check, numerical_grad
from .nn import MLP, BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Module, Parameter
from .optim import Adam
from .tensor import (
    Tensor,
    backward,
    default_dtype,
    get_default_dtype,
    grad,
    inject_fault,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "Adam", "BatchNorm2d", "Conv2d", "ConvTranspose2d", "Linear", "MLP", "Module", "Parameter",
    "Tensor", "backward", "default_dtype", "get_default_dtype", "grad", "grad_check",
    "inject_fault", "no_grad", "numerical_grad", "ops", "set_default_dtype",
]
