"""Reverse-mode automatic differentiation and neural-network building blocks."""

from . import ops
from .kernels import BACKEND
from .tensor import Tensor, as_tensor, get_default_dtype, no_grad, precision, set_default_dtype, strict

__all__ = ["BACKEND", "Tensor", "as_tensor", "get_default_dtype", "no_grad", "ops", "precision",
           "set_default_dtype", "strict"]
