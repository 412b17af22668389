"""Denoised non-local attention for segmentation on a small autodiff core."""

__version__ = "0.1.0"

from .backend import backend_name
from .tensor import Tensor, no_grad, tensor, zeros

__all__ = ["Tensor", "tensor", "zeros", "no_grad", "backend_name", "__version__"]
