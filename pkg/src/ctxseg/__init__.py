"""ctxseg: context-conditioned segmentation and classification toolkit."""

from ._kernels import BACKEND
from .autodiff import Tensor, no_grad, parameter

__all__ = ["Tensor", "no_grad", "parameter", "BACKEND"]
__version__ = "0.1.0"
