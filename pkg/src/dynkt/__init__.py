"""Dynamic neural knowledge tracing: Bi-GRU and TDNN response predictors."""

from .config import ModelConfig, RunConfig, TrainConfig
from .model import KTModel
from .tensor import Tensor, backward, grad_check

__all__ = ["KTModel", "ModelConfig", "RunConfig", "Tensor", "TrainConfig", "backward", "grad_check"]
__version__ = "0.1.0"
