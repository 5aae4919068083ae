"""From-scratch ConvLSTM video classifier for violent/non-violent clips."""

from .model import ModelConfig, build_model, count_params, forward
from .train import TrainConfig

__all__ = ["ModelConfig", "TrainConfig", "build_model", "count_params", "forward"]
__version__ = "0.1.0"
