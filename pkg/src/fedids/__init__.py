"""Federated transformer intrusion-detection simulator in plain numpy."""

from .model import ModelConfig, count_params, forward, init_model, predict

__all__ = ["ModelConfig", "count_params", "forward", "init_model", "predict"]
__version__ = "0.1.0"
