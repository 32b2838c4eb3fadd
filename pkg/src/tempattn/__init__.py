"""Temporal attention networks for irregular clinical time series, with a
self-contained reverse-mode gradient engine, training loop, synthetic data
generator, and attention-map export."""

from .autodiff import Node
from .data import PatientJourney, SyntheticConfig, generate_synthetic
from .model import ModelConfig, ModelParams, assemble_model, forward
from .train import TrainConfig

__all__ = [
    "Node",
    "PatientJourney",
    "SyntheticConfig",
    "generate_synthetic",
    "ModelConfig",
    "ModelParams",
    "assemble_model",
    "forward",
    "TrainConfig",
]
