from .layers import Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU
from .model import ForwardState, Model
from .train import EpochMetrics, TrainConfig, TrainResult, train
from .checkpoint import load_model, save_model

__all__ = [
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool2D",
    "ReLU",
    "ForwardState",
    "Model",
    "EpochMetrics",
    "TrainConfig",
    "TrainResult",
    "train",
    "load_model",
    "save_model",
]
