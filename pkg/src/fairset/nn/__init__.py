from .layers import BatchNorm2d, Conv2d, Dense, Dropout, Flatten, MaxPool2d, ReLU
from .loss import softmax_cross_entropy
from .model import FEATURE_DIM, CnnModel, extract_features, load_model, save_model
from .train import TrainConfig, evaluate_accuracy, train

__all__ = [
    "BatchNorm2d",
    "Conv2d",
    "Dense",
    "Dropout",
    "Flatten",
    "MaxPool2d",
    "ReLU",
    "softmax_cross_entropy",
    "CnnModel",
    "FEATURE_DIM",
    "extract_features",
    "load_model",
    "save_model",
    "TrainConfig",
    "train",
    "evaluate_accuracy",
]
