"""Neural forecasters, their training loop and the conv-feature GBM hybrid."""
from .hybrid import HybridModel, UntrainedModelError, extract_conv_features, hybrid_fit
from .models import MODELS, N_TIME, CnnHead, CnnHeadConfig, CnnRnn, DenseStack, NeuralConfig, SpatialCnn, build_model
from .training import (ArraySource, History, TrainingConfig, TrainingDivergedError, evaluate_mse, load_model, predict,
                       save_model, train)

__all__ = [
    "CnnHeadConfig", "NeuralConfig", "CnnHead", "DenseStack", "SpatialCnn", "CnnRnn", "MODELS", "N_TIME",
    "build_model", "ArraySource", "TrainingConfig", "History", "TrainingDivergedError", "train", "predict", "evaluate_mse",
    "save_model", "load_model", "extract_conv_features", "hybrid_fit", "HybridModel", "UntrainedModelError",
]
