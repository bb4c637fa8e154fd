"""Minimal dense-tensor engine with reverse-mode differentiation."""
from .checkpoint import load_checkpoint, save_checkpoint
from .functional import (
    LstmParams,
    LstmState,
    ShapeError,
    batchnorm,
    conv2d,
    conv_output_size,
    dense,
    dropout,
    lstm_decode_step,
    lstm_encode,
    lstm_layer,
    maxpool2d,
    mse_loss,
    zero_state,
)
from .layers import LSTM, BatchNorm, Conv2D, Dense, Module
from .optim import SGD, Adam, MissingGradientError, OptimizerState, adam_step
from .tensor import GraphFreedError, Tensor, concat, no_grad, relu, sigmoid, stack, tanh

__all__ = [
    "Tensor", "GraphFreedError", "no_grad", "ShapeError", "MissingGradientError",
    "conv2d", "conv_output_size", "maxpool2d", "batchnorm", "relu", "dropout", "dense", "mse_loss",
    "sigmoid", "tanh", "concat", "stack",
    "LstmParams", "LstmState", "zero_state", "lstm_layer", "lstm_encode", "lstm_decode_step",
    "Module", "Conv2D", "BatchNorm", "Dense", "LSTM",
    "OptimizerState", "adam_step", "Adam", "SGD",
    "save_checkpoint", "load_checkpoint",
]
