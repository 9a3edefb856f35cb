"""Minimal float32 tensor engine: layers, SGD, checkpoints and gradient checks."""

from .checkpoint import load_checkpoint, parameter_checksum, save_checkpoint
from .gradcheck import GradCheckReport, check_layer, grad_check, layer_suite
from .kernels import BACKEND
from .layers import Conv2D, Dense, Dropout, Flatten, Layer, LayerGrads, MaxPool2x2, ReLU, Sequential
from .ops import (
    DTYPE,
    EngineError,
    conv2d,
    conv2d_backward,
    cross_entropy,
    dense,
    dense_backward,
    dropout,
    maxpool2x2,
    maxpool2x2_backward,
    relu,
    sgd_step,
    softmax,
    softmax_cross_entropy_backward,
)
