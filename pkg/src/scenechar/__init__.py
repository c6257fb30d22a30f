"""Convolutional networks from scratch for isolated scene-character recognition."""

from .data import DatasetManifest, augment_five, build_manifest, read_manifest, split_dataset
from .experiment import ExperimentConfig, MetricsReport, evaluate, gradient_check, sweep, train
from .layers import (ConvLayer, FullyConnectedLayer, MaxPoolLayer, conv_backward, conv_forward,
                     fc_backward, fc_forward, maxpool_backward, maxpool_forward, relu, relu_backward,
                     softmax)
from .network import Network, NetworkSpec, architecture_a, architecture_b
from .optim import SgdConfig, cross_entropy, sgd_step
from .synth import synth_generate
from .tensor import Shape2D, conv_output_shape, matmul

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest", "augment_five", "build_manifest", "read_manifest", "split_dataset",
    "ExperimentConfig", "MetricsReport", "evaluate", "gradient_check", "sweep", "train",
    "ConvLayer", "FullyConnectedLayer", "MaxPoolLayer", "conv_backward", "conv_forward",
    "fc_backward", "fc_forward", "maxpool_backward", "maxpool_forward", "relu", "relu_backward", "softmax",
    "Network", "NetworkSpec", "architecture_a", "architecture_b",
    "SgdConfig", "cross_entropy", "sgd_step", "synth_generate",
    "Shape2D", "conv_output_shape", "matmul",
]
