"""Minimal dense-tensor substrate with tape-based reverse-mode gradients."""
from .core import GraphError, Tensor, as_tensor, grad_enabled, no_grad
from .ops import (add, concat, conv2d, cross_entropy, dense, gap, log_softmax, maxpool2d,
                  mean, mul, relu, reshape, sap, sigmoid, softmax, split, stack, sub, take)
from .ops import sum as tsum

__all__ = [
    "GraphError", "Tensor", "add", "as_tensor", "concat", "conv2d", "cross_entropy", "dense",
    "gap", "grad_enabled", "log_softmax", "maxpool2d", "mean", "mul", "no_grad", "relu",
    "reshape", "sap", "sigmoid", "softmax", "split", "stack", "sub", "take", "tsum",
]
