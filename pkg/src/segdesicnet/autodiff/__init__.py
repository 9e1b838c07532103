"""Minimal reverse-mode differentiation over numpy arrays."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import ParameterStore, Tensor, backward, no_grad

__all__ = ["ops", "Tensor", "ParameterStore", "backward", "no_grad", "save_checkpoint", "load_checkpoint"]
