"""Minimal reverse-mode differentiation over numpy float64 arrays."""
from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .engine import ContractError, DiffArray, ShapeError, backward, is_grad_enabled, no_grad
from .gradcheck import GradCheckResult, check_gradients, kink_margin, numeric_gradient, replay_gradient
from .nn import MLP, FeedForward, LayerNorm, Linear, Module, Parameter
from .ops import DomainError, RangeError
from .optim import AdamState, AdamW, adamw_step, clip_grad_norm

__all__ = [
    "AdamState", "AdamW", "CheckpointError", "ContractError", "DiffArray", "DomainError",
    "FeedForward", "GradCheckResult", "LayerNorm", "Linear", "MLP", "Module", "Parameter",
    "RangeError", "ShapeError", "adamw_step", "backward", "check_gradients", "clip_grad_norm",
    "is_grad_enabled", "kink_margin", "load_checkpoint", "no_grad", "numeric_gradient", "ops", "replay_gradient", "save_checkpoint",
]
