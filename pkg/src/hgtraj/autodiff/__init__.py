from . import tensor as ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .nn import MLP, Linear, Module, param
from .optim import Adam, AdamState, NumericError, adam_step, step_lr
from .tensor import ShapeError, Tensor, no_grad

__all__ = [
    "Adam", "AdamState", "CheckpointError", "Linear", "MLP", "Module", "NumericError",
    "ShapeError", "Tensor", "adam_step", "grad_check", "load_checkpoint", "no_grad", "ops",
    "param", "save_checkpoint", "step_lr",
]
