from . import ops
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .optim import AdamState, adam_step
from .tensor import ShapeError, Tape, Tensor, as_tensor, precision

__all__ = [
    "ops", "Tensor", "Tape", "ShapeError", "as_tensor", "precision",
    "AdamState", "adam_step", "save_arrays", "load_arrays", "CheckpointError",
]
