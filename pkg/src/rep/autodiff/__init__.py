from rep.autodiff.gradcheck import grad_check
from rep.autodiff.optim import AdamState, adam_step
from rep.autodiff.tensor import ShapeError, Tape, Tensor, backward

__all__ = ["AdamState", "ShapeError", "Tape", "Tensor", "adam_step", "backward", "grad_check"]
