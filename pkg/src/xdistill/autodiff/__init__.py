from . import ops
from .gradcheck import GradCheckReport, finite_difference_check, relative_error
from .tensor import GradTape, Tensor, as_tensor, backward, current_tape, no_grad, tensor, zero_grads

__all__ = [
    "ops",
    "Tensor",
    "GradTape",
    "tensor",
    "as_tensor",
    "backward",
    "no_grad",
    "current_tape",
    "zero_grads",
    "finite_difference_check",
    "GradCheckReport",
    "relative_error",
]
