from . import ops
from .conv import conv2d, interp_matrix, layer_norm, pixel_shuffle, resize_bilinear
from .gradcheck import GradcheckReport, gradcheck
from .tensor import Gradients, Tape, Tensor, active_tape, as_tensor, backward

__all__ = [
    "ops",
    "conv2d",
    "interp_matrix",
    "layer_norm",
    "pixel_shuffle",
    "resize_bilinear",
    "GradcheckReport",
    "gradcheck",
    "Gradients",
    "Tape",
    "Tensor",
    "active_tape",
    "as_tensor",
    "backward",
]
