from .checkpoint import CheckpointError, load_arrays, save_arrays
from .gradcheck import grad_check, layer_grad_check, relative_errors
from .layers import (
    BatchNorm2d,
    ConcatCoords,
    Conv2d,
    ConvTranspose2d,
    Dropout,
    Layer,
    Linear,
    ReLU,
    Sequential,
    ShapeError,
    Sigmoid,
    bilinear_kernel,
    mse_loss,
)
from .optim import AdamW, GradientOverflow, WarmRestartSchedule, lr_at
from .rng import stream, stream_key

__all__ = [
    "AdamW", "BatchNorm2d", "CheckpointError", "ConcatCoords", "Conv2d",
    "ConvTranspose2d", "Dropout", "GradientOverflow", "Layer", "Linear",
    "ReLU", "Sequential", "ShapeError", "Sigmoid", "WarmRestartSchedule",
    "bilinear_kernel", "grad_check", "layer_grad_check", "load_arrays",
    "lr_at", "mse_loss", "relative_errors", "save_arrays", "stream",
    "stream_key",
]
