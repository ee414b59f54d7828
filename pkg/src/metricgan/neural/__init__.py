from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import Conv2d, Dense, power_iteration, spectral_normalize
from .nets import DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet
from .params import ParamSet
from .tensor import NumericalError, Tensor, backward

__all__ = [
    "CheckpointError", "Conv2d", "Dense", "DiscriminatorConfig", "DiscriminatorNet",
    "GeneratorConfig", "GeneratorNet", "NumericalError", "ParamSet", "Tensor", "backward",
    "load_checkpoint", "power_iteration", "save_checkpoint", "spectral_normalize",
]
