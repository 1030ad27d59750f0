"""Spike-native continual learning with temporal-alignment replay."""

__version__ = "0.1.0"

from .autodiff import Tensor, no_grad, double_precision
from .lif import LifParams, lif_step, lif_scan, surrogate_grad
from .softdtw import SdtwConfig, soft_min, sdtw_forward, sdtw_backward, sdtw_loss
from .optim import Adam, CosineSchedule, ParamStore

__all__ = [
    "Tensor",
    "no_grad",
    "double_precision",
    "LifParams",
    "lif_step",
    "lif_scan",
    "surrogate_grad",
    "SdtwConfig",
    "soft_min",
    "sdtw_forward",
    "sdtw_backward",
    "sdtw_loss",
    "Adam",
    "CosineSchedule",
    "ParamStore",
    "__version__",
]
