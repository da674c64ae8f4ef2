"""Four-channel spatial-channel attention network for significant wave
height retrieval, with the collocation pipeline and evaluation suite."""

from .autodiff import Parameter, Tensor, count_params
from .config import ModelConfig, SplitSpec, SynthSpec, TrainConfig
from .model import WaveHeightModel, batch_loss, huber_value
from .training import AdamW, train

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "ModelConfig",
    "Parameter",
    "SplitSpec",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "WaveHeightModel",
    "batch_loss",
    "count_params",
    "huber_value",
    "train",
    "__version__",
]
