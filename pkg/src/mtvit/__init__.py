"""Multi-tailed vision transformer with learned tail selection, in numpy."""

from .tensor import Tensor, no_grad
from .vit import EncoderConfig, EncoderParams
from .tails import TailConfig, MultiTailViT, multi_tail_forward
from .selector import Decision, TemperatureSchedule, gumbel_sample
from .objective import LossConfig
from .flops import BackboneSpec, FlopsReport, overall_flops

__all__ = [
    "Tensor",
    "no_grad",
    "EncoderConfig",
    "EncoderParams",
    "TailConfig",
    "MultiTailViT",
    "multi_tail_forward",
    "Decision",
    "TemperatureSchedule",
    "gumbel_sample",
    "LossConfig",
    "BackboneSpec",
    "FlopsReport",
    "overall_flops",
]
