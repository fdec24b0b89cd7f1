"""Hierarchical auxiliary learning: ResNet classifiers with a superclass-driven
auxiliary block, written from scratch on numpy."""
from ._kernels import BACKEND
from .auxblock import AuxBlockState, aux_backward, aux_forward, aux_score_export
from .model import NetworkSpec, ResNet
from .superclass import SuperclassScheme, builtin_scheme
from .tensor import Rng
from .train import RunRecord, TrainConfig, cosine_lr, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AuxBlockState", "aux_backward", "aux_forward", "aux_score_export",
    "NetworkSpec", "ResNet", "SuperclassScheme", "builtin_scheme", "Rng",
    "RunRecord", "TrainConfig", "cosine_lr", "evaluate", "train",
]
