"""Spacetime E(n)-equivariant transformer for spatio-temporal graphs, on a small
numpy autodiff engine, with a charged N-body data generator."""

__version__ = "0.1.0"

from .model import Model, SetConfig, default_config  # noqa: E402
from .nbody import DataConfig, generate_dataset, generate_splits  # noqa: E402
from .training import TrainConfig, evaluate, train  # noqa: E402

__all__ = [
    "DataConfig",
    "Model",
    "SetConfig",
    "TrainConfig",
    "default_config",
    "evaluate",
    "generate_dataset",
    "generate_splits",
    "train",
]
