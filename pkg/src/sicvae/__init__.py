"""Probabilistic sea-ice forecast bias correction with a conditional VAE."""

from .baseline import ClimatologyCorrector, badj_adjust, climatological_bias
from .estimator import CVAECorrector
from .grid import PolarGrid, fold_polar, unfold_polar
from .model import CVAE, NetConfig
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "CVAE",
    "CVAECorrector",
    "ClimatologyCorrector",
    "NetConfig",
    "PolarGrid",
    "TrainConfig",
    "badj_adjust",
    "climatological_bias",
    "fold_polar",
    "unfold_polar",
]
