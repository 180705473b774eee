"""Receptive-field and Shake-Shake regularized CNNs for spectrogram tagging."""

__version__ = "0.1.0"

from .arch import ArchSpec, BlockSpec, build_cp_resnet, build_ss_resnet, build_vgg
from .model import Model, instantiate
from .rf import RFReport, compute_rf, empirical_rf, inverse_rho, rf_for_rho
from .tensor import Tensor

__all__ = [
    "ArchSpec",
    "BlockSpec",
    "Model",
    "RFReport",
    "Tensor",
    "build_cp_resnet",
    "build_ss_resnet",
    "build_vgg",
    "compute_rf",
    "empirical_rf",
    "instantiate",
    "inverse_rho",
    "rf_for_rho",
    "__version__",
]
