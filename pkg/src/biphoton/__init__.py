"""Simulation and reconstruction of spatially entangled photon pairs pumped by partially coherent light."""

__version__ = "0.1.0"

from .core import (INFINITE, BiphotonGaussian, CrystalParams, PumpParams, beta, gamma_momentum,  # noqa: E402
                   gamma_position, schmidt_theory, sigma_k_theory, sigma_r_theory)
from .errors import ConfigurationError, DomainError, FormatError, ModeMismatchError  # noqa: E402

__all__ = [
    "INFINITE", "BiphotonGaussian", "CrystalParams", "PumpParams", "beta", "gamma_momentum", "gamma_position",
    "schmidt_theory", "sigma_k_theory", "sigma_r_theory",
    "ConfigurationError", "DomainError", "FormatError", "ModeMismatchError",
]
