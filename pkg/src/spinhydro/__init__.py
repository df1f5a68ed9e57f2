"""Simulation and analysis of spin diffusion in disordered dipolar ensembles."""
__version__ = "0.1.0"

from .constants import DEFAULT_CONSTANTS, MHZ, PhysicalConstants
from .curves import Curve
