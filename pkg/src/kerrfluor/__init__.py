"""Emission spectra, dressed states and parameter fits for a driven Kerr resonator."""
from .model import DriveField, FrequencyGrid, MomentIndex, SystemParams

__version__ = "0.1.0"

__all__ = ["DriveField", "FrequencyGrid", "MomentIndex", "SystemParams", "__version__"]
