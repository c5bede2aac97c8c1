"""Simulation tools for anisotropic long-range percolation, its branching
envelope, the attrition process and their SPDE limits."""

from .config import Caps, LatticeConfig, RunConfig, load_config, parse_config

__all__ = ["Caps", "LatticeConfig", "RunConfig", "load_config", "parse_config"]
__version__ = "0.1.0"
