"""Distilling a causal transformer language model into an xLSTM student, on numpy."""

from .config import ConfigError, RunConfig, load_config, make_config

__version__ = "0.1.0"

__all__ = ["ConfigError", "RunConfig", "load_config", "make_config", "__version__"]
