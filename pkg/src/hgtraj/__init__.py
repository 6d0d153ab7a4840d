"""Trajectory prediction on heterogeneous scene graphs built from lane maps,
semantic agent relations and anchor paths."""
from . import autodiff

__version__ = "0.1.0"
