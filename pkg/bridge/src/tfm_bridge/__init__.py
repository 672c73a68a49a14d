"""Inference bridge: serve in-context tabular regression over a line protocol."""

__version__ = "0.1.0"

from .models import EchoModel, load_model
from .protocol import Session

__all__ = ["EchoModel", "Session", "load_model", "__version__"]
