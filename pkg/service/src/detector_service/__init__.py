"""HTTP detection service exposing pretrained object detectors to the attack engine."""

from .app import create_app, map_model_output
from .backends import MODEL_NAMES, load_backend
from .cli import ServiceConfig, main, serve

__version__ = "0.1.0"

__all__ = [
    "MODEL_NAMES",
    "ServiceConfig",
    "create_app",
    "load_backend",
    "main",
    "map_model_output",
    "serve",
]
