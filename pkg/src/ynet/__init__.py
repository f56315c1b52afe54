"""Goal, waypoint and path heatmap forecasting on semantic scene maps."""

from .errors import ConfigError, DataError, NumericalError, ShapeError, YNetError
from .model import ModelConfig, YNet
from .scene import Scene, load_scene, save_scene

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "ModelConfig",
    "NumericalError",
    "Scene",
    "ShapeError",
    "YNet",
    "YNetError",
    "load_scene",
    "save_scene",
]
