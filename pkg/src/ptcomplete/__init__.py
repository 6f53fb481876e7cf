"""Template-guided point cloud completion on a small numpy autodiff engine."""

from .config import ModelConfig, TrainConfig, load_config
from .geometry import PointCloud
from .metrics import MetricsReport, chamfer, fscore
from .model import CompletionModel

__all__ = [
    "CompletionModel",
    "MetricsReport",
    "ModelConfig",
    "PointCloud",
    "TrainConfig",
    "chamfer",
    "fscore",
    "load_config",
]
__version__ = "0.1.0"
