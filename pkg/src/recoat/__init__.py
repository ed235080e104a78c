"""Multi-modal trajectory prediction with distance attention and an ensemble of decoders."""

from .model import ModelConfig, PredictionSet, forward, init_params, predict
from .scene import AgentType, Scene, read_scene, write_scene
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AgentType", "ModelConfig", "PredictionSet", "Scene", "TrainConfig", "forward", "init_params",
    "predict", "read_scene", "write_scene",
]
