from bevground.model.grids import BEVGrid, GridSpec
from bevground.model.matching import hungarian_match
from bevground.model.network import BEVGroundingModel, ModelConfig
from bevground.model.train import TrainConfig, load_checkpoint, predict_corpus, save_checkpoint, train

__all__ = [
    "BEVGrid",
    "BEVGroundingModel",
    "GridSpec",
    "ModelConfig",
    "TrainConfig",
    "hungarian_match",
    "load_checkpoint",
    "predict_corpus",
    "save_checkpoint",
    "train",
]
