from .adam import AdamState, TrainStats, loss_and_grads, train_step
from .checkpoint import load_checkpoint, save_checkpoint
from .nets import (
    GmfModel,
    MlpModel,
    ModelDims,
    NeuMfModel,
    Recommender,
    bce_loss,
    embedding_of,
    init_model,
    predict,
    sigmoid,
)

__all__ = [
    "AdamState", "TrainStats", "loss_and_grads", "train_step",
    "load_checkpoint", "save_checkpoint",
    "GmfModel", "MlpModel", "ModelDims", "NeuMfModel", "Recommender",
    "bce_loss", "embedding_of", "init_model", "predict", "sigmoid",
]
