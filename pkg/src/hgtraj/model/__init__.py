"""Heterogeneous graph network, map autoencoder, loss and training loop."""
from .autoencoder import AEConfig, MapAutoencoder, load_autoencoder, pretrain_autoencoder, save_autoencoder
from .loss import LossResult, compute_loss
from .network import HGNet, ModelConfig, Output
# the training entry point stays at hgtraj.model.train.train so the submodule is not shadowed
from .train import Sample, TrainConfig, load_model, predict, prepare_samples, save_model

__all__ = [
    "AEConfig", "HGNet", "LossResult", "MapAutoencoder", "ModelConfig", "Output", "Sample", "TrainConfig",
    "compute_loss", "load_autoencoder", "load_model", "predict", "pretrain_autoencoder", "prepare_samples",
    "save_autoencoder", "save_model",
]
