"""Desk-scale joint-embedding training on synthetic class clusters."""

from .data import AugmentationConfig, DatasetSpec, SyntheticDataset, augment, generate_dataset
from .model import MLP, ModelSpec, backward, forward, init_model
from .probe import OfflineProbeConfig, ProbeState, fit_linear_probe, online_probe_step
from .presets import DEFAULT_DATASET, DEFAULT_SEEDS, TUNED, collapse_config, default_model, tuned_config
from .runio import write_run
from .train import TrainConfig, TrainRun, export_embeddings, loss_and_grad, lr_at, offline_probe, train

__all__ = [
    "AugmentationConfig", "DatasetSpec", "SyntheticDataset", "augment", "generate_dataset",
    "MLP", "ModelSpec", "backward", "forward", "init_model",
    "OfflineProbeConfig", "ProbeState", "fit_linear_probe", "online_probe_step",
    "DEFAULT_DATASET", "DEFAULT_SEEDS", "TUNED", "collapse_config", "default_model", "tuned_config", "write_run",
    "TrainConfig", "TrainRun", "export_embeddings", "loss_and_grad", "lr_at", "offline_probe", "train",
]
