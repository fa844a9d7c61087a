"""Run artifacts: metrics CSV, manifest and exported embeddings."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict
from pathlib import Path

from ..matrix import write_csv
from .data import SyntheticDataset
from .train import TrainConfig, TrainRun, export_embeddings

METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.json"
EMBEDDINGS_FILE = "embeddings.csv"
REPRESENTATIONS_FILE = "representations.csv"


def config_dict(config: TrainConfig) -> dict:
    """Fully resolved, JSON-ready view of a TrainConfig."""
    spec = config.loss
    return {
        "loss": spec.loss_id,
        "loss_params": {
            "lambda_inv": spec.weights.lambda_inv,
            "mu_var": spec.weights.mu_var,
            "nu_cov": spec.weights.nu_cov,
            "tau": spec.tau,
            "lambda_bt": spec.lambda_bt,
            "alpha": spec.alpha,
            "negatives": spec.negatives,
        },
        "normalization": config.normalization,
        "batch_size": config.batch_size,
        "epochs": config.epochs,
        "base_lr": config.base_lr,
        "effective_lr": config.effective_lr,
        "warmup_epochs": config.warmup_epochs,
        "weight_decay": config.weight_decay,
        "momentum": config.momentum,
        "seed": config.seed,
        "augmentation": asdict(config.augmentation),
        "online_probe": config.online_probe,
        "probe_lr": config.probe_lr,
        "tcr_invariance": config.tcr_invariance,
    }


def write_metrics(path: str | os.PathLike, metrics: list[dict]) -> None:
    fields = list(metrics[0]) if metrics else ["epoch"]
    for row in metrics:
        fields += [k for k in row if k not in fields]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in metrics:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_run(run_dir: str | os.PathLike, run: TrainRun, dataset: SyntheticDataset, n_export: int = 512,
              extra: dict | None = None) -> Path:
    """Write metrics, manifest and held-out embeddings for a finished run."""
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / METRICS_FILE, run.metrics)
    X = dataset.X_test[:n_export]
    K, R = export_embeddings(run.model, X, run.config.normalization)
    write_csv(out / EMBEDDINGS_FILE, K)
    write_csv(out / REPRESENTATIONS_FILE, R)
    manifest = {
        "train": config_dict(run.config),
        "model": {**asdict(run.model_spec)},
        "dataset": asdict(dataset.spec),
        "export": {"split": "test", "n": int(K.shape[1]), "M": int(K.shape[0])},
        "final_online_accuracy": run.final_online_accuracy,
        "offline_accuracy": run.offline_accuracy,
    }
    if extra:
        manifest.update(extra)
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out

