"""Synthetic class-cluster data and vector augmentations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DatasetSpec:
    n_samples: int = 4096
    input_dim: int = 32
    n_classes: int = 8
    radius: float = 4.0
    sigma_class: float = 1.0
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < self.n_classes or self.n_classes < 1 or self.input_dim < 1:
            raise ValueError("need n_samples >= n_classes >= 1 and input_dim >= 1")
        if self.radius < 0 or self.sigma_class < 0:
            raise ValueError("radius and sigma_class must be non-negative")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")


@dataclass
class SyntheticDataset:
    spec: DatasetSpec
    means: np.ndarray  # (n_classes, input_dim)
    X: np.ndarray  # (n_samples, input_dim)
    y: np.ndarray  # (n_samples,)
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def X_train(self):
        return self.X[self.train_idx]

    @property
    def y_train(self):
        return self.y[self.train_idx]

    @property
    def X_test(self):
        return self.X[self.test_idx]

    @property
    def y_test(self):
        return self.y[self.test_idx]


def generate_dataset(spec: DatasetSpec = DatasetSpec()) -> SyntheticDataset:
    """Gaussian clusters around class means drawn on a sphere of radius ``spec.radius``.

    Labels are assigned round-robin, so class sizes differ by at most one.
    The held-out split is stratified.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xDA7A]))
    means = rng.standard_normal((spec.n_classes, spec.input_dim))
    means *= spec.radius / np.linalg.norm(means, axis=1, keepdims=True)
    y = np.arange(spec.n_samples) % spec.n_classes
    y = y[rng.permutation(spec.n_samples)]
    X = means[y] + spec.sigma_class * rng.standard_normal((spec.n_samples, spec.input_dim))

    test = []
    for c in range(spec.n_classes):
        idx = np.flatnonzero(y == c)
        k = int(round(spec.test_fraction * idx.size))
        test.append(rng.permutation(idx)[:k])
    test_idx = np.sort(np.concatenate(test))
    train_idx = np.setdiff1d(np.arange(spec.n_samples), test_idx)
    return SyntheticDataset(spec, means, X, y, train_idx, test_idx)


@dataclass(frozen=True)
class AugmentationConfig:
    """Additive noise, multiplicative scale jitter and inverted coordinate dropout."""

    noise_std: float = 1.0
    scale_lo: float = 0.8
    scale_hi: float = 1.2
    dropout: float = 0.1

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0 < self.scale_lo <= self.scale_hi:
            raise ValueError("need 0 < scale_lo <= scale_hi")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def mean_scale(self) -> float:
        return 0.5 * (self.scale_lo + self.scale_hi)


def augment_one(x: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    x = np.atleast_2d(x)
    n = x.shape[0]
    s = rng.uniform(cfg.scale_lo, cfg.scale_hi, size=(n, 1))
    v = s * x
    if cfg.noise_std > 0:
        v = v + cfg.noise_std * rng.standard_normal(x.shape)
    if cfg.dropout > 0:
        keep = rng.random(x.shape) >= cfg.dropout
        v = v * keep / (1.0 - cfg.dropout)
    return v


def augment(x: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator):
    """Two independent draws from the same augmentation distribution.

    Dropout is inverted, so ``E[view] = mean_scale * x``.
    """
    return augment_one(x, cfg, rng), augment_one(x, cfg, rng)
