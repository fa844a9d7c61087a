"""Joint-embedding training loop with an online linear probe."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import normalization
from ..criteria import LOSS_IDS, LossSpec, LossValue
from ..errors import DivergedLoss
from ..gradients import value_and_grad
from .data import AugmentationConfig, SyntheticDataset, augment
from .model import MLP, ModelSpec, backward, forward, init_model
from .probe import OfflineProbeConfig, ProbeState, fit_linear_probe, online_probe_step

# InfoNCE-style criteria and SCL sum over anchors; the trainer averages them.
_SUM_OVER_ANCHORS = {"simclr", "simclr-abs", "simclr-sq", "dcl", "dcl-abs", "dcl-sq", "scl"}


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec = LossSpec("vicreg")
    normalization: str = "none"
    batch_size: int = 256
    epochs: int = 30
    base_lr: float = 0.1
    warmup_epochs: int = 2
    weight_decay: float = 1e-4
    momentum: float = 0.9
    seed: int = 0
    augmentation: AugmentationConfig = AugmentationConfig()
    online_probe: bool = True
    probe_lr: float = 0.05
    tcr_invariance: float = 1.0

    def __post_init__(self):
        normalization.scheme(self.normalization)
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_lr < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("need base_lr >= 0, weight_decay >= 0, 0 <= momentum < 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")

    @property
    def effective_lr(self) -> float:
        return self.base_lr * self.batch_size / 256


def lr_at(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear warmup to ``peak`` then cosine decay to zero."""
    if warmup_steps > 0 and step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    t = (step - warmup_steps) / max(1, total_steps - warmup_steps)
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(1.0, t)))


@dataclass
class TrainRun:
    config: TrainConfig
    model_spec: ModelSpec
    metrics: list[dict] = field(default_factory=list)
    model: MLP | None = None
    probe: ProbeState | None = None
    offline_accuracy: float | None = None

    @property
    def final_online_accuracy(self) -> float | None:
        return self.metrics[-1].get("online_test_acc") if self.metrics else None


def loss_and_grad(config: TrainConfig, E1: np.ndarray, E2: np.ndarray):
    """Training objective on projector outputs (samples as rows).

    Returns ``(LossValue, dE1, dE2)``; the normalization scheme is applied
    to each branch and differentiated through. An all-zero embedding
    stays zero under a normalizing scheme and receives no gradient.
    """
    spec = config.loss
    K1, back1 = normalization.apply_with_backward(config.normalization, E1.T, zero="keep")
    K2, back2 = normalization.apply_with_backward(config.normalization, E2.T, zero="keep")
    if spec.loss_id == "tcr":
        lv1, g1 = value_and_grad(spec, K1)
        lv2, g2 = value_and_grad(spec, K2)
        D = K1 - K2
        inv = float(np.mean(D * D))
        gi = 2.0 * D / D.size
        w = config.tcr_invariance
        lv = LossValue(lv1.value + lv2.value + w * inv,
                       {"coding_rate": lv1.value + lv2.value, "invariance": inv},
                       {"coding_rate": 1.0, "invariance": w})
        dK1, dK2 = g1.dK + w * gi, g2.dK - w * gi
    else:
        lv, g = value_and_grad(spec, K1, K2)
        dK1, dK2 = g.dK, g.dK2
        if spec.loss_id in _SUM_OVER_ANCHORS:
            n = K1.shape[1]
            lv = LossValue(lv.value / n, {k: v / n for k, v in lv.breakdown.items()}, lv.weights)
            dK1, dK2 = dK1 / n, dK2 / n
    return lv, back1(dK1).T, back2(dK2).T


def _rng_streams(seed: int):
    init, data = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init), np.random.default_rng(data)


def evaluate_representations(model: MLP, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rep, emb, _ = forward(model, X, train=False)
    return rep, emb


def train(config: TrainConfig, dataset: SyntheticDataset, model_spec: ModelSpec, log=None) -> TrainRun:
    """Train encoder + projector with SGD + momentum, warmup and cosine decay.

    Deterministic for a given ``(config, dataset, model_spec)``. The online
    probe consumes no randomness and never touches encoder parameters, so
    enabling it leaves the trained network bit-identical.

    Raises:
        DivergedLoss: if the loss or embeddings become non-finite.
    """
    if config.loss.loss_id not in LOSS_IDS:
        raise ValueError(config.loss.loss_id)
    rng_init, rng_data = _rng_streams(config.seed)
    model = init_model(model_spec, rng_init)
    n_classes = dataset.spec.n_classes
    probe = ProbeState.zeros(model_spec.rep_dim, n_classes)

    X, y = dataset.X_train, dataset.y_train
    X_test, y_test = dataset.X_test, dataset.y_test
    n = X.shape[0]
    bs = config.batch_size
    steps_per_epoch = n // bs
    if steps_per_epoch < 1:
        raise ValueError(f"batch_size {bs} exceeds training set size {n}")
    total = steps_per_epoch * config.epochs
    warmup = steps_per_epoch * config.warmup_epochs
    peak = config.effective_lr

    params = model.named_params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    decayed = {k for k in params if k.endswith(".W")}

    run = TrainRun(config, model_spec)
    step = 0
    for epoch in range(config.epochs):
        order = rng_data.permutation(n)
        sums: dict[str, float] = {}
        probe_hits = []
        lr = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * bs : (b + 1) * bs]
            v1, v2 = augment(X[idx], config.augmentation, rng_data)
            rep1, e1, c1 = forward(model, v1, train=True)
            rep2, e2, c2 = forward(model, v2, train=True)
            if not (np.isfinite(e1).all() and np.isfinite(e2).all()):
                raise DivergedLoss(epoch, step, float("nan"))
            lv, d1, d2 = loss_and_grad(config, e1, e2)
            if not np.isfinite(lv.value):
                raise DivergedLoss(epoch, step, lv.value)

            grads = backward(model, c1, d1)
            backward(model, c2, d2, grads)

            lr = lr_at(step, total, warmup, peak)
            for k, p in params.items():
                g = grads[k]
                if k in decayed:
                    g = g + config.weight_decay * p
                velocity[k] *= config.momentum
                velocity[k] += g
                p -= lr * velocity[k]

            if config.online_probe:
                yy = np.concatenate([y[idx], y[idx]])
                probe_hits.append(
                    online_probe_step(np.concatenate([rep1, rep2]), yy, probe, lr=config.probe_lr * lr / peak if peak > 0 else 0.0)
                )

            sums["loss"] = sums.get("loss", 0.0) + lv.value
            for k, v in lv.breakdown.items():
                sums[k] = sums.get(k, 0.0) + v
            step += 1

        rep_t, emb_t = evaluate_representations(model, X_test)
        row = {"epoch": epoch, "lr": lr}
        row.update({k: v / steps_per_epoch for k, v in sums.items()})
        if config.online_probe:
            row["online_train_acc"] = float(np.mean(probe_hits))
            row["online_test_acc"] = probe.accuracy(rep_t, y_test)
        row["emb_min_std"] = float(emb_t.std(axis=0).min())
        run.metrics.append(row)
        if log is not None:
            log(row)

    run.model = model
    run.probe = probe
    return run


def offline_probe(model: MLP, dataset: SyntheticDataset, cfg: OfflineProbeConfig = OfflineProbeConfig()) -> float:
    """Fit a fresh linear classifier on frozen training representations and
    return held-out accuracy."""
    H_train, _ = evaluate_representations(model, dataset.X_train)
    H_test, _ = evaluate_representations(model, dataset.X_test)
    predict = fit_linear_probe(H_train, dataset.y_train, dataset.spec.n_classes, cfg)
    return float(np.mean(predict(H_test) == dataset.y_test))


def export_embeddings(model: MLP, X: np.ndarray, normalization_scheme: str = "none"):
    """Eval-mode embeddings ``(M, n)`` under the training normalization, and
    row-centered representations ``(R, n)``."""
    rep, emb = evaluate_representations(model, X)
    K = normalization.apply(normalization_scheme, emb.T)
    R = rep.T - rep.T.mean(axis=1, keepdims=True)
    return K, R
