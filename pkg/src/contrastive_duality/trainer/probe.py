"""Linear probes on frozen representations.

The online probe is updated by one SGD step per training batch on
detached representations; the offline probe is fit to convergence after
training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize


def _softmax_xent(logits: np.ndarray, y: np.ndarray):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = y.size
    loss = -logp[np.arange(n), y].mean()
    P = np.exp(logp)
    P[np.arange(n), y] -= 1.0
    return loss, P / n


@dataclass
class ProbeState:
    W: np.ndarray
    b: np.ndarray
    vW: np.ndarray
    vb: np.ndarray

    @classmethod
    def zeros(cls, dim: int, n_classes: int) -> "ProbeState":
        return cls(np.zeros((dim, n_classes)), np.zeros(n_classes), np.zeros((dim, n_classes)), np.zeros(n_classes))

    def predict(self, H: np.ndarray) -> np.ndarray:
        return np.argmax(H @ self.W + self.b, axis=1)

    def accuracy(self, H: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(H) == y))


def online_probe_step(
    H: np.ndarray,
    y: np.ndarray,
    state: ProbeState,
    lr: float = 0.1,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> float:
    """One multinomial-logistic SGD step on ``H`` (treated as constant).

    Updates ``state`` in place and returns accuracy on this batch
    measured before the update.
    """
    H = np.array(H, dtype=np.float64, copy=True)  # stop-gradient: never aliases encoder buffers
    logits = H @ state.W + state.b
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    _, G = _softmax_xent(logits, y)
    gW = H.T @ G + weight_decay * state.W
    gb = G.sum(axis=0)
    state.vW = momentum * state.vW + gW
    state.vb = momentum * state.vb + gb
    state.W -= lr * state.vW
    state.b -= lr * state.vb
    return acc


@dataclass(frozen=True)
class OfflineProbeConfig:
    l2: float = 1e-4
    max_iter: int = 500
    standardize: bool = True


def fit_linear_probe(H: np.ndarray, y: np.ndarray, n_classes: int, cfg: OfflineProbeConfig = OfflineProbeConfig()):
    """Full-batch L-BFGS on L2-regularized softmax cross-entropy.

    Returns ``predict(H_new) -> labels``.
    """
    H = np.asarray(H, dtype=np.float64)
    if cfg.standardize:
        mu = H.mean(axis=0)
        sd = H.std(axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
    else:
        mu, sd = np.zeros(H.shape[1]), np.ones(H.shape[1])
    Z = (H - mu) / sd
    d = Z.shape[1]

    def fun(theta):
        W = theta[: d * n_classes].reshape(d, n_classes)
        b = theta[d * n_classes :]
        loss, G = _softmax_xent(Z @ W + b, y)
        loss += 0.5 * cfg.l2 * np.sum(W * W)
        gW = Z.T @ G + cfg.l2 * W
        return loss, np.concatenate([gW.ravel(), G.sum(axis=0)])

    theta0 = np.zeros(d * n_classes + n_classes)
    res = minimize(fun, theta0, jac=True, method="L-BFGS-B", options={"maxiter": cfg.max_iter})
    W = res.x[: d * n_classes].reshape(d, n_classes)
    b = res.x[d * n_classes :]

    def predict(Hn):
        return np.argmax(((np.asarray(Hn) - mu) / sd) @ W + b, axis=1)

    return predict
