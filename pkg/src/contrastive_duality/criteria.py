"""Loss criteria for joint-embedding self-supervised learning.

All criteria take embedding matrices of shape ``(M, N)`` (dimensions x
samples). Sample-contrastive criteria act on the ``N x N`` Gram matrix,
dimension-contrastive criteria on the ``M x M`` dimension matrix.

Every public function validates its preconditions. Pass ``check=False``
to evaluate the bare formula (used by finite-difference oracles, where
perturbed inputs drift off the constraint set by O(h)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import InvalidMatrix, NotNormalized, NotStandardized, ShapeMismatch, UnknownLoss
from .matrix import (
    as_embedding,
    col_norm_pow4_sum,
    covariance_raw,
    covariance_sample,
    gram,
    offdiag_sq_frobenius,
    row_norm_pow4_sum,
)

SimilarityTransform = Literal["identity", "absolute", "square"]
Negatives = Literal["single", "two-branch"]

VARIANCE_EPS = 1e-4
UNIT_NORM_TOL = 1e-6
STANDARDIZED_MEAN_TOL = 1e-6
STANDARDIZED_VAR_TOL = 1e-4

LOSS_IDS = (
    "vicreg",
    "vicreg-exp",
    "vicreg-ctr",
    "vicreg-ctr-rewrite",
    "simclr",
    "simclr-abs",
    "simclr-sq",
    "dcl",
    "dcl-abs",
    "dcl-sq",
    "scl",
    "barlow-twins",
    "tcr",
)


@dataclass(frozen=True)
class VicregWeights:
    """Weights of the invariance, variance and covariance terms."""

    lambda_inv: float = 25.0
    mu_var: float = 25.0
    nu_cov: float = 1.0

    def __post_init__(self):
        for name in ("lambda_inv", "mu_var", "nu_cov"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class LossValue:
    """A scalar loss with its unweighted terms and their weights."""

    value: float
    breakdown: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    def __float__(self) -> float:
        return self.value


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError(f"temperature must be > 0, got {tau}")
    return tau


def _pair(K, K2):
    K = as_embedding(K, "K")
    K2 = as_embedding(K2, "K'")
    if K.shape != K2.shape:
        raise ShapeMismatch(f"branch shapes differ: {K.shape} vs {K2.shape}")
    return K, K2


def _need_samples(K: np.ndarray, n: int = 2):
    if K.shape[1] < n:
        raise InvalidMatrix(f"need at least {n} samples (columns), got {K.shape[1]}")


def _check_unit_columns(K: np.ndarray, name: str = "K"):
    norms = np.linalg.norm(K, axis=0)
    dev = np.abs(norms - 1.0)
    if np.any(dev > UNIT_NORM_TOL):
        i = int(np.argmax(dev))
        raise NotNormalized(f"{name} column {i} has norm {norms[i]:.9g}, expected 1")


def transform_similarity(x: np.ndarray, f: SimilarityTransform) -> np.ndarray:
    if f == "identity":
        return x
    if f == "absolute":
        return np.abs(x)
    if f == "square":
        return x * x
    raise ValueError(f"unknown similarity transform {f!r}")


def transform_similarity_deriv(x: np.ndarray, f: SimilarityTransform) -> np.ndarray:
    if f == "identity":
        return np.ones_like(x)
    if f == "absolute":
        return np.sign(x)  # subgradient 0 at exactly 0
    if f == "square":
        return 2.0 * x
    raise ValueError(f"unknown similarity transform {f!r}")


def masked_logsumexp(X: np.ndarray, mask: np.ndarray | None = None, axis: int = -1):
    """Row-wise log-sum-exp over the entries where ``mask`` is True.

    Returns ``(lse, weights)`` where ``weights`` is the softmax over the
    selected entries (zero elsewhere). Max subtraction keeps it finite for
    arbitrarily large inputs.
    """
    X = np.asarray(X, dtype=np.float64)
    if mask is None:
        mask = np.ones(X.shape, dtype=bool)
    Xm = np.where(mask, X, -np.inf)
    mx = Xm.max(axis=axis, keepdims=True)
    if not np.all(np.isfinite(mx)):
        raise ValueError("log-sum-exp over an empty set")
    E = np.where(mask, np.exp(Xm - mx), 0.0)
    s = E.sum(axis=axis, keepdims=True)
    lse = np.squeeze(mx + np.log(s), axis=axis)
    return lse, E / s


# -- contrastive / non-contrastive criteria ----------------------------------


def l_c(K) -> float:
    """Sample-contrastive criterion: off-diagonal energy of ``K^T K``."""
    return offdiag_sq_frobenius(gram(K))


def l_nc(K) -> float:
    """Dimension-contrastive criterion: off-diagonal energy of ``K K^T``."""
    return offdiag_sq_frobenius(covariance_raw(K))


def l_reg(K) -> float:
    """Norm correction turning ``l_c`` into ``l_nc``: sum col^4 - sum row^4."""
    return col_norm_pow4_sum(K) - row_norm_pow4_sum(K)


# -- VICReg building blocks ---------------------------------------------------


def invariance_mse(K, K2) -> float:
    """Mean squared difference between the branches over all M*N entries."""
    K, K2 = _pair(K, K2)
    D = K - K2
    return float(np.mean(D * D))


def variance_hinge(K) -> float:
    """Mean over rows of ``relu(1 - sqrt(var + 1e-4))``, unbiased variance."""
    K = as_embedding(K)
    _need_samples(K)
    std = np.sqrt(K.var(axis=1, ddof=1) + VARIANCE_EPS)
    return float(np.mean(np.maximum(0.0, 1.0 - std)))


def covariance_c(K) -> float:
    """Off-diagonal energy of the sample covariance of the dimensions."""
    K = as_embedding(K)
    _need_samples(K)
    return offdiag_sq_frobenius(covariance_sample(K))


def c_exp(K, tau: float) -> float:
    """Log-sum-exp repulsion over off-diagonal covariance entries.

    ``mean_i log sum_{j != i} exp(C_ij / tau)`` with ``C`` the sample
    covariance of the rows of ``K``.
    """
    K = as_embedding(K)
    tau = _check_tau(tau)
    if K.shape[0] < 2:
        raise InvalidMatrix("c_exp needs at least 2 rows (the inner sum excludes the diagonal)")
    _need_samples(K)
    C = covariance_sample(K)
    lse, _ = masked_logsumexp(C / tau, ~np.eye(C.shape[0], dtype=bool))
    return float(lse.mean())


def _vicreg_like(K, K2, w: VicregWeights, var_fn, cov_fn) -> LossValue:
    inv = invariance_mse(K, K2)
    var = var_fn(K) + var_fn(K2)
    cov = cov_fn(K) + cov_fn(K2)
    total = w.lambda_inv * inv + w.mu_var * var + w.nu_cov * cov
    return LossValue(
        float(total),
        {"invariance": inv, "variance": var, "covariance": cov},
        {"invariance": w.lambda_inv, "variance": w.mu_var, "covariance": w.nu_cov},
    )


def vicreg(K, K2, w: VicregWeights = VicregWeights()) -> LossValue:
    K, K2 = _pair(K, K2)
    _need_samples(K)
    return _vicreg_like(K, K2, w, variance_hinge, covariance_c)


def vicreg_exp(K, K2, w: VicregWeights, tau: float) -> LossValue:
    K, K2 = _pair(K, K2)
    _need_samples(K)
    return _vicreg_like(K, K2, w, variance_hinge, lambda X: c_exp(X, tau))


def vicreg_ctr(K, K2, w: VicregWeights, tau: float) -> LossValue:
    """VICReg-exp with variance and covariance applied to the transposes.

    The variance term then acts on embedding norms and the log-sum-exp on
    the off-diagonal of the (centered) Gram matrix.
    """
    K, K2 = _pair(K, K2)
    if K.shape[0] < 2 or K.shape[1] < 2:
        raise InvalidMatrix("vicreg_ctr needs M >= 2 and N >= 2")
    inv = invariance_mse(K, K2)
    var = variance_hinge(K.T) + variance_hinge(K2.T)
    cov = c_exp(K.T, tau) + c_exp(K2.T, tau)
    total = w.lambda_inv * inv + w.mu_var * var + w.nu_cov * cov
    return LossValue(
        float(total),
        {"invariance": inv, "variance": var, "covariance": cov},
        {"invariance": w.lambda_inv, "variance": w.mu_var, "covariance": w.nu_cov},
    )


def contrastive_covariance_term(K) -> float:
    """``l_c + l_reg`` on the centered, ``1/sqrt(N-1)``-scaled matrix.

    By the Gram/covariance duality this equals ``covariance_c(K)``, but it
    is computed entirely from the sample Gram matrix and norms.
    """
    K = as_embedding(K)
    _need_samples(K)
    Kh = (K - K.mean(axis=1, keepdims=True)) / np.sqrt(K.shape[1] - 1)
    return l_c(Kh) + l_reg(Kh)


def vicreg_contrastive_rewrite(K, K2, w: VicregWeights = VicregWeights()) -> LossValue:
    """VICReg with its covariance term expressed through ``l_c`` and ``l_reg``."""
    K, K2 = _pair(K, K2)
    _need_samples(K)
    return _vicreg_like(K, K2, w, variance_hinge, contrastive_covariance_term)


# -- InfoNCE family -----------------------------------------------------------


def _infonce_logits(K, K2, tau, f, negatives):
    """Per-anchor logits: column 0 is the positive, the rest negatives.

    Returns ``(logits, neg_mask)`` with logits of shape ``(N, 1 + N)`` or
    ``(N, 1 + 2N)`` for two-branch negatives.
    """
    N = K.shape[1]
    pos = np.einsum("ji,ji->i", K, K2)
    S = K.T @ K
    off = ~np.eye(N, dtype=bool)
    blocks = [transform_similarity(S, f) / tau]
    masks = [off]
    if negatives == "two-branch":
        Q = K.T @ K2
        blocks.append(transform_similarity(Q, f) / tau)
        masks.append(off)
    elif negatives != "single":
        raise ValueError(f"unknown negatives mode {negatives!r}")
    logits = np.concatenate([transform_similarity(pos, f)[:, None] / tau] + blocks, axis=1)
    mask = np.concatenate([np.zeros((N, 1), dtype=bool)] + masks, axis=1)
    return logits, mask


def _infonce_prechecks(K, K2, tau, check):
    K, K2 = _pair(K, K2)
    tau = _check_tau(tau)
    _need_samples(K)
    if check:
        _check_unit_columns(K, "K")
        _check_unit_columns(K2, "K'")
    return K, K2, tau


def simclr_infonce(
    K,
    K2,
    tau: float,
    f: SimilarityTransform = "identity",
    negatives: Negatives = "single",
    check: bool = True,
) -> float:
    """InfoNCE summed over anchors; the positive is in the denominator.

    Negatives for anchor ``i`` are the other columns of ``K`` (and of
    ``K'`` as well with ``negatives="two-branch"``).
    """
    K, K2, tau = _infonce_prechecks(K, K2, tau, check)
    logits, neg = _infonce_logits(K, K2, tau, f, negatives)
    full = neg.copy()
    full[:, 0] = True
    lse, _ = masked_logsumexp(logits, full)
    return float(np.sum(lse - logits[:, 0]))


def dcl(
    K,
    K2,
    tau: float,
    f: SimilarityTransform = "identity",
    negatives: Negatives = "single",
    check: bool = True,
) -> float:
    """Decoupled contrastive loss: InfoNCE without the positive in the denominator."""
    K, K2, tau = _infonce_prechecks(K, K2, tau, check)
    logits, neg = _infonce_logits(K, K2, tau, f, negatives)
    lse, _ = masked_logsumexp(logits, neg)
    return float(np.sum(lse - logits[:, 0]))


def spectral_contrastive(K, K2) -> float:
    """``-2 * sum_i <K_i, K'_i> + l_c(K)``."""
    K, K2 = _pair(K, K2)
    return float(-2.0 * np.einsum("ji,ji->", K, K2) + l_c(K))


# -- other dimension-contrastive criteria ------------------------------------


def _check_standardized(K: np.ndarray, name: str):
    mean = K.mean(axis=1)
    var = K.var(axis=1)
    if np.any(np.abs(mean) > STANDARDIZED_MEAN_TOL):
        j = int(np.argmax(np.abs(mean)))
        raise NotStandardized(f"{name} row {j} has mean {mean[j]:.3g}")
    if np.any(np.abs(var - 1.0) > STANDARDIZED_VAR_TOL):
        j = int(np.argmax(np.abs(var - 1.0)))
        raise NotStandardized(f"{name} row {j} has variance {var[j]:.9g}")


def cross_correlation(K, K2) -> np.ndarray:
    K, K2 = _pair(K, K2)
    return (K @ K2.T) / K.shape[1]


def barlow_twins(K, K2, lambda_bt: float = 5e-3, check: bool = True) -> float:
    """Barlow Twins on rows standardized to zero mean, unit (1/N) variance.

    ``C = K K'^T / N``; loss is ``sum_j (1 - C_jj)^2 + lambda_bt * offdiag(C)``.
    """
    K, K2 = _pair(K, K2)
    _need_samples(K)
    if check:
        _check_standardized(K, "K")
        _check_standardized(K2, "K'")
    C = cross_correlation(K, K2)
    d = np.diag(C)
    return float(np.sum((1.0 - d) ** 2) + lambda_bt * offdiag_sq_frobenius(C))


def tcr(K, alpha: float = 1.0, check: bool = True) -> float:
    """Total coding rate ``-1/2 log det(I + alpha K K^T)`` for unit-norm columns."""
    K = as_embedding(K)
    if not (np.isfinite(alpha) and alpha > 0):
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if check:
        _check_unit_columns(K)
    A = K.T @ K if K.shape[1] < K.shape[0] else K @ K.T
    ev = np.clip(np.linalg.eigvalsh(0.5 * (A + A.T)), 0.0, None)
    return float(-0.5 * np.sum(np.log1p(alpha * ev)))


# -- dispatch by loss id --------------------------------------------------------

_TAU_LOSSES = {"vicreg-exp", "vicreg-ctr", "simclr", "simclr-abs", "simclr-sq", "dcl", "dcl-abs", "dcl-sq"}
_INFONCE = {
    "simclr": (simclr_infonce, "identity"),
    "simclr-abs": (simclr_infonce, "absolute"),
    "simclr-sq": (simclr_infonce, "square"),
    "dcl": (dcl, "identity"),
    "dcl-abs": (dcl, "absolute"),
    "dcl-sq": (dcl, "square"),
}


INFONCE_IDS = frozenset(_INFONCE)

@dataclass(frozen=True)
class LossSpec:
    """A loss id together with every parameter any criterion might need."""

    loss_id: str
    weights: VicregWeights = VicregWeights()
    tau: float = 0.1
    lambda_bt: float = 5e-3
    alpha: float = 1.0
    negatives: Negatives = "single"

    def __post_init__(self):
        if self.loss_id not in LOSS_IDS:
            raise UnknownLoss(f"unknown loss id {self.loss_id!r}; known: {', '.join(LOSS_IDS)}")
        _check_tau(self.tau)
        if self.negatives not in ("single", "two-branch"):
            raise ValueError(f"unknown negatives mode {self.negatives!r}")

    @property
    def uses_tau(self) -> bool:
        return self.loss_id in _TAU_LOSSES

    @property
    def two_branch(self) -> bool:
        return self.loss_id != "tcr"

    @property
    def input_constraint(self) -> str | None:
        """Normalization the criterion's inputs must satisfy, if any."""
        if self.loss_id in _INFONCE or self.loss_id == "tcr":
            return "unit-columns"
        if self.loss_id == "barlow-twins":
            return "standardized-rows"
        return None


def evaluate(spec: LossSpec, K, K2=None, check: bool = True) -> LossValue:
    """Evaluate the criterion named by ``spec``.

    ``K2`` is ignored for single-branch criteria (``tcr``).
    """
    lid = spec.loss_id
    if lid == "vicreg":
        return vicreg(K, K2, spec.weights)
    if lid == "vicreg-exp":
        return vicreg_exp(K, K2, spec.weights, spec.tau)
    if lid == "vicreg-ctr":
        return vicreg_ctr(K, K2, spec.weights, spec.tau)
    if lid == "vicreg-ctr-rewrite":
        return vicreg_contrastive_rewrite(K, K2, spec.weights)
    if lid in _INFONCE:
        fn, f = _INFONCE[lid]
        value = fn(K, K2, spec.tau, f, spec.negatives, check=check)
        attract = -float(np.sum(transform_similarity(np.einsum("ji,ji->i", *_pair(K, K2)), f))) / spec.tau
        return LossValue(value, {"invariance": attract, "repulsive": value - attract},
                         {"invariance": 1.0, "repulsive": 1.0})
    if lid == "scl":
        K, K2 = _pair(K, K2)
        attract = -2.0 * float(np.einsum("ji,ji->", K, K2))
        rep = l_c(K)
        return LossValue(attract + rep, {"invariance": attract, "repulsive": rep},
                         {"invariance": 1.0, "repulsive": 1.0})
    if lid == "barlow-twins":
        value = barlow_twins(K, K2, spec.lambda_bt, check=check)
        C = cross_correlation(K, K2)
        on = float(np.sum((1.0 - np.diag(C)) ** 2))
        off = offdiag_sq_frobenius(C)
        return LossValue(value, {"invariance": on, "covariance": off},
                         {"invariance": 1.0, "covariance": spec.lambda_bt})
    if lid == "tcr":
        value = tcr(K, spec.alpha, check=check)
        return LossValue(value, {"coding_rate": value}, {"coding_rate": 1.0})
    raise AssertionError(lid)
