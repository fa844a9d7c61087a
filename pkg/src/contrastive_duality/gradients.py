"""Hand-derived gradients for every criterion, plus a finite-difference oracle.

``value_and_grad`` is what the trainer calls; ``grad_check`` compares it
against central differences of the plain criterion functions in
:mod:`contrastive_duality.criteria`. Only value helpers (log-sum-exp,
norm sums) are shared; every derivative below is written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import criteria as cr
from . import normalization
from .criteria import LossSpec, LossValue, VARIANCE_EPS, masked_logsumexp
from .criteria import transform_similarity as _f
from .criteria import transform_similarity_deriv as _df
from .errors import ShapeMismatch, UnknownLoss
from .matrix import as_embedding

__all__ = [
    "GradPair",
    "GradCheckReport",
    "value_and_grad",
    "analytic_grad",
    "finite_diff_grad",
    "grad_check",
    "random_inputs",
    "spec_for",
    "gradient_suite",
    "grad_l_c",
    "grad_l_nc",
    "grad_l_reg",
]


@dataclass
class GradPair:
    dK: np.ndarray
    dK2: np.ndarray | None = None


@dataclass
class GradCheckReport:
    loss_id: str
    max_rel_err: float
    max_abs_err: float
    h: float
    tol: float
    passed: bool
    seed: int | None = None
    tau: float | None = None
    negatives: str | None = None

    def row(self) -> dict:
        return {
            "loss_id": self.loss_id,
            "seed": "" if self.seed is None else self.seed,
            "tau": "" if self.tau is None else repr(self.tau),
            "negatives": self.negatives or "",
            "max_rel_err": repr(float(self.max_rel_err)),
            "pass": int(self.passed),
        }


GRADCHECK_FIELDS = ["loss_id", "seed", "tau", "negatives", "max_rel_err", "pass"]
SUITE_TAUS = (0.05, 0.15, 1.0)


# -- building-block gradients ----------------------------------------------------


def _offdiag(A: np.ndarray) -> np.ndarray:
    return A - np.diag(np.diag(A))


def grad_l_c(K):
    G = K.T @ K
    return 4.0 * K @ _offdiag(G)


def grad_l_nc(K):
    C = K @ K.T
    return 4.0 * _offdiag(C) @ K


def grad_l_reg(K):
    col_sq = np.einsum("ji,ji->i", K, K)
    row_sq = np.einsum("ji,ji->j", K, K)
    return 4.0 * K * col_sq[None, :] - 4.0 * row_sq[:, None] * K


def _center_back(g):
    return g - g.mean(axis=1, keepdims=True)


def _variance_hinge_vg(K):
    M, N = K.shape
    Kc = K - K.mean(axis=1, keepdims=True)
    var = np.einsum("ji,ji->j", Kc, Kc) / (N - 1)
    std = np.sqrt(var + VARIANCE_EPS)
    active = std < 1.0
    value = float(np.mean(np.where(active, 1.0 - std, 0.0)))
    coef = np.where(active, -1.0 / (M * std * (N - 1)), 0.0)
    return value, coef[:, None] * Kc


def _covariance_c_vg(K):
    N = K.shape[1]
    Kc = K - K.mean(axis=1, keepdims=True)
    C = Kc @ Kc.T / (N - 1)
    C = 0.5 * (C + C.T)
    Co = _offdiag(C)
    value = float(np.sum(Co * Co))
    return value, _center_back(4.0 * Co @ Kc / (N - 1))


def _c_exp_vg(K, tau):
    M, N = K.shape
    Kc = K - K.mean(axis=1, keepdims=True)
    C = Kc @ Kc.T / (N - 1)
    C = 0.5 * (C + C.T)
    lse, W = masked_logsumexp(C / tau, ~np.eye(M, dtype=bool))
    dC = W / (M * tau)
    return float(lse.mean()), _center_back((dC + dC.T) @ Kc / (N - 1))


def _rewrite_cov_vg(K):
    N = K.shape[1]
    s = 1.0 / np.sqrt(N - 1)
    Kh = (K - K.mean(axis=1, keepdims=True)) * s
    value = cr.l_c(Kh) + cr.l_reg(Kh)
    return value, _center_back((grad_l_c(Kh) + grad_l_reg(Kh)) * s)


def _mse_vg(K, K2):
    D = K - K2
    g = 2.0 * D / D.size
    return float(np.mean(D * D)), g


# -- full criteria ----------------------------------------------------------------


def _vicreg_family(spec: LossSpec, K, K2):
    w = spec.weights
    inv, g_inv = _mse_vg(K, K2)
    lid = spec.loss_id
    transpose = lid == "vicreg-ctr"

    def reg(X, fn):
        if transpose:
            v, g = fn(X.T)
            return v, g.T
        return fn(X)

    if lid in ("vicreg-exp", "vicreg-ctr"):
        cov_fn = lambda X: _c_exp_vg(X, spec.tau)  # noqa: E731
    elif lid == "vicreg-ctr-rewrite":
        cov_fn = _rewrite_cov_vg
    else:
        cov_fn = _covariance_c_vg

    v1, gv1 = reg(K, _variance_hinge_vg)
    v2, gv2 = reg(K2, _variance_hinge_vg)
    c1, gc1 = reg(K, cov_fn)
    c2, gc2 = reg(K2, cov_fn)
    var, cov = v1 + v2, c1 + c2
    value = w.lambda_inv * inv + w.mu_var * var + w.nu_cov * cov
    dK = w.lambda_inv * g_inv + w.mu_var * gv1 + w.nu_cov * gc1
    dK2 = -w.lambda_inv * g_inv + w.mu_var * gv2 + w.nu_cov * gc2
    lv = LossValue(
        float(value),
        {"invariance": inv, "variance": var, "covariance": cov},
        {"invariance": w.lambda_inv, "variance": w.mu_var, "covariance": w.nu_cov},
    )
    return lv, GradPair(dK, dK2)


_INFONCE = {
    "simclr": (True, "identity"),
    "simclr-abs": (True, "absolute"),
    "simclr-sq": (True, "square"),
    "dcl": (False, "identity"),
    "dcl-abs": (False, "absolute"),
    "dcl-sq": (False, "square"),
}


def _infonce(spec: LossSpec, K, K2):
    with_pos, f = _INFONCE[spec.loss_id]
    tau = spec.tau
    N = K.shape[1]
    off = ~np.eye(N, dtype=bool)
    p = np.einsum("ji,ji->i", K, K2)
    S = K.T @ K
    blocks = [_f(p, f)[:, None] / tau, _f(S, f) / tau]
    masks = [np.full((N, 1), with_pos), off]
    two = spec.negatives == "two-branch"
    if two:
        Q = K.T @ K2
        blocks.append(_f(Q, f) / tau)
        masks.append(off)
    L = np.concatenate(blocks, axis=1)
    mask = np.concatenate(masks, axis=1)
    lse, P = masked_logsumexp(L, mask)
    attract = -float(np.sum(L[:, 0]))
    value = float(np.sum(lse)) + attract

    dp = (P[:, 0] - 1.0) * _df(p, f) / tau
    dS = P[:, 1 : N + 1] * _df(S, f) / tau
    dK = K2 * dp[None, :] + K @ (dS + dS.T)
    dK2 = K * dp[None, :]
    if two:
        dQ = P[:, N + 1 :] * _df(Q, f) / tau
        dK = dK + K2 @ dQ.T
        dK2 = dK2 + K @ dQ
    lv = LossValue(value, {"invariance": attract, "repulsive": value - attract},
                   {"invariance": 1.0, "repulsive": 1.0})
    return lv, GradPair(dK, dK2)


def _scl(spec, K, K2):
    attract = -2.0 * float(np.einsum("ji,ji->", K, K2))
    G = K.T @ K
    Go = _offdiag(G)
    rep = float(np.sum(Go * Go))
    lv = LossValue(attract + rep, {"invariance": attract, "repulsive": rep},
                   {"invariance": 1.0, "repulsive": 1.0})
    return lv, GradPair(-2.0 * K2 + 4.0 * K @ Go, -2.0 * K)


def _barlow(spec, K, K2):
    N = K.shape[1]
    lam = spec.lambda_bt
    C = K @ K2.T / N
    d = np.diag(C)
    Co = _offdiag(C)
    on = float(np.sum((1.0 - d) ** 2))
    off = float(np.sum(Co * Co))
    D = 2.0 * lam * Co + np.diag(-2.0 * (1.0 - d))
    lv = LossValue(on + lam * off, {"invariance": on, "covariance": off},
                   {"invariance": 1.0, "covariance": lam})
    return lv, GradPair(D @ K2 / N, D.T @ K / N)


def _tcr(spec, K, K2):
    a = spec.alpha
    M, N = K.shape
    if N < M:
        A = np.eye(N) + a * (K.T @ K)
        X = K @ np.linalg.inv(A)
    else:
        A = np.eye(M) + a * (K @ K.T)
        X = np.linalg.solve(A, K)
    sign, logdet = np.linalg.slogdet(A)
    value = -0.5 * logdet
    return LossValue(value, {"coding_rate": value}, {"coding_rate": 1.0}), GradPair(-a * X, None)


def value_and_grad(spec: LossSpec, K, K2=None) -> tuple[LossValue, GradPair]:
    """Loss value (with breakdown) and its gradient for each branch.

    Preconditions on normalized inputs are not enforced here; the
    gradient is that of the bare formula.
    """
    K = as_embedding(K, "K")
    lid = spec.loss_id
    if lid == "tcr":
        return _tcr(spec, K, None)
    K2 = as_embedding(K2, "K'")
    if K.shape != K2.shape:
        raise ShapeMismatch(f"branch shapes differ: {K.shape} vs {K2.shape}")
    if lid.startswith("vicreg"):
        return _vicreg_family(spec, K, K2)
    if lid in _INFONCE:
        return _infonce(spec, K, K2)
    if lid == "scl":
        return _scl(spec, K, K2)
    if lid == "barlow-twins":
        return _barlow(spec, K, K2)
    raise UnknownLoss(lid)


def analytic_grad(spec: LossSpec | str, K, K2=None, **params) -> GradPair:
    if isinstance(spec, str):
        spec = spec_for(spec, **params)
    return value_and_grad(spec, K, K2)[1]


def spec_for(loss_id: str, **params) -> LossSpec:
    """Build a LossSpec; ``lambda_inv``/``mu_var``/``nu_cov`` go into the weights."""
    if loss_id not in cr.LOSS_IDS:
        raise UnknownLoss(f"unknown loss id {loss_id!r}")
    wkeys = {k: params.pop(k) for k in ("lambda_inv", "mu_var", "nu_cov") if k in params}
    if wkeys:
        params["weights"] = cr.VicregWeights(**{**cr.VicregWeights().__dict__, **wkeys})
    return LossSpec(loss_id, **params)


# -- finite differences -------------------------------------------------------------


def finite_diff_grad(loss_fn: Callable, K, K2=None, h: float = 1e-6) -> GradPair:
    """Central differences ``(L(x+h) - L(x-h)) / 2h`` for every entry.

    ``loss_fn(K, K2)`` must return a float. ``K2=None`` means a
    single-branch loss and only ``dK`` is computed.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    K = np.array(K, dtype=np.float64)
    K2 = None if K2 is None else np.array(K2, dtype=np.float64)

    def sweep(X, call):
        g = np.zeros_like(X)
        for idx in np.ndindex(X.shape):
            x0 = X[idx]
            X[idx] = x0 + h
            fp = call()
            X[idx] = x0 - h
            fm = call()
            X[idx] = x0
            g[idx] = (fp - fm) / (2.0 * h)
        return g

    call = lambda: float(loss_fn(K, K2))  # noqa: E731
    dK = sweep(K, call)
    dK2 = None if K2 is None else sweep(K2, call)
    return GradPair(dK, dK2)


def _oracle(spec: LossSpec, normalization_scheme: str | None = None):
    """Loss as a plain function of (K, K2), built from criteria only."""

    def fn(K, K2):
        if normalization_scheme is not None:
            K = normalization.apply(normalization_scheme, K)
            if K2 is not None:
                K2 = normalization.apply(normalization_scheme, K2)
        return cr.evaluate(spec, K, K2, check=False).value

    return fn


def random_inputs(spec: LossSpec, M: int = 6, N: int = 8, seed: int = 0):
    """Random inputs meeting the criterion's preconditions.

    Unconstrained criteria get Gaussian matrices rescaled to unit
    Frobenius norm; constrained ones get unit columns or standardized rows.
    """
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((M, N))
    K2 = K + 0.5 * rng.standard_normal((M, N))
    c = spec.input_constraint
    if c == "unit-columns":
        K, K2 = normalization.l2_normalize_embeddings(K), normalization.l2_normalize_embeddings(K2)
    elif c == "standardized-rows":
        K, K2 = normalization.apply("bt-standardize", K), normalization.apply("bt-standardize", K2)
    else:
        K, K2 = K / np.linalg.norm(K), K2 / np.linalg.norm(K2)
    return K, (K2 if spec.two_branch else None)


def grad_check(
    spec: LossSpec | str,
    K,
    K2=None,
    tol: float = 1e-5,
    h: float = 1e-6,
    normalization_scheme: str | None = None,
    grad_override: GradPair | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    The relative error is ``max|analytic - fd| / max(max|analytic|,
    max|fd|, 1e-8)`` taken over both branches, i.e. relative to the
    gradient's scale. With ``normalization_scheme`` the check covers
    ``loss(normalize(K), normalize(K2))`` including the normalization's
    backward pass. ``grad_override`` replaces the analytic gradient
    (used to check that the harness catches corrupted gradients).
    """
    if isinstance(spec, str):
        spec = spec_for(spec)
    K = as_embedding(K)
    if not spec.two_branch:
        K2 = None
    if grad_override is not None:
        ga = grad_override
    elif normalization_scheme is None:
        ga = value_and_grad(spec, K, K2)[1]
    else:
        Y, back = normalization.apply_with_backward(normalization_scheme, K)
        Y2, back2 = (None, None) if K2 is None else normalization.apply_with_backward(normalization_scheme, K2)
        g = value_and_grad(spec, Y, Y2)[1]
        ga = GradPair(back(g.dK), None if K2 is None else back2(g.dK2))
    gf = finite_diff_grad(_oracle(spec, normalization_scheme), K, K2, h)

    a = [ga.dK] + ([ga.dK2] if K2 is not None else [])
    f = [gf.dK] + ([gf.dK2] if K2 is not None else [])
    abs_err = max(float(np.max(np.abs(x - y))) for x, y in zip(a, f))
    scale = max(max(float(np.max(np.abs(x))) for x in a), max(float(np.max(np.abs(y))) for y in f), 1e-8)
    rel = abs_err / scale
    return GradCheckReport(
        loss_id=spec.loss_id,
        max_rel_err=rel,
        max_abs_err=abs_err,
        h=h,
        tol=tol,
        passed=bool(rel <= tol),
        tau=spec.tau if spec.uses_tau else None,
        negatives=spec.negatives if spec.loss_id in cr.INFONCE_IDS else None,
    )


def gradient_suite(
    loss_ids=cr.LOSS_IDS,
    seeds=range(10),
    taus=SUITE_TAUS,
    tol: float = 1e-5,
    h: float = 1e-6,
    M: int = 6,
    N: int = 8,
):
    """Yield a GradCheckReport per loss id, seed, applicable tau and negatives mode."""
    for lid in loss_ids:
        base = spec_for(lid)
        tau_grid = taus if base.uses_tau else (base.tau,)
        neg_grid = ("single", "two-branch") if lid in cr.INFONCE_IDS else ("single",)
        for tau in tau_grid:
            for neg in neg_grid:
                spec = spec_for(lid, tau=tau, negatives=neg)
                for seed in seeds:
                    K, K2 = random_inputs(spec, M, N, seed)
                    rep = grad_check(spec, K, K2, tol=tol, h=h)
                    rep.seed = seed
                    yield rep
