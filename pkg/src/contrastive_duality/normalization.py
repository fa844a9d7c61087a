"""Centering and norm constraints applied to an embedding matrix before a loss.

Named schemes (used by the CLI and training configs):

=====================  ==========  ==============  ================
scheme                 centering   embedding norm  dimension norm
=====================  ==========  ==============  ================
``none``               no          -               -
``classical``          no          1               -
``centered-classical`` yes         1               -
``dim-standardize``    yes         -               sqrt(N/M)
``vicreg-center``      yes         -               -
``bt-standardize``     yes         -               sqrt(N)
=====================  ==========  ==============  ================

``vicreg-center`` leaves the dimension scale free; the variance term of
the loss is what keeps it near ``sqrt(N)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroNormColumn, ZeroNormRow
from .matrix import as_embedding

EPS = 1e-12

__all__ = [
    "EPS",
    "NormalizationStrategy",
    "SCHEMES",
    "scheme",
    "center_dimensions",
    "l2_normalize_embeddings",
    "standardize_dimensions",
    "apply",
    "apply_with_backward",
]


@dataclass(frozen=True)
class NormalizationStrategy:
    """Declarative normalization.

    ``dimension_norm_target`` may be the string ``"sqrt(N/M)"`` or
    ``"sqrt(N)"``, resolved against the matrix shape when applied.
    """

    center_dimensions: bool = False
    embedding_norm_target: float | None = None
    dimension_norm_target: float | str | None = None

    def __post_init__(self):
        if self.embedding_norm_target is not None and self.dimension_norm_target is not None:
            raise ValueError("set at most one of embedding_norm_target / dimension_norm_target")
        if self.embedding_norm_target is not None and not self.embedding_norm_target > 0:
            raise ValueError("embedding_norm_target must be > 0")
        d = self.dimension_norm_target
        if isinstance(d, str):
            if d not in ("sqrt(N/M)", "sqrt(N)"):
                raise ValueError(f"unknown symbolic dimension norm {d!r}")
        elif d is not None and not d > 0:
            raise ValueError("dimension_norm_target must be > 0")

    def dimension_target(self, M: int, N: int) -> float | None:
        d = self.dimension_norm_target
        if d == "sqrt(N/M)":
            return float(np.sqrt(N / M))
        if d == "sqrt(N)":
            return float(np.sqrt(N))
        return d


SCHEMES: dict[str, NormalizationStrategy] = {
    "none": NormalizationStrategy(),
    "classical": NormalizationStrategy(embedding_norm_target=1.0),
    "centered-classical": NormalizationStrategy(center_dimensions=True, embedding_norm_target=1.0),
    "dim-standardize": NormalizationStrategy(center_dimensions=True, dimension_norm_target="sqrt(N/M)"),
    "vicreg-center": NormalizationStrategy(center_dimensions=True),
    # rows with zero mean and unit 1/N variance, as Barlow Twins expects
    "bt-standardize": NormalizationStrategy(center_dimensions=True, dimension_norm_target="sqrt(N)"),
}


def scheme(name: str) -> NormalizationStrategy:
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown normalization scheme {name!r}; choose from {sorted(SCHEMES)}") from None


def center_dimensions(K) -> np.ndarray:
    """Subtract each row's mean."""
    K = as_embedding(K)
    return K - K.mean(axis=1, keepdims=True)


def _safe_inverse(norms: np.ndarray, bad: np.ndarray) -> np.ndarray:
    inv = np.zeros_like(norms)
    ok = ~bad
    inv[ok] = 1.0 / norms[ok]
    return inv


def _scale_columns(K: np.ndarray, target: float, zero: str = "raise") -> tuple[np.ndarray, np.ndarray]:
    """Returns the scaled matrix and the inverse column norms (0 for kept zero columns)."""
    norms = np.linalg.norm(K, axis=0)
    bad = norms <= EPS
    if bad.any() and zero == "raise":
        j = int(np.flatnonzero(bad)[0])
        raise ZeroNormColumn(f"column {j} has norm {norms[j]:.3g}")
    inv = _safe_inverse(norms, bad)
    return K * (target * inv), inv


def _scale_rows(K: np.ndarray, target: float, zero: str = "raise") -> tuple[np.ndarray, np.ndarray]:
    """Returns the scaled matrix and the inverse row norms (0 for kept zero rows)."""
    norms = np.linalg.norm(K, axis=1)
    bad = norms <= EPS
    if bad.any() and zero == "raise":
        j = int(np.flatnonzero(bad)[0])
        raise ZeroNormRow(f"row {j} has norm {norms[j]:.3g} after centering")
    inv = _safe_inverse(norms, bad)
    return K * (target * inv)[:, None], inv


def l2_normalize_embeddings(K) -> np.ndarray:
    """Scale every column to unit L2 norm.

    Raises:
        ZeroNormColumn: if a column norm is at most ``EPS``.
    """
    return _scale_columns(as_embedding(K), 1.0)[0]


def standardize_dimensions(K) -> np.ndarray:
    """Center each row, then rescale it to norm ``sqrt(N/M)``.

    The whole matrix then has Frobenius norm ``sqrt(N)``.
    """
    K = center_dimensions(K)
    M, N = K.shape
    return _scale_rows(K, np.sqrt(N / M))[0]


def apply(strategy: NormalizationStrategy | str, K) -> np.ndarray:
    return apply_with_backward(strategy, K)[0]


def apply_with_backward(strategy: NormalizationStrategy | str, K, zero: str = "raise"):
    """Apply ``strategy`` and return ``(out, backward)``.

    ``backward(grad_out)`` maps a gradient with respect to the output to a
    gradient with respect to ``K`` (vector-Jacobian product).

    With ``zero="keep"`` a column (or row) whose norm is at most ``EPS``
    stays zero and gets zero gradient instead of raising. The trainer
    uses this for samples whose hidden units are all inactive; their
    upstream gradient is zero regardless.
    """
    if zero not in ("raise", "keep"):
        raise ValueError(f"zero must be 'raise' or 'keep', got {zero!r}")
    if isinstance(strategy, str):
        strategy = scheme(strategy)
    K = as_embedding(K)
    M, N = K.shape
    X = K - K.mean(axis=1, keepdims=True) if strategy.center_dimensions else K

    if strategy.embedding_norm_target is not None:
        a = float(strategy.embedding_norm_target)
        Y, inv = _scale_columns(X, a, zero)
        U = Y / a

        def back_norm(g):
            # d(a x/|x|) = (a/|x|) (I - u u^T) dx, per column
            return (a * inv) * (g - U * np.einsum("ji,ji->i", U, g))

    elif strategy.dimension_target(M, N) is not None:
        a = strategy.dimension_target(M, N)
        Y, inv = _scale_rows(X, a, zero)
        U = Y / a

        def back_norm(g):
            return (a * inv)[:, None] * (g - U * np.einsum("ji,ji->j", U, g)[:, None])

    else:
        Y = X

        def back_norm(g):
            return g

    def backward(grad_out):
        g = back_norm(np.asarray(grad_out, dtype=np.float64))
        if strategy.center_dimensions:
            g = g - g.mean(axis=1, keepdims=True)
        return g

    return Y, backward
