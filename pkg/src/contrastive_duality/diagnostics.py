"""Post-hoc diagnostics of embedding matrices: spectra, cosine-similarity
histograms, Gram/covariance panels and effective rank.

Outputs are plain arrays; the ``*_csv`` helpers format them for plotting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMatrix, ZeroNormColumn
from .matrix import as_embedding, covariance_sample, format_matrix_csv, gram
from .normalization import EPS


def singular_spectrum(K) -> np.ndarray:
    """Singular values of ``K`` in descending order (length ``min(M, N)``).

    Uses the eigenvalues of the smaller Gramian; round-off negatives are
    clamped to zero before the square root.
    """
    K = as_embedding(K)
    M, N = K.shape
    A = K @ K.T if M <= N else K.T @ K
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    return np.sqrt(np.clip(ev, 0.0, None))[::-1]


def effective_rank(K, threshold: float = 0.01) -> int:
    """Number of singular values at least ``threshold`` times the largest."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    s = singular_spectrum(K)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s >= threshold * s[0]))


@dataclass
class SimilarityHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    n_pairs: int


def cosine_similarities(K) -> np.ndarray:
    """Cosine similarity of every unordered pair of distinct columns."""
    K = as_embedding(K)
    norms = np.linalg.norm(K, axis=0)
    bad = np.flatnonzero(norms <= EPS)
    if bad.size:
        raise ZeroNormColumn(f"column {int(bad[0])} has zero norm")
    U = K / norms
    G = U.T @ U
    return G[np.triu_indices(K.shape[1], k=1)]


def cosine_similarity_histogram(K, bins: int = 50, range_: tuple[float, float] = (-1.0, 1.0)) -> SimilarityHistogram:
    sims = np.clip(cosine_similarities(K), *range_)
    counts, edges = np.histogram(sims, bins=bins, range=range_)
    return SimilarityHistogram(edges, counts, float(sims.mean()), float(sims.std()), int(sims.size))


@dataclass
class MatrixPanel:
    gram_head: np.ndarray
    covariance_head: np.ndarray
    gram_ratio: float
    covariance_ratio: float


def diagonal_dominance(A: np.ndarray) -> float:
    """Mean absolute off-diagonal entry over mean absolute diagonal entry."""
    n = A.shape[0]
    if n < 2:
        return 0.0
    diag = np.abs(np.diag(A))
    off = (np.abs(A).sum() - diag.sum()) / (n * (n - 1))
    d = diag.mean()
    return float(off / d) if d > 0 else float("inf")


def matrix_panel(K, k: int = 64) -> MatrixPanel:
    """Leading ``k x k`` blocks of the Gram matrix (first ``k`` samples) and
    of the sample covariance (first ``k`` dimensions)."""
    K = as_embedding(K)
    M, N = K.shape
    if not 1 <= k <= min(M, N):
        raise InvalidMatrix(f"panel size k={k} must be in [1, min(M, N) = {min(M, N)}]")
    G = gram(K[:, :k])
    C = covariance_sample(K)[:k, :k]
    return MatrixPanel(G, C, diagonal_dominance(G), diagonal_dominance(C))


def spectrum_csv(s: np.ndarray) -> str:
    lines = ["index,sigma"] + [f"{i},{float(v)!r}" for i, v in enumerate(s)]
    return "\n".join(lines) + "\n"


def histogram_csv(h: SimilarityHistogram) -> str:
    lines = ["bin_lo,bin_hi,count"]
    lines += [f"{float(lo)!r},{float(hi)!r},{int(c)}" for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts)]
    return "\n".join(lines) + "\n"


def panel_csv(A: np.ndarray) -> str:
    return format_matrix_csv(A)
