"""Embedding-matrix primitives.

An embedding matrix ``K`` has shape ``(M, N)``: rows are embedding
dimensions and columns are the embeddings of the ``N`` samples in a batch.
Everything here is a pure function of dense float64 arrays.
"""

from __future__ import annotations

import csv
import io
import os
from typing import Iterable

import numpy as np

from .errors import InvalidMatrix, MatrixParseError

__all__ = [
    "as_embedding",
    "as_square",
    "gram",
    "covariance_raw",
    "covariance_sample",
    "extract_diag",
    "offdiag_sq_frobenius",
    "col_norm_pow4_sum",
    "row_norm_pow4_sum",
    "center_rows",
    "write_csv",
    "read_csv",
    "format_matrix_csv",
    "parse_matrix_csv",
]


def as_embedding(K, name: str = "K") -> np.ndarray:
    """Validate and convert ``K`` to a finite float64 matrix of shape (M, N)."""
    arr = np.asarray(K, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidMatrix(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidMatrix(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidMatrix(f"{name} has non-finite entries")
    return arr


def as_square(A, name: str = "A") -> np.ndarray:
    arr = as_embedding(A, name)
    if arr.shape[0] != arr.shape[1]:
        raise InvalidMatrix(f"{name} must be square, got shape {arr.shape}")
    return arr


def gram(K) -> np.ndarray:
    """Pairwise sample similarities ``K^T K`` (N x N)."""
    K = as_embedding(K)
    G = K.T @ K
    return 0.5 * (G + G.T)


def covariance_raw(K) -> np.ndarray:
    """Uncentered, unscaled dimension matrix ``K K^T`` (M x M)."""
    K = as_embedding(K)
    C = K @ K.T
    return 0.5 * (C + C.T)


def center_rows(K: np.ndarray) -> np.ndarray:
    return K - K.mean(axis=1, keepdims=True)


def covariance_sample(K) -> np.ndarray:
    """Unbiased sample covariance of the dimensions.

    Rows are centered, then ``K K^T / (N - 1)``.

    Raises:
        InvalidMatrix: if ``N < 2``.
    """
    K = as_embedding(K)
    n = K.shape[1]
    if n < 2:
        raise InvalidMatrix("sample covariance needs at least 2 columns")
    Kc = center_rows(K)
    C = (Kc @ Kc.T) / (n - 1)
    return 0.5 * (C + C.T)


def extract_diag(A) -> np.ndarray:
    A = as_square(A)
    return np.diag(np.diag(A))


def offdiag_sq_frobenius(A) -> float:
    """Sum of squares of the off-diagonal entries of a square matrix."""
    A = as_square(A)
    sq = A * A
    return float(sq.sum() - np.trace(sq))


def col_norm_pow4_sum(K) -> float:
    """Sum over columns of ``||K[:, i]||^4``."""
    K = as_embedding(K)
    sq = np.einsum("ji,ji->i", K, K)
    return float(np.dot(sq, sq))


def row_norm_pow4_sum(K) -> float:
    """Sum over rows of ``||K[j, :]||^4``."""
    K = as_embedding(K)
    sq = np.einsum("ji,ji->j", K, K)
    return float(np.dot(sq, sq))


# CSV I/O. repr() of a Python float is the shortest string that round-trips.


def format_matrix_csv(A: np.ndarray, header: Iterable[str] | None = None) -> str:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header is not None:
        writer.writerow(list(header))
    for row in A:
        writer.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def parse_matrix_csv(text: str, has_header: bool = False) -> np.ndarray:
    """Parse a dense numeric CSV; errors carry the 1-based row number."""
    rows: list[list[float]] = []
    width = None
    reader = csv.reader(io.StringIO(text))
    for lineno, record in enumerate(reader, start=1):
        if has_header and lineno == 1:
            continue
        if not record or all(not cell.strip() for cell in record):
            continue
        try:
            values = [float(cell) for cell in record]
        except ValueError as exc:
            raise MatrixParseError(f"non-numeric entry ({exc})", lineno) from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise MatrixParseError(f"expected {width} columns, found {len(values)}", lineno)
        if not all(np.isfinite(values)):
            raise MatrixParseError("non-finite entry", lineno)
        rows.append(values)
    if not rows:
        raise MatrixParseError("no data rows", 1)
    return np.array(rows, dtype=np.float64)


def write_csv(path: str | os.PathLike, A: np.ndarray, header: Iterable[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_matrix_csv(A, header))


def read_csv(path: str | os.PathLike, has_header: bool = False) -> np.ndarray:
    with open(path, newline="") as fh:
        return parse_matrix_csv(fh.read(), has_header=has_header)
