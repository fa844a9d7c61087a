"""Numerical checks of the Gram/covariance duality, the norm bounds, and
dot-product statistics of uniform samples on the sphere.

Each check returns a :class:`VerificationReport`; ``passed`` is true iff the
measured residual is within tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np

from .criteria import l_c, l_nc
from .errors import NotDoublyNormalized, NotNormalized
from .matrix import as_embedding, col_norm_pow4_sum, row_norm_pow4_sum

Mode = Literal["columns-normalized", "rows-normalized"]

KS_C_001 = 1.628  # asymptotic Kolmogorov critical constant at alpha = 0.01
SPHERE_CHUNK = 8192


@dataclass
class VerificationReport:
    check: str
    M: int
    N: int
    residual: float
    tolerance: float
    passed: bool
    generator: str = ""
    seed: int | None = None
    detail: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "check": self.check,
            "generator": self.generator,
            "seed": "" if self.seed is None else self.seed,
            "M": self.M,
            "N": self.N,
            "residual": repr(float(self.residual)),
            "tolerance": repr(float(self.tolerance)),
            "pass": int(self.passed),
            "detail": ";".join(f"{k}={v}" for k, v in self.detail.items()),
        }


REPORT_FIELDS = ["check", "generator", "seed", "M", "N", "residual", "tolerance", "pass", "detail"]


# -- duality identity ---------------------------------------------------------------


def verify_identity(K, tol: float = 1e-10, generator: str = "", seed: int | None = None) -> VerificationReport:
    """``l_nc + sum rows^4`` against ``l_c + sum cols^4``."""
    K = as_embedding(K)
    lhs = l_nc(K) + row_norm_pow4_sum(K)
    rhs = l_c(K) + col_norm_pow4_sum(K)
    residual = abs(lhs - rhs) / max(1.0, abs(rhs))
    return VerificationReport(
        "identity", *K.shape, residual, tol, residual <= tol, generator, seed,
        {"lhs": repr(lhs), "rhs": repr(rhs)},
    )


def _common_norm(norms: np.ndarray, tol: float) -> float | None:
    a = float(norms.mean())
    if a <= 0 or np.max(np.abs(norms - a)) > tol * max(1.0, a):
        return None
    return a


def verify_doubly_normalized(K, generator: str = "", seed: int | None = None) -> VerificationReport:
    """With unit rows and unit columns, ``l_nc = l_c + N - M``.

    Raises:
        NotDoublyNormalized: unless every row and column norm is 1 within 1e-9.
    """
    K = as_embedding(K)
    M, N = K.shape
    cols = np.linalg.norm(K, axis=0)
    rows = np.linalg.norm(K, axis=1)
    if np.max(np.abs(cols - 1.0)) > 1e-9 or np.max(np.abs(rows - 1.0)) > 1e-9:
        raise NotDoublyNormalized("rows and columns must all have unit norm (this forces M == N)")
    lc, lnc = l_c(K), l_nc(K)
    residual = abs(lnc - (lc + N - M))
    tol = 1e-9 * max(1.0, lc)
    return VerificationReport(
        "doubly-normalized", M, N, residual, tol, residual <= tol, generator, seed,
        {"l_c": repr(lc), "l_nc": repr(lnc)},
    )


def norm_bounds(M: int, N: int, mode: Mode, a: float = 1.0) -> tuple[float, float]:
    """Lower/upper bound on the opposite-axis fourth-power norm sum."""
    if mode == "columns-normalized":
        return N * N / M * a**4, N * N * a**4
    if mode == "rows-normalized":
        return M * M / N * a**4, M * M * a**4
    raise ValueError(f"unknown mode {mode!r}")


def _normalized_axis(K: np.ndarray, mode: Mode, tol: float = 1e-9) -> float:
    if mode == "columns-normalized":
        norms = np.linalg.norm(K, axis=0)
    elif mode == "rows-normalized":
        norms = np.linalg.norm(K, axis=1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a = _common_norm(norms, tol)
    if a is None:
        raise NotNormalized(f"{mode}: norms range over [{norms.min():.6g}, {norms.max():.6g}]")
    return a


def _measured(K: np.ndarray, mode: Mode) -> float:
    return row_norm_pow4_sum(K) if mode == "columns-normalized" else col_norm_pow4_sum(K)


@dataclass
class NormInterplayRow:
    mode: str
    M: int
    N: int
    lower: float
    measured: float
    upper: float

    @property
    def ratio_to_lower(self) -> float:
        return self.measured / self.lower


def norm_interplay_report(K, mode: Mode) -> NormInterplayRow:
    """Lower bound, measured fourth-power sum, upper bound for a normalized ``K``."""
    K = as_embedding(K)
    a = _normalized_axis(K, mode)
    lo, hi = norm_bounds(*K.shape, mode, a)
    return NormInterplayRow(mode, *K.shape, lo, _measured(K, mode), hi)


def verify_norm_bounds(K, mode: Mode, rtol: float = 1e-12, generator: str = "", seed: int | None = None):
    """Check the opposite-axis fourth-power sum lies within its bounds.

    ``residual`` is the relative violation (0 when inside); ``detail``
    records where in the interval the measurement sits.
    """
    row = norm_interplay_report(K, mode)
    violation = max(row.lower - row.measured, row.measured - row.upper, 0.0) / row.upper
    span = row.upper - row.lower
    position = (row.measured - row.lower) / span if span > 0 else 0.0
    return VerificationReport(
        f"norm-bounds[{mode}]", row.M, row.N, violation, rtol, violation <= rtol, generator, seed,
        {"lower": repr(row.lower), "measured": repr(row.measured), "upper": repr(row.upper),
         "position": f"{position:.6g}"},
    )


def corollary_bounds(K, mode: Mode) -> tuple[float, float, float]:
    """``(lower, value, upper)`` for the criterion bounds under unit norms.

    Columns mode bounds ``l_c`` in terms of ``l_nc``; rows mode the reverse.
    """
    K = as_embedding(K)
    a = _normalized_axis(K, mode)
    if abs(a - 1.0) > 1e-9:
        raise NotNormalized(f"{mode}: common norm is {a:.12g}, expected 1")
    M, N = K.shape
    lc, lnc = l_c(K), l_nc(K)
    if mode == "columns-normalized":
        return lnc - N + N * N / M, lc, lnc - N + N * N
    return lc - M + M * M / N, lnc, lc - M + M * M


def verify_corollary_bounds(K, mode: Mode, rtol: float = 1e-10, generator: str = "", seed: int | None = None):
    lo, val, hi = corollary_bounds(K, mode)
    scale = max(1.0, abs(lo), abs(hi), abs(val))
    violation = max(lo - val, val - hi, 0.0) / scale
    K = np.asarray(K)
    return VerificationReport(
        f"corollary-bounds[{mode}]", *K.shape, violation, rtol, violation <= rtol, generator, seed,
        {"lower": repr(lo), "value": repr(val), "upper": repr(hi)},
    )


# -- uniform sphere statistics ------------------------------------------------------------


@dataclass
class SphereSampleSet:
    M: int
    n: int
    seed: int
    samples: np.ndarray  # (n, M), one unit vector per row


def sample_uniform_sphere(M: int, n: int, seed: int, chunk: int = SPHERE_CHUNK) -> SphereSampleSet:
    """``n`` i.i.d. uniform unit vectors in ``R^M`` (normalized Gaussians).

    Chunks draw from independent child seeds of ``seed`` and are stitched
    in order, so results do not depend on how chunks are scheduled.
    """
    if M < 2:
        raise ValueError("sphere sampling needs M >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    n_chunks = -(-n // chunk)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    parts = []
    for c, ss in enumerate(children):
        size = min(chunk, n - c * chunk)
        X = np.random.default_rng(ss).standard_normal((size, M))
        parts.append(X / np.linalg.norm(X, axis=1, keepdims=True))
    return SphereSampleSet(M, n, seed, np.concatenate(parts, axis=0))


def _betacf(a: float, b: float, x: np.ndarray, max_iter: int = 500, eps: float = 1e-16) -> np.ndarray:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < eps
        if done.all():
            break
    return h


def beta_cdf(x, a: float, b: float) -> np.ndarray:
    """Regularized incomplete beta ``I_x(a, b)``, vectorized over ``x``."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    out = np.empty_like(x)
    out[x <= 0.0] = 0.0
    out[x >= 1.0] = 1.0
    inner = (x > 0.0) & (x < 1.0)
    xi = x[inner]
    log_beta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    front = np.exp(a * np.log(xi) + b * np.log1p(-xi) - log_beta)
    direct = xi < (a + 1.0) / (a + b + 2.0)
    res = np.empty_like(xi)
    if direct.any():
        xd = xi[direct]
        res[direct] = front[direct] * _betacf(a, b, xd) / a
    if (~direct).any():
        xr = xi[~direct]
        res[~direct] = 1.0 - front[~direct] * _betacf(b, a, 1.0 - xr) / b
    out[inner] = res
    return out


def ks_statistic(samples: np.ndarray, cdf) -> float:
    """Two-sided Kolmogorov-Smirnov distance between samples and a CDF."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    F = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def dot_product_moments(M: int) -> tuple[float, float, float]:
    """Mean, variance and variance of the square of ``x^T y`` for uniform x, y."""
    var = 1.0 / M
    fourth = 3.0 / (M * (M + 2.0))
    return 0.0, var, fourth - var * var


@dataclass
class DotProductStats:
    M: int
    n_pairs: int
    mean: float
    variance: float
    ks_statistic: float
    se_mean: float
    se_variance: float
    ks_critical: float
    correlated: bool = False

    @property
    def mean_z(self) -> float:
        return abs(self.mean) / self.se_mean

    @property
    def variance_z(self) -> float:
        return abs(self.variance - 1.0 / self.M) / self.se_variance


def dot_products(S: SphereSampleSet, pairs: Literal["disjoint", "all"] = "disjoint") -> np.ndarray:
    X = S.samples
    if pairs == "disjoint":
        m = (S.n // 2) * 2
        return np.einsum("ij,ij->i", X[0:m:2], X[1:m:2])
    if pairs == "all":
        G = X @ X.T
        return G[np.triu_indices(S.n, k=1)]
    raise ValueError(f"unknown pairing {pairs!r}")


def dot_product_stats(S: SphereSampleSet, pairs: Literal["disjoint", "all"] = "disjoint") -> DotProductStats:
    """Moments of negative-pair dot products and their KS distance to the
    shifted Beta((M-1)/2, (M-1)/2) law.

    ``pairs="all"`` uses every pair; those are not independent, so the
    standard errors and KS critical value are optimistic.
    """
    if S.n < 2:
        raise ValueError("need at least 2 samples")
    d = dot_products(S, pairs)
    n = d.size
    _, var_th, var_sq = dot_product_moments(S.M)
    alpha = (S.M - 1) / 2.0
    ks = ks_statistic((d + 1.0) / 2.0, lambda u: beta_cdf(u, alpha, alpha))
    return DotProductStats(
        M=S.M,
        n_pairs=n,
        mean=float(d.mean()),
        variance=float(d.var(ddof=1)),
        ks_statistic=ks,
        se_mean=math.sqrt(var_th / n),
        se_variance=math.sqrt(var_sq / n),
        ks_critical=KS_C_001 / math.sqrt(n),
        correlated=pairs == "all",
    )


def verify_sphere_statistics(M: int, n_pairs: int, seed: int) -> list[VerificationReport]:
    S = sample_uniform_sphere(M, 2 * n_pairs, seed)
    st = dot_product_stats(S)
    common = dict(M=M, N=st.n_pairs, generator="uniform-sphere", seed=seed)
    return [
        VerificationReport("sphere-mean", residual=st.mean_z, tolerance=3.0, passed=st.mean_z <= 3.0,
                           detail={"mean": repr(st.mean)}, **common),
        VerificationReport("sphere-variance", residual=st.variance_z, tolerance=5.0, passed=st.variance_z <= 5.0,
                           detail={"variance": repr(st.variance), "expected": repr(1.0 / M)}, **common),
        VerificationReport("sphere-beta-ks", residual=st.ks_statistic, tolerance=st.ks_critical,
                           passed=st.ks_statistic <= st.ks_critical, **common),
    ]


# -- matrix generators ----------------------------------------------------------------


def gen_gaussian(rng, M, N):
    return rng.standard_normal((M, N))


def gen_uniform(rng, M, N):
    return rng.uniform(-1.0, 1.0, (M, N))


def gen_sparse(rng, M, N, density: float = 0.1):
    K = rng.standard_normal((M, N)) * (rng.random((M, N)) < density)
    K[rng.integers(M), rng.integers(N)] = 1.0  # never all-zero
    return K


def gen_rank_deficient(rng, M, N):
    r = int(rng.integers(1, max(1, min(M, N) // 2) + 1))
    return rng.standard_normal((M, r)) @ rng.standard_normal((r, N))


GENERATORS = {
    "gaussian": gen_gaussian,
    "uniform": gen_uniform,
    "sparse": gen_sparse,
    "rank-deficient": gen_rank_deficient,
}


def sign_matrix(rng, n):
    return rng.choice([-1.0, 1.0], size=(n, n)) / math.sqrt(n)


def orthogonal_matrix(rng, n):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def column_normalized(rng, M, N):
    K = rng.standard_normal((M, N))
    return K / np.linalg.norm(K, axis=0, keepdims=True)


def row_normalized(rng, M, N):
    K = rng.standard_normal((M, N))
    return K / np.linalg.norm(K, axis=1, keepdims=True)


def constant_matrix(M, N, mode: Mode):
    """Attains the lower bound: every entry equal, axis norms 1."""
    v = 1.0 / math.sqrt(M if mode == "columns-normalized" else N)
    return np.full((M, N), v)


def one_hot_matrix(M, N, mode: Mode):
    """Attains the upper bound: one non-zero per column (or row), all in one line."""
    K = np.zeros((M, N))
    if mode == "columns-normalized":
        K[0, :] = 1.0
    else:
        K[:, 0] = 1.0
    return K


# -- sweep ----------------------------------------------------------------------------------


def iter_sweep(
    seed: int = 0,
    n_identity: int = 1000,
    n_doubly: int = 100,
    n_bounds: int = 1000,
    sphere_dims=(2, 3, 16, 128),
    n_pairs: int = 100_000,
    max_dim: int = 128,
    inject_unnormalized: bool = False,
) -> Iterator[VerificationReport]:
    """Seeded sweep over every check.

    Precondition errors become failed reports rather than exceptions.
    """
    ss = np.random.SeedSequence(seed)
    s_id, s_dn, s_bd, s_sp = ss.spawn(4)

    rng = np.random.default_rng(s_id)
    names = list(GENERATORS)
    for k in range(n_identity):
        name = names[k % len(names)]
        M, N = (int(v) for v in rng.integers(2, max_dim + 1, size=2))
        yield verify_identity(GENERATORS[name](rng, M, N), generator=name, seed=seed)

    rng = np.random.default_rng(s_dn)
    for k in range(n_doubly):
        n = int(rng.integers(2, 65))
        name = "sign" if k % 2 == 0 else "orthogonal"
        K = sign_matrix(rng, n) if name == "sign" else orthogonal_matrix(rng, n)
        yield verify_doubly_normalized(K, generator=name, seed=seed)

    rng = np.random.default_rng(s_bd)
    for mode, gen in (("columns-normalized", column_normalized), ("rows-normalized", row_normalized)):
        for _ in range(n_bounds):
            M, N = (int(v) for v in rng.integers(2, max_dim + 1, size=2))
            K = gen(rng, M, N)
            yield verify_norm_bounds(K, mode, generator=gen.__name__, seed=seed)
            yield verify_corollary_bounds(K, mode, generator=gen.__name__, seed=seed)
        for M, N in ((4, 7), (16, 3), (8, 8)):
            for name, make in (("constant", constant_matrix), ("one-hot", one_hot_matrix)):
                K = make(M, N, mode)
                row = norm_interplay_report(K, mode)
                target = row.lower if name == "constant" else row.upper
                res = abs(row.measured - target) / target
                yield VerificationReport(f"bound-equality[{mode}]", M, N, res, 1e-12, res <= 1e-12, name, None,
                                         {"measured": repr(row.measured), "target": repr(target)})

    if inject_unnormalized:
        K = np.random.default_rng(s_bd).standard_normal((8, 16)) * 3.0
        try:
            yield verify_norm_bounds(K, "columns-normalized", generator="unnormalized", seed=seed)
        except NotNormalized as exc:
            yield VerificationReport("norm-bounds[columns-normalized]", 8, 16, float("inf"), 0.0, False,
                                     "unnormalized", seed, {"error": f"NotNormalized: {exc}"})

    sphere_seeds = s_sp.generate_state(len(sphere_dims))
    for M, child in zip(sphere_dims, sphere_seeds):
        yield from verify_sphere_statistics(M, n_pairs, int(child))
