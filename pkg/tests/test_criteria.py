import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from contrastive_duality import criteria as cr
from contrastive_duality.errors import InvalidMatrix, NotNormalized, NotStandardized, ShapeMismatch, UnknownLoss
from contrastive_duality.normalization import apply

from .helpers import matrices

A = np.array([[1.0, 2.0], [3.0, 4.0]])
ONES = np.ones((2, 2))
E2 = np.eye(2)
W_INV = cr.VicregWeights(1.0, 0.0, 0.0)
W_COV = cr.VicregWeights(0.0, 0.0, 1.0)


def unit_columns(rng, M, N):
    return apply("classical", rng.standard_normal((M, N)))


def half_cov():
    # sample covariance off-diagonal entry is exactly 0.5
    return np.array([[1.0, -1.0], [0.25, -0.25]])


# -- l_c / l_nc / l_reg --------------------------------------------------------


@pytest.mark.parametrize(
    "fn, K, expected",
    [
        (cr.l_c, E2, 0.0),
        (cr.l_c, A, 392.0),
        (cr.l_c, ONES, 8.0),
        (cr.l_nc, E2, 0.0),
        (cr.l_nc, A, 242.0),
        (cr.l_nc, ONES, 8.0),
        (cr.l_reg, A, -150.0),
        (cr.l_reg, np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2), 0.0),
        (cr.l_reg, np.zeros((3, 4)), 0.0),
    ],
)
def test_contrastive_criteria_examples(fn, K, expected):
    assert fn(K) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(matrices(1, 10))
def test_transposition_duality(K):
    assert_allclose(cr.l_c(K), cr.l_nc(K.T), rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(matrices(1, 10))
def test_regularizer_links_the_two_criteria(K):
    scale = max(1.0, cr.l_c(K), cr.l_nc(K))
    assert abs(cr.l_nc(K) - cr.l_c(K) - cr.l_reg(K)) <= 1e-9 * scale


# -- VICReg building blocks ------------------------------------------------------


def test_invariance_examples():
    K = np.array([[1.0, 2.0], [3.0, 5.0]])
    assert cr.invariance_mse(K, K) == 0.0
    assert cr.invariance_mse(K + 1.0, K) == pytest.approx(1.0)
    assert cr.invariance_mse([[1.0, 0.0]], [[0.0, 0.0]]) == pytest.approx(0.5)


def test_invariance_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        cr.invariance_mse(np.ones((2, 3)), np.ones((3, 2)))


def test_variance_hinge_examples():
    unit = np.array([[0.0, np.sqrt(2.0)], [3.0, 3.0 - np.sqrt(2.0)]])
    assert cr.variance_hinge(unit) == 0.0
    assert cr.variance_hinge(np.full((3, 5), 2.0)) == pytest.approx(0.99, abs=1e-12)
    mixed = np.vstack([[1.0, 1.0 + np.sqrt(2.0)], [4.0, 4.0]])
    assert cr.variance_hinge(mixed) == pytest.approx(0.495, abs=1e-12)


def test_variance_hinge_rejects_single_sample():
    with pytest.raises(InvalidMatrix):
        cr.variance_hinge(np.ones((3, 1)))


def test_covariance_examples():
    assert cr.covariance_c(np.array([[1.0, -1.0], [1.0, -1.0]])) == pytest.approx(8.0)
    assert cr.covariance_c(np.full((3, 4), 7.0)) == 0.0
    H = np.array([[1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0]])
    assert cr.covariance_c(H) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InvalidMatrix):
        cr.covariance_c(np.ones((2, 1)))


def test_c_exp_examples():
    assert cr.c_exp(half_cov(), 0.1) == pytest.approx(5.0, rel=1e-12)
    zero = np.array([[1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0]])
    assert cr.c_exp(zero, 0.1) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("M", [2, 3, 8])
def test_c_exp_large_temperature_limit(rng, M):
    K = rng.standard_normal((M, 10))
    assert cr.c_exp(K, 1e9) == pytest.approx(math.log(M - 1), abs=1e-6)


def test_c_exp_rejects_single_row_and_bad_tau():
    with pytest.raises(InvalidMatrix):
        cr.c_exp(np.ones((1, 4)), 0.1)
    with pytest.raises(ValueError):
        cr.c_exp(np.ones((2, 4)), 0.0)


@settings(max_examples=40, deadline=None)
@given(matrices(2, 8), st.floats(0.01, 10.0))
def test_c_exp_log_sum_exp_bounds(K, tau):
    if K.shape[1] < 2:
        return
    from contrastive_duality.matrix import covariance_sample

    C = covariance_sample(K)
    M = C.shape[0]
    off = np.where(np.eye(M, dtype=bool), -np.inf, C)
    lo = np.mean(off.max(axis=1)) / tau
    value = cr.c_exp(K, tau)
    slack = 1e-9 * max(1.0, abs(lo))
    assert lo - slack <= value <= lo + math.log(M - 1) + slack


# -- VICReg variants ---------------------------------------------------------------


def test_vicreg_examples(rng):
    H = np.array([[1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0]]) * np.sqrt(4 / 3 * 1.01)
    assert cr.vicreg(H, H).value == pytest.approx(0.0, abs=1e-12)
    K, K2 = rng.standard_normal((2, 4, 6))
    assert cr.vicreg(K, K2, W_INV).value == cr.invariance_mse(K, K2)
    B = np.array([[1.0, -1.0], [1.0, -1.0]])
    assert cr.vicreg(B, B, W_COV).value == pytest.approx(16.0)


def test_vicreg_exp_examples(rng):
    K = rng.standard_normal((3, 5))
    assert cr.vicreg_exp(K, K, W_INV, 0.1).value == 0.0
    assert cr.vicreg_exp(half_cov(), half_cov(), W_COV, 0.1).value == pytest.approx(10.0, rel=1e-12)
    K2 = rng.standard_normal((3, 5))
    w = cr.VicregWeights(25.0, 25.0, 0.0)
    a, b = cr.vicreg_exp(K, K2, w, 0.3), cr.vicreg(K, K2, w)
    assert a.value == b.value
    assert a.breakdown["invariance"] == b.breakdown["invariance"]
    assert a.breakdown["variance"] == b.breakdown["variance"]


def test_vicreg_ctr_examples(rng):
    K, K2 = rng.standard_normal((2, 5, 6))
    ctr = cr.vicreg_ctr(K, K2, cr.VicregWeights(), 0.2)
    exp_t = cr.vicreg_exp(K.T, K2.T, cr.VicregWeights(), 0.2)
    assert ctr.breakdown["covariance"] == exp_t.breakdown["covariance"]
    assert cr.vicreg_ctr(K, K2, W_INV, 0.2).value == cr.vicreg(K, K2, W_INV).value
    # centered, mutually orthogonal embeddings: Gram off-diagonal is zero
    H = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    for tau in (0.05, 1.0):
        lv = cr.vicreg_ctr(H, H, W_COV, tau)
        assert lv.breakdown["covariance"] == pytest.approx(2 * math.log(H.shape[1] - 1), abs=1e-12)


def test_vicreg_ctr_needs_two_dims():
    with pytest.raises(InvalidMatrix):
        cr.vicreg_ctr(np.ones((1, 4)), np.ones((1, 4)), W_COV, 0.1)


def test_rewrite_examples():
    B = np.array([[1.0, -1.0], [1.0, -1.0]])
    assert cr.vicreg_contrastive_rewrite(B, B, W_COV).value == pytest.approx(cr.vicreg(B, B, W_COV).value, rel=1e-12)
    Z = np.zeros((3, 4))
    assert cr.vicreg_contrastive_rewrite(Z, Z).breakdown["covariance"] == 0.0


def test_rewrite_matches_covariance_on_random_matrices(rng):
    for _ in range(1000):
        M, N = rng.integers(2, 12, size=2)
        K = rng.standard_normal((M, N)) * rng.uniform(0.1, 10)
        assert_allclose(cr.contrastive_covariance_term(K), cr.covariance_c(K), rtol=1e-10, atol=1e-12)


# -- InfoNCE family ------------------------------------------------------------------


@pytest.mark.parametrize("f", ["identity", "absolute", "square"])
def test_infonce_orthonormal_examples(f):
    assert cr.simclr_infonce(E2, E2, 1.0, f) == pytest.approx(2 * (-1 + math.log(math.e + 1)), rel=1e-12)
    assert cr.dcl(E2, E2, 1.0, f) == pytest.approx(-2.0, rel=1e-12)


def test_simclr_example_value():
    assert cr.simclr_infonce(E2, E2, 1.0) == pytest.approx(0.62652, abs=1e-5)


@pytest.mark.parametrize("N", [2, 5, 9])
def test_simclr_large_temperature_limit(rng, N):
    K, K2 = unit_columns(rng, 4, N), unit_columns(rng, 4, N)
    assert cr.simclr_infonce(K, K2, 1e9) == pytest.approx(N * math.log(N), abs=1e-6)


def test_dcl_single_zero_negative():
    K = np.array([[1.0, 0.0], [0.0, 1.0]])
    K2 = np.array([[0.6, 0.0], [0.8, 1.0]])
    pos = np.einsum("ji,ji->i", K, K2)
    for tau in (0.5, 2.0):
        assert cr.dcl(K, K2, tau) == pytest.approx(float(np.sum(-pos / tau)), rel=1e-12)


def test_infonce_rejects_unnormalized_input():
    with pytest.raises(NotNormalized):
        cr.simclr_infonce(2 * E2, E2, 0.1)
    with pytest.raises(NotNormalized):
        cr.dcl(E2, 2 * E2, 0.1)
    with pytest.raises(InvalidMatrix):
        cr.simclr_infonce(np.ones((2, 1)) / np.sqrt(2), np.ones((2, 1)) / np.sqrt(2), 0.1)


@pytest.mark.parametrize("f", ["identity", "absolute", "square"])
@pytest.mark.parametrize("negatives", ["single", "two-branch"])
def test_simclr_dominates_dcl(rng, f, negatives):
    for _ in range(50):
        M, N = rng.integers(2, 8), rng.integers(2, 10)
        K, K2 = unit_columns(rng, M, N), unit_columns(rng, M, N)
        tau = rng.uniform(0.05, 2.0)
        assert cr.simclr_infonce(K, K2, tau, f, negatives) >= cr.dcl(K, K2, tau, f, negatives)


@pytest.mark.parametrize("f", ["absolute", "square"])
@pytest.mark.parametrize("loss", [cr.simclr_infonce, cr.dcl])
def test_even_transform_is_sign_flip_invariant(rng, f, loss):
    K, K2 = unit_columns(rng, 5, 7), unit_columns(rng, 5, 7)
    base = loss(K, K2, 0.3, f)
    for j in range(7):
        Kf = K.copy()
        Kf[:, j] *= -1
        assert loss(Kf, K2, 0.3, f) == base


@pytest.mark.parametrize("tau", [1e-4, 1e-3])
def test_log_sum_exp_stability(rng, tau):
    K, K2 = unit_columns(rng, 3, 6), unit_columns(rng, 3, 6)
    for f in ("identity", "absolute", "square"):
        assert np.isfinite(cr.simclr_infonce(K, K2, tau, f))
        assert np.isfinite(cr.dcl(K, K2, tau, f, "two-branch"))
    big = rng.standard_normal((4, 6)) * 100.0  # covariance entries ~1e4
    assert np.isfinite(cr.c_exp(big, tau))
    lse, w = cr.masked_logsumexp(np.array([[1e4, -1e4, 0.0]]) / tau)
    assert np.isfinite(lse).all() and np.isfinite(w).all()


# -- SCL, Barlow Twins, TCR ------------------------------------------------------------


def test_scl_examples(rng):
    assert cr.spectral_contrastive(E2, E2) == pytest.approx(-4.0)
    assert cr.spectral_contrastive(np.zeros((3, 4)), np.zeros((3, 4))) == 0.0
    K, K2 = rng.standard_normal((2, 4, 6))
    assert cr.spectral_contrastive(K, K2) + 2 * np.sum(K * K2) == pytest.approx(cr.l_c(K), rel=1e-12)


def test_barlow_twins_examples():
    H = np.array([[1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0]])
    assert cr.barlow_twins(H, H) == pytest.approx(0.0, abs=1e-15)
    same = np.vstack([H[0], H[0]])
    for lam in (5e-3, 0.1):
        assert cr.barlow_twins(same, same, lam) == pytest.approx(2 * lam, rel=1e-12)
    lam = 0.01
    C = -(H @ H.T) / 4
    expected = 4 * 2 + lam * (np.sum(C**2) - np.sum(np.diag(C) ** 2))
    assert cr.barlow_twins(H, -H, lam) == pytest.approx(expected, rel=1e-12)


def test_barlow_twins_requires_standardized_rows():
    with pytest.raises(NotStandardized):
        cr.barlow_twins(np.array([[1.0, 2.0, 3.0]]), np.array([[1.0, 2.0, 3.0]]))


def test_tcr_examples(rng):
    assert cr.tcr(E2, 1.0) == pytest.approx(-math.log(2), rel=1e-12)
    assert cr.tcr(np.zeros((3, 2)), 1.0, check=False) == 0.0
    K = unit_columns(rng, 4, 6)
    assert abs(cr.tcr(K, 1e-12)) < 1e-10
    s = np.linalg.svd(K, compute_uv=False)
    assert cr.tcr(K, 0.7) == pytest.approx(-0.5 * np.sum(np.log1p(0.7 * s**2)), rel=1e-12)
    with pytest.raises(NotNormalized):
        cr.tcr(2 * E2)


# -- dispatch ----------------------------------------------------------------------------


def _inputs_for(spec, rng, M=4, N=6):
    if spec.input_constraint == "unit-columns":
        return unit_columns(rng, M, N), unit_columns(rng, M, N)
    if spec.input_constraint == "standardized-rows":
        return apply("bt-standardize", rng.standard_normal((M, N))), apply("bt-standardize", rng.standard_normal((M, N)))
    return rng.standard_normal((M, N)), rng.standard_normal((M, N))


@pytest.mark.parametrize("loss_id", cr.LOSS_IDS)
def test_loss_value_is_weighted_breakdown(rng, loss_id):
    spec = cr.LossSpec(loss_id, tau=0.2)
    K, K2 = _inputs_for(spec, rng)
    lv = cr.evaluate(spec, K, K2)
    total = sum(lv.weights[k] * v for k, v in lv.breakdown.items())
    assert abs(lv.value - total) <= 1e-12 * max(1.0, abs(lv.value))
    assert float(lv) == lv.value


def test_loss_spec_validation():
    with pytest.raises(UnknownLoss):
        cr.LossSpec("byol")
    with pytest.raises(ValueError):
        cr.LossSpec("simclr", tau=-1.0)
    with pytest.raises(ValueError):
        cr.VicregWeights(-1.0, 0.0, 0.0)
    assert set(cr.INFONCE_IDS) < set(cr.LOSS_IDS)
