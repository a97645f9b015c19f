from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from src.core.fem import assemble
from src.core.mesh import build_interval_mesh
from src.core.prior import (
    EllipticOperator,
    FunctionOptPrior,
    ParametricOptPrior,
    PriorError,
    StatePrior,
    build_state_prior,
    choose_rank,
    truncated_gsvd,
)
from src.utils.validators import relative_error


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def test_full_gsvd_reproduces_inverse(unit_fem, rng):
    E = EllipticOperator.from_fem(2e-2, unit_fem)
    factors = truncated_gsvd(E, 50, oversample=0, seed=0)
    V, pi = factors.V, factors.pi
    assert np.allclose(V.T @ (unit_fem.mass @ V), np.eye(50), atol=1e-10)
    assert np.all(np.diff(pi) <= 0)
    for _ in range(10):
        x = rng.standard_normal(50)
        assert relative_error(V @ (pi * (V.T @ x)), E.solve(x)) < 1e-8


def test_truncation_error_is_bounded_by_next_singular_value(unit_fem, rng):
    E = EllipticOperator.from_fem(2e-2, unit_fem)
    full = truncated_gsvd(E, 50, oversample=0, seed=0)
    top = full.truncate(10)
    M = _dense(unit_fem.mass)
    Minv = np.linalg.inv(M)
    bound = full.pi[10] / full.pi[0] + 1e-8
    for _ in range(10):
        x = rng.standard_normal(50)
        err = E.solve(x) - top.V @ (top.pi * (top.V.T @ x))
        # ‖E⁻¹ − V_q Π_q V_qᵀ‖ = π_{q+1} entre las normas M⁻¹ y M
        ratio = np.sqrt(err @ M @ err) / np.sqrt(x @ Minv @ x)
        assert ratio / full.pi[0] <= bound


def test_randomized_gsvd_ritz_values_interlace(unit_fem):
    E = EllipticOperator.from_fem(2e-2, unit_fem)
    full = truncated_gsvd(E, 50, oversample=0, seed=0)
    approx = truncated_gsvd(E, 10, oversample=10, seed=1)
    assert approx.rank == 10
    assert np.all(approx.pi <= full.pi[:10] * (1 + 1e-10))
    assert approx.pi[0] == pytest.approx(full.pi[0], rel=1e-6)


def test_gsvd_rejects_bad_rank(unit_fem):
    E = EllipticOperator.from_fem(2e-2, unit_fem)
    with pytest.raises(PriorError):
        truncated_gsvd(E, 0)
    with pytest.raises(PriorError):
        truncated_gsvd(E, 51)


def test_choose_rank_uses_first_ratio_below_tolerance():
    assert choose_rank(np.array([1.0, 0.5, 1e-4, 1e-5]), tol=1e-3) == 2
    assert choose_rank(np.array([1.0, 0.9]), tol=1e-3) == 2


def test_zero_beta_gives_scaled_inverse_mass(unit_fem, rng):
    prior = build_state_prior(3.0, 0.0, unit_fem, q=50, oversample=0, seed=0)
    M = _dense(unit_fem.mass)
    x = rng.standard_normal(50)
    assert relative_error(prior.apply_inv(x), 3.0 * np.linalg.solve(M, x)) < 1e-8


def test_state_prior_matches_dense_covariance(unit_fem, rng):
    alpha, beta = 4.0, 2e-2
    prior = build_state_prior(alpha, beta, unit_fem, q=50, oversample=0, seed=0)
    M, K = _dense(unit_fem.mass), _dense(unit_fem.stiffness)
    Einv = np.linalg.inv(beta * K + M)
    x = rng.standard_normal(50)
    assert relative_error(prior.apply_inv(x), alpha * Einv @ M @ Einv.T @ x) < 1e-8
    # W_u W_u⁻¹ = I
    assert relative_error(prior.apply_precision(prior.apply_inv(x)), x) < 1e-8


def test_shifted_inverse_matches_dense(rng):
    fem = assemble(build_interval_mesh(0.0, 1.0, 19))
    alpha, beta, alpha_d, mu = 2.0, 5e-2, 1e-2, 1.7
    prior = build_state_prior(alpha, beta, fem, q=20, oversample=0, seed=0)
    M, K = _dense(fem.mass), _dense(fem.stiffness)
    E = beta * K + M
    W = E @ np.linalg.solve(M, E) / alpha
    x = rng.standard_normal(20)
    assert relative_error(prior.apply_shifted_inv(alpha_d, mu, x), np.linalg.solve(alpha_d * W + mu * M, x)) < 1e-8
    with pytest.raises(PriorError):
        prior.shifted_diagonal(0.0, mu)


@pytest.mark.slow
def test_shifted_samples_match_dense_covariance():
    fem = assemble(build_interval_mesh(0.0, 1.0, 19))
    alpha, beta, alpha_d, mu = 2.0, 5e-2, 1e-2, 1.7
    prior = build_state_prior(alpha, beta, fem, q=20, oversample=0, seed=0)
    M, K = _dense(fem.mass), _dense(fem.stiffness)
    E = beta * K + M
    cov = np.linalg.inv(alpha_d * E @ np.linalg.solve(M, E) / alpha + mu * M)
    gen = np.random.default_rng(99)
    X = np.column_stack([prior.sample_shifted(alpha_d, mu, gen) for _ in range(100_000)])
    empirical = X @ X.T / X.shape[1]
    assert np.max(np.abs(empirical - cov)) <= 0.05 * np.max(np.abs(cov))


def test_samples_are_seeded_and_scale_with_sqrt_alpha(unit_fem):
    prior = build_state_prior(1.0, 2e-2, unit_fem, q=20, seed=0)
    scaled = StatePrior(alpha=4.0, operator=prior.operator, factors=prior.factors)
    a, b = prior.sample(5), prior.sample(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, prior.sample(6))
    assert np.allclose(scaled.sample(5), 2.0 * a)
    with pytest.raises(PriorError):
        StatePrior(alpha=0.0, operator=prior.operator, factors=prior.factors)


def test_function_opt_prior_round_trip(unit_fem, rng):
    wz = FunctionOptPrior.from_fem(1e-2, 3e-2, unit_fem)
    x = rng.standard_normal(50)
    assert relative_error(wz.apply(wz.apply_inv(x)), x) < 1e-8
    assert relative_error(wz.apply_inv(wz.apply(x)), x) < 1e-8
    assert np.array_equal(wz.sample(3), wz.sample(3))
    assert wz.norm(np.ones(50)) == pytest.approx(1.0)


def test_parametric_prior_matches_dense_inverse(rng):
    B = rng.standard_normal((6, 6))
    gram = B @ B.T + 6 * np.eye(6)
    wz = ParametricOptPrior(0.5, gram)
    x = rng.standard_normal(6)
    assert relative_error(wz.apply_inv(x), 0.5 * np.linalg.solve(gram, x)) < 1e-10
    assert relative_error(wz.apply(x), gram @ x / 0.5) < 1e-12
    assert np.array_equal(wz.mass, np.eye(6))
    with pytest.raises(PriorError):
        ParametricOptPrior(0.5, -np.eye(3))


@pytest.mark.slow
def test_parametric_prior_sample_covariance():
    gram = np.array([[2.0, 0.5], [0.5, 1.0]])
    wz = ParametricOptPrior(3.0, gram)
    gen = np.random.default_rng(7)
    X = np.column_stack([wz.sample(gen) for _ in range(50_000)])
    cov = 3.0 * np.linalg.inv(gram)
    assert np.max(np.abs(X @ X.T / X.shape[1] - cov)) <= 0.05 * np.max(np.abs(cov))
