from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from src.benchmarks import build_benchmark
from src.core.optimizer import OptimizationError, solve_lofi
from src.core.problem import LinearModel, ReducedProblem, TrackingObjective
from src.utils.validators import relative_error

STEPS = (1e-2, 1e-3, 1e-4, 1e-5)


def _quadratic(rng, gamma: float = 0.1) -> tuple[ReducedProblem, np.ndarray, np.ndarray]:
    S = rng.standard_normal((6, 4))
    T = rng.standard_normal(6)
    objective = TrackingObjective(obs_mass=sp.identity(6, format="csr"), target=T,
                                  reg=sp.identity(4, format="csr"), gamma=gamma)
    return ReducedProblem(LinearModel(S), objective), S, T


@pytest.fixture()
def reaction_problem():
    bench = build_benchmark("diffusion_reaction", {"n_elems": 20})
    x = bench.control_coords[:, 0]
    z = bench.initial_guess() * (1.0 + 0.1 * np.sin(3.0 * x))
    return bench.make_problem(), z


SMALL_MESHES = {
    "diffusion_reaction": {"n_elems": 20},
    "mass_spring": {"n_steps": 40},
    "advection_diffusion": {"nx": 8, "ny": 8},
}


@pytest.fixture(params=sorted(SMALL_MESHES))
def benchmark_problem(request):
    """Problema reducido de baja fidelidad y un control genérico (no óptimo) de cada benchmark."""
    bench = build_benchmark(request.param, SMALL_MESHES[request.param])
    shift = np.random.default_rng(21).standard_normal(bench.control_size)
    return bench.make_problem(), bench.initial_guess() + 0.5 * shift


def _best_fd_error(f, z, v, exact) -> float:
    errors = []
    for eps in STEPS:
        fd = (f(z + eps * v) - f(z - eps * v)) / (2 * eps)
        errors.append(relative_error(fd, exact))
    return min(errors)


def test_gradient_matches_central_differences(benchmark_problem, rng):
    prob, z = benchmark_problem
    g = prob.gradient(z)
    for _ in range(5):
        v = 10.0 * rng.standard_normal(prob.size)
        assert _best_fd_error(prob.objective_value, z, v, float(g @ v)) <= 1e-6


def test_hessian_vec_is_symmetric_and_fd_consistent(benchmark_problem, rng):
    prob, z = benchmark_problem
    v, w = rng.standard_normal(prob.size), rng.standard_normal(prob.size)
    Hv, Hw = prob.hess_vec(z, v), prob.hess_vec(z, w)
    assert abs(w @ Hv - v @ Hw) <= 1e-10 * max(abs(w @ Hv), 1e-300)
    assert _best_fd_error(prob.gradient, z, w, Hw) <= 1e-5


def test_gauss_newton_drops_second_order_term(reaction_problem, rng):
    prob, z = reaction_problem
    gn = ReducedProblem(prob.model, prob.objective, hessian="gauss_newton")
    v = rng.standard_normal(prob.size)
    assert v @ gn.hess_vec(z, v) > 0
    assert not np.allclose(gn.hess_vec(z, v), prob.hess_vec(z, v))
    with pytest.raises(ValueError):
        ReducedProblem(prob.model, prob.objective, hessian="bfgs")


def test_adjoint_consistency(reaction_problem, rng):
    prob, z = reaction_problem
    v = rng.standard_normal(prob.size)
    w = rng.standard_normal(prob.model.observed_size)
    lhs = float(prob.jacobian_transpose_apply(z, w) @ v)
    rhs = float(w @ prob.jacobian_apply(z, v))
    assert abs(lhs - rhs) <= 1e-8 * abs(rhs)


def test_quadratic_problem_converges_in_one_newton_step(rng):
    prob, S, T = _quadratic(rng)
    result = solve_lofi(prob, np.zeros(4), gtol=1e-10, cg_rtol=1e-12)
    expected = np.linalg.solve(S.T @ S + 0.1 * np.eye(4), S.T @ T)
    assert result.converged
    assert result.iterations == 1
    assert relative_error(result.z_tilde, expected) < 1e-8
    assert result.settings["eta"] == 0.1
    assert len(result.trace_rows()) == 1


def test_strong_regularization_drives_solution_to_zero(rng):
    prob, _, _ = _quadratic(rng, gamma=1e8)
    result = solve_lofi(prob, np.ones(4), gtol=1e-12, cg_rtol=1e-12)
    assert np.linalg.norm(result.z_tilde) < 1e-6


def test_trust_region_run_from_far_start(reaction_problem):
    prob, z = reaction_problem
    result = solve_lofi(prob, 2.0 * z, gtol=1e-6, max_iter=100, initial_radius=10.0)
    assert result.converged
    assert result.grad_norm <= 1e-6 * result.initial_grad_norm
    assert result.objective <= prob.objective_value(2.0 * z)


def test_optimization_error_carries_log_path():
    exc = OptimizationError("región colapsada", "results/optimize.log")
    assert exc.log_path == "results/optimize.log"
    assert "results/optimize.log" in str(exc)
