from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from src.benchmarks import BenchmarkError, build_benchmark, sample_secondary_input
from src.benchmarks.advection_diffusion import build_advection_diffusion
from src.benchmarks.mass_spring import SpringChainModel
from src.core.nonlinear import ForwardSolveError, newton_solve
from src.utils.validators import relative_error


@pytest.fixture(scope="module")
def reaction():
    return build_benchmark("diffusion_reaction", {"n_elems": 40})


def test_unknown_benchmark():
    with pytest.raises(BenchmarkError):
        build_benchmark("navier_stokes")


def test_reaction_zero_source_gives_zero_state(reaction):
    z = np.zeros(reaction.control_size)
    assert np.array_equal(reaction.pair.lofi_solve(z), np.zeros(reaction.state_size))
    assert np.array_equal(reaction.pair.hifi_solve(z), np.zeros(reaction.state_size))


def test_reaction_initial_guess_reproduces_target(reaction):
    z0 = reaction.initial_guess()
    u = reaction.pair.lofi_solve(z0)
    assert relative_error(u, reaction.objective.target) < 1e-8
    assert np.linalg.norm(reaction.pair.discrepancy_eval(z0)) > 1e-3


def test_reaction_rejects_bad_amplitude():
    with pytest.raises(BenchmarkError):
        build_benchmark("diffusion_reaction", {"n_elems": 10}, {"amplitude": 1.2})


def test_opt_prior_kind_follows_benchmark(reaction):
    with pytest.raises(BenchmarkError):
        reaction.opt_prior(1.0)
    wz = reaction.opt_prior(1.0, 1e-2)
    assert wz.size == reaction.control_size


def test_spring_chain_without_coupling_has_no_discrepancy():
    bench = build_benchmark("mass_spring", {"n_steps": 80}, {"k2": 0.0})
    z = np.sin(bench.control_coords[:, 0])
    assert np.allclose(bench.pair.discrepancy_eval(z), 0.0, atol=1e-10)
    coupled = build_benchmark("mass_spring", {"n_steps": 80})
    assert np.linalg.norm(coupled.pair.discrepancy_eval(z)) > 1e-6


def test_crank_nicolson_conserves_energy():
    model = SpringChainModel(
        np.array([1.0, 10.0]), np.array([[2.0, -1.0], [-1.0, 2.0]]), 200, 10.0,
        initial_state=np.array([1.0, 0.0, -0.5, 0.2]),
    )
    energy = model.energy(model.solve(np.zeros(model.control_size)))
    assert np.max(np.abs(energy - energy[0])) <= 1e-10 * energy[0]


def test_crank_nicolson_is_second_order():
    errors = []
    for n_steps in (100, 200):
        model = SpringChainModel(np.array([1.0]), np.array([[2.0]]), n_steps, 10.0, initial_state=np.array([1.0, 0.0]))
        u = model.solve(np.zeros(model.control_size))
        errors.append(np.max(np.abs(model.component(u, 0) - np.cos(np.sqrt(2.0) * model.times))))
    assert errors[0] / errors[1] >= 3.8


def test_spring_chain_rejects_bad_input():
    with pytest.raises(BenchmarkError):
        SpringChainModel(np.array([0.0]), np.array([[1.0]]), 10, 1.0)
    with pytest.raises(BenchmarkError):
        build_benchmark("mass_spring", {"n_steps": 10}, {"k3": -1.0})


def test_advection_models_agree_with_constant_velocity():
    bench = build_advection_diffusion({"nx": 32, "ny": 32}, {}, hifi_velocity="constant")
    z = np.linspace(0.5, 1.5, bench.control_size)
    assert np.allclose(bench.pair.discrepancy_eval(z), 0.0, atol=1e-10)
    assert bench.settings["target_quadrature_points"] > 0
    with pytest.raises(BenchmarkError):
        bench.opt_prior(1.0, 0.1)


def test_secondary_input_has_requested_magnitude(reaction, rng):
    wz = reaction.opt_prior(1.0, 1e-2)
    z_tilde = reaction.initial_guess()
    z2 = sample_secondary_input(wz, z_tilde, seed=rng, relative_magnitude=0.2)
    assert wz.norm(z2 - z_tilde) == pytest.approx(0.2 * wz.norm(z_tilde), rel=1e-10)
    with pytest.raises(BenchmarkError):
        sample_secondary_input(wz, z_tilde, seed=0, relative_magnitude=0.0)


def test_newton_failure_keeps_residual_trace():
    with pytest.raises(ForwardSolveError) as info:
        newton_solve(lambda u: u * u + 1.0, lambda u: sp.identity(1, format="csc"), np.zeros(1))
    assert info.value.trace
    assert "residuos" in str(info.value)


@pytest.mark.slow
def test_advection_hifi_newton_converges():
    bench = build_advection_diffusion({"nx": 16, "ny": 16}, {})
    z = np.full(bench.control_size, 2.0)
    d = bench.pair.discrepancy_eval(z)
    assert np.all(np.isfinite(d))
    assert np.linalg.norm(d) > 0
