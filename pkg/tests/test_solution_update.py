from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from src.core.dense_oracle import dense_B, posterior_dense, structured_pipeline
from src.core.fem import assemble
from src.core.mesh import build_interval_mesh
from src.core.prior import FunctionOptPrior, ParametricOptPrior
from src.core.solution_update import (
    ProjectionError,
    apply_B,
    choose_projector_rank,
    gen_eig_H,
    posterior_solution_samples,
    project_inv_hess,
    projector_diagnostics,
    unprojected_update,
)
from src.utils.validators import relative_error


@pytest.fixture()
def pipeline(dense_instance):
    return structured_pipeline(dense_instance)


def test_prior_hessian_has_unit_spectrum():
    fem = assemble(build_interval_mesh(0.0, 1.0, 19))
    wz = FunctionOptPrior.from_fem(0.5, 1e-2, fem)
    proj = gen_eig_H(wz.apply, wz, 5, oversample=5, seed=0)
    assert proj.rank == 5
    assert np.allclose(proj.rho, 1.0, atol=1e-10)
    assert np.allclose(proj.V.T @ proj.WzV, np.eye(5), atol=1e-10)


def test_full_rank_projection_inverts_hessian(dense_instance, pipeline, rng):
    inst = dense_instance
    H = inst.hessian()
    x = rng.standard_normal(inst.n)
    assert pipeline.projector.rank == inst.n
    assert relative_error(project_inv_hess(pipeline.projector, x), np.linalg.solve(H, x)) < 1e-8
    assert np.max(pipeline.projector.residuals(lambda v: H @ v)) < 1e-8

    hess_vec = lambda v: pipeline.problem.hess_vec(inst.z_tilde, v)  # noqa: E731
    assert relative_error(unprojected_update(hess_vec, x, cg_tol=1e-13), -np.linalg.solve(H, x)) < 1e-8
    assert np.array_equal(unprojected_update(hess_vec, np.zeros(inst.n)), np.zeros(inst.n))


def test_projector_is_idempotent_and_truncates(pipeline, rng):
    proj = pipeline.projector.truncate(2)
    x = rng.standard_normal(proj.size)
    Px = proj.project(x)
    assert relative_error(proj.project(Px), Px) < 1e-10
    assert proj.projection_residual(Px) < 1e-10
    assert pipeline.projector.truncate(0).rank == 0
    with pytest.raises(ProjectionError):
        pipeline.projector.truncate(pipeline.projector.rank + 1)


def test_indefinite_hessian_is_rejected(dense_instance):
    wz = dense_instance.opt_prior()
    with pytest.raises(ProjectionError):
        gen_eig_H(lambda v: -wz.apply(v), wz, 2, seed=0)
    with pytest.raises(ProjectionError):
        gen_eig_H(wz.apply, wz, 0)


def test_choose_projector_rank():
    assert choose_projector_rank(np.array([1.0, 1e-2, 1e-5, 1e-6]), tol=1e-4) == 3
    assert choose_projector_rank(np.array([1.0, 0.5]), tol=1e-4) == 2
    assert choose_projector_rank(np.zeros(0)) == 0


def test_mean_update_matches_dense_composition(dense_instance, pipeline):
    inst = dense_instance
    B = dense_B(inst)
    theta_bar = posterior_dense(inst).mean
    b_mean = apply_B(pipeline.mean, pipeline.pieces)
    assert relative_error(b_mean, B @ theta_bar) < 1e-10
    ens = posterior_solution_samples(pipeline.update_inputs(inst.alpha_d), 0, seed=1)
    expected = inst.z_tilde - np.linalg.solve(inst.hessian(), B @ theta_bar)
    assert relative_error(ens.mean, expected) < 1e-9


def test_empty_ensemble(dense_instance, pipeline):
    ens = posterior_solution_samples(pipeline.update_inputs(dense_instance.alpha_d), 0, seed=1)
    assert ens.samples.shape == (dense_instance.n, 0)
    assert ens.seeds == ()
    assert np.array_equal(ens.pointwise_std(), np.zeros(dense_instance.n))
    assert ens.integrated_variance(dense_instance.M_z) == 0.0
    assert ens.max_projection_residual(pipeline.projector) == 0.0
    with pytest.raises(ValueError):
        posterior_solution_samples(pipeline.update_inputs(dense_instance.alpha_d), -1, seed=1)


def test_samples_do_not_depend_on_thread_count(dense_instance, pipeline):
    inputs = pipeline.update_inputs(dense_instance.alpha_d)
    serial = posterior_solution_samples(inputs, 6, seed=3, threads=1)
    threaded = posterior_solution_samples(inputs, 6, seed=3, threads=3)
    assert np.array_equal(serial.samples, threaded.samples)
    assert serial.seeds[4] == (3, 1, 4)
    other = posterior_solution_samples(inputs, 6, seed=4)
    assert not np.array_equal(serial.samples, other.samples)


def test_samples_stay_in_projector_range(dense_instance, pipeline):
    inputs = replace(pipeline.update_inputs(dense_instance.alpha_d), projector=pipeline.projector.truncate(2))
    ens = posterior_solution_samples(inputs, 5, seed=2)
    assert ens.rank == 2
    assert ens.max_projection_residual(inputs.projector) < 1e-10


def test_wz_variance_grows_with_rank(dense_instance, pipeline):
    inst = dense_instance
    base = pipeline.update_inputs(inst.alpha_d)
    variances = []
    for r in range(pipeline.projector.rank + 1):
        ens = posterior_solution_samples(replace(base, projector=pipeline.projector.truncate(r)), 20, seed=5)
        dev = ens.samples - ens.samples.mean(axis=1, keepdims=True)
        variances.append(float(np.sum(dev * (inst.W_z @ dev))))
    assert variances[0] == pytest.approx(0.0, abs=1e-20)
    assert all(b >= a * (1 - 1e-12) for a, b in zip(variances, variances[1:]))


@pytest.fixture()
def decaying_hessian():
    """H = U diag(10^{-i/2}) Uᵀ con W_z = I (n = 30)."""
    rng = np.random.default_rng(7)
    U, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    lam = 10.0 ** (-0.5 * np.arange(30))
    H = U @ np.diag(lam) @ U.T
    return H, lam, ParametricOptPrior(1.0, np.eye(30))


def test_power_iterations_resolve_trailing_pairs(decaying_hessian):
    H, lam, wz = decaying_hessian
    hess_vec = lambda v: H @ v  # noqa: E731
    rough = gen_eig_H(hess_vec, wz, 8, oversample=2, seed=3, power_iterations=0)
    sharp = gen_eig_H(hess_vec, wz, 8, oversample=2, seed=3, power_iterations=4)

    assert relative_error(sharp.rho, lam[:8]) < 1e-8
    report = projector_diagnostics(sharp, hess_vec, tol=1e-6)
    assert report["failed"] == []
    assert report["rank"] == 8
    assert len(report["residuals"]) == 8
    assert report["max_residual"] < projector_diagnostics(rough, hess_vec)["max_residual"]


def test_projector_diagnostics_flags_wrong_pairs(decaying_hessian, caplog):
    H, _, wz = decaying_hessian
    hess_vec = lambda v: H @ v  # noqa: E731
    proj = gen_eig_H(hess_vec, wz, 4, oversample=4, seed=0, power_iterations=3)
    off = replace(proj, rho=1.1 * proj.rho)
    with caplog.at_level("WARNING", logger="hdsa.update"):
        report = projector_diagnostics(off, hess_vec, tol=1e-6)
    assert report["failed"] == [1, 2, 3, 4]
    assert report["max_residual"] == pytest.approx(0.1 / 1.1, rel=1e-6)
    assert "residuo" in caplog.text
