from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg as sla

from src.core.calibration import (
    CalibrationError,
    ThetaStructured,
    TrainingData,
    build_spectrum,
    calibration_report,
    delta_breve_scale,
    delta_eval,
    posterior_coefficients,
    posterior_mean,
    sample_delta_breve,
    sample_theta_hat,
)
from src.core.dense_oracle import a_row, dense_spectrum, posterior_dense, random_instance
from src.core.fem import assemble
from src.core.mesh import build_interval_mesh
from src.core.prior import ParametricOptPrior, build_state_prior
from src.utils.validators import relative_error


def _identity_wz(n: int) -> ParametricOptPrior:
    return ParametricOptPrior(1.0, np.eye(n))


def test_single_training_point_gives_unit_g():
    z = np.array([1.0, -2.0, 0.5])
    data = TrainingData.from_columns([z], [np.zeros(4)])
    spectrum = build_spectrum(data, _identity_wz(3))
    assert spectrum.G.tolist() == [[1.0]]
    assert spectrum.mu == pytest.approx([1.0])
    assert np.allclose(spectrum.Y, 0.0)


def test_two_point_g_matrix():
    n = 3
    e1 = np.eye(n)[0]
    data = TrainingData.from_columns([np.zeros(n), e1], [np.zeros(2), np.zeros(2)])
    spectrum = build_spectrum(data, _identity_wz(n))
    assert np.allclose(spectrum.G, [[1.0, 1.0], [1.0, 2.0]])
    assert np.all(spectrum.e_g >= 0)
    assert np.all(np.diff(spectrum.mu) <= 0)
    assert spectrum.mu == pytest.approx(sorted(np.linalg.eigvalsh([[1.0, 1.0], [1.0, 2.0]]), reverse=True))


def test_g_matches_dense_assembly():
    inst = random_instance(11, m=3, n=6, N=3)
    spectrum = build_spectrum(inst.training_data(), inst.opt_prior())
    assert relative_error(spectrum.G, dense_spectrum(inst).G) < 1e-12


def test_training_data_validation():
    z = np.array([1.0, 0.0, 0.0])
    v = np.array([0.0, 1.0, 0.0])
    with pytest.raises(CalibrationError) as info:
        TrainingData(Z=np.column_stack([z + v, z]), D=np.zeros((2, 2)), z_tilde=z)
    assert info.value.column == 0
    with pytest.raises(CalibrationError):
        TrainingData(Z=np.column_stack([z, z]), D=np.zeros((2, 1)), z_tilde=z)

    dependent = TrainingData.from_columns([z, z + v, z + 2 * v], [np.zeros(2)] * 3)
    with pytest.raises(CalibrationError) as info:
        build_spectrum(dependent, _identity_wz(3))
    assert info.value.column == 2


def test_zero_discrepancy_gives_zero_mean(dense_instance):
    inst = dense_instance
    data = TrainingData(Z=inst.Z, D=np.zeros_like(inst.D), z_tilde=inst.z_tilde)
    spectrum = build_spectrum(data, inst.opt_prior())
    mean = posterior_mean(spectrum, inst.state_prior(), inst.alpha_d)
    for z in (inst.z_tilde, inst.Z[:, -1], np.ones(inst.n)):
        assert np.allclose(delta_eval(mean, z), 0.0)


def test_posterior_mean_matches_dense(dense_instance):
    inst = dense_instance
    spectrum = build_spectrum(inst.training_data(), inst.opt_prior())
    mean = posterior_mean(spectrum, inst.state_prior(), inst.alpha_d)
    theta_bar = mean.to_dense(inst.M_z)
    assert mean.n_terms == inst.N + inst.N**2
    assert relative_error(theta_bar, posterior_dense(inst).mean) < 1e-10
    z = inst.z_tilde + 0.3
    assert relative_error(delta_eval(mean, z), a_row(inst, z) @ theta_bar) < 1e-10


def test_single_point_mean_reduces_to_shifted_difference():
    inst = random_instance(5, m=4, n=5, N=1)
    wu = inst.state_prior()
    spectrum = build_spectrum(inst.training_data(), inst.opt_prior())
    mean = posterior_mean(spectrum, wu, inst.alpha_d)
    u1 = wu.apply_inv(inst.M_u @ inst.D[:, 0])
    u11 = np.linalg.solve(inst.alpha_d * inst.W_u + inst.M_u, inst.M_u @ u1)
    expected = (u1 - u11) / inst.alpha_d
    assert relative_error(delta_eval(mean, inst.z_tilde), expected) < 1e-10


def test_breve_scale_vanishes_on_training_inputs(dense_instance):
    inst = dense_instance
    wz = inst.opt_prior()
    spectrum = build_spectrum(inst.training_data(), wz)
    assert delta_breve_scale(spectrum, wz, inst.z_tilde) == 0.0
    far = delta_breve_scale(spectrum, wz, inst.z_tilde + 1.0)
    assert far > 0
    for ell in range(inst.N):
        assert delta_breve_scale(spectrum, wz, inst.Z[:, ell]) <= 1e-12 * far
    draw = sample_delta_breve(spectrum, wz, inst.z_tilde, inst.state_prior(), seed=4)
    assert np.array_equal(draw, np.zeros(inst.m))


def test_theta_hat_is_seeded_and_adds_to_mean(dense_instance):
    inst = dense_instance
    wu = inst.state_prior()
    spectrum = build_spectrum(inst.training_data(), inst.opt_prior())
    a = sample_theta_hat(spectrum, wu, inst.alpha_d, seed=8)
    b = sample_theta_hat(spectrum, wu, inst.alpha_d, seed=8)
    assert np.array_equal(a.state, b.state)
    mean = posterior_mean(spectrum, wu, inst.alpha_d)
    total = mean + a
    assert total.n_terms == mean.n_terms + a.n_terms
    assert total.origin == "sum"
    assert np.allclose(total.to_dense(inst.M_z), mean.to_dense(inst.M_z) + a.to_dense(inst.M_z))
    empty = ThetaStructured.empty(inst.m, inst.n)
    assert np.array_equal(delta_eval(empty, inst.z_tilde), np.zeros(inst.m))


def test_calibration_report_and_alpha_d_validation(dense_instance):
    inst = dense_instance
    wu = inst.state_prior()
    spectrum = build_spectrum(inst.training_data(), inst.opt_prior())
    with pytest.raises(CalibrationError):
        posterior_coefficients(spectrum, wu, 0.0)
    coeffs = posterior_coefficients(spectrum, wu, inst.alpha_d)
    report = calibration_report(spectrum, coeffs, posterior_mean(spectrum, wu, inst.alpha_d, coeffs), inst.M_u)
    assert report["n_training"] == inst.N
    assert len(report["fit_residuals"]) == inst.N
    assert report["a"][0] == pytest.approx(1.0)


def test_fit_improves_as_noise_shrinks():
    fem = assemble(build_interval_mesh(0.0, 1.0, 9))
    wu = build_state_prior(1.0, 1e-2, fem, q=10, oversample=0, seed=0)
    wz = ParametricOptPrior(1.0, np.eye(2))
    d = np.sin(np.linspace(0.0, np.pi, 10))
    data = TrainingData.from_columns([np.zeros(2)], [d])
    spectrum = build_spectrum(data, wz)
    errors = []
    for alpha_d in (1e-1, 1e-3, 1e-6):
        mean = posterior_mean(spectrum, wu, alpha_d)
        errors.append(relative_error(delta_eval(mean, np.zeros(2)), d))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-3


@pytest.mark.parametrize("N", [1, 2, 3])
def test_mean_and_hat_ignore_uninformed_directions(N: int):
    inst = random_instance(40 + N, m=4, n=6, N=N)
    wu, wz = inst.state_prior(), inst.opt_prior()
    spectrum = build_spectrum(inst.training_data(), wz)
    mean = posterior_mean(spectrum, wu, inst.alpha_d)
    hat = sample_theta_hat(spectrum, wu, inst.alpha_d, seed=5)

    # v con z̃ᵀW_z⁻¹v = 0 y Z_cᵀW_z⁻¹v = 0
    constraints = np.linalg.solve(inst.W_z, inst.Z).T
    directions = sla.null_space(constraints)
    assert directions.shape[1] == inst.n - N
    for base in (inst.z_tilde, inst.Z[:, -1]):
        for theta in (mean, hat):
            ref = delta_eval(theta, base)
            scale = max(float(np.linalg.norm(ref)), 1.0)
            for j in range(directions.shape[1]):
                moved = delta_eval(theta, base + 3.0 * directions[:, j])
                assert np.linalg.norm(moved - ref) <= 1e-10 * scale
