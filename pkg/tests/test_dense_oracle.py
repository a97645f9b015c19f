from __future__ import annotations

import numpy as np
import pytest

from src.core.dense_oracle import (
    ORACLE_TOL,
    IdentityReport,
    OracleError,
    build_A_dense,
    build_Wtheta_dense,
    mc_covariance,
    posterior_dense,
    random_instance,
    run_oracle_suite,
    sample_theta_breve_explicit,
    verify_identities,
    verify_structured,
)


def _assert_passed(report: IdentityReport) -> None:
    failed = [(c.name, c.error) for c in report.failures]
    assert report.passed, failed


def test_identity_prior_instance_passes():
    inst = random_instance(0, identity_priors=True)
    assert np.allclose(inst.W_u, np.eye(inst.m))
    _assert_passed(verify_identities(inst))
    _assert_passed(verify_structured(inst))


def test_small_instance_shapes(dense_instance):
    inst = dense_instance
    assert inst.p == inst.m * (inst.n + 1) == 24
    assert build_A_dense(inst).shape == (inst.N * inst.m, inst.p)
    W = build_Wtheta_dense(inst)
    assert np.allclose(W, W.T)
    post = posterior_dense(inst)
    assert post.mean.shape == (inst.p,)
    assert np.all(np.linalg.eigvalsh(post.cov) > 0)


def test_suite_on_a_few_instances():
    reports = run_oracle_suite(3, seed=0)
    assert len(reports) == 4
    assert reports[0].label == "identity"
    for report in reports:
        _assert_passed(report)
    rows = reports[1].as_rows()
    assert rows and set(rows[0]) == {"instance", "check", "error", "tolerance", "passed"}


@pytest.mark.slow
def test_suite_on_twenty_instances():
    assert all(r.passed for r in run_oracle_suite(20, seed=0))


def test_report_flags_failures():
    report = IdentityReport(label="x")
    report.compare("same", np.ones(3), np.ones(3))
    report.add("broken", float("inf"))
    assert not report.passed
    assert [c.name for c in report.failures] == ["broken"]
    assert report.checks[0].tolerance == ORACLE_TOL


def test_instance_size_limits():
    with pytest.raises(OracleError):
        random_instance(0, m=9, n=5, N=2)
    with pytest.raises(OracleError):
        random_instance(0, m=4, n=2, N=3)


def test_explicit_breve_sample_is_seeded(dense_instance):
    a = sample_theta_breve_explicit(dense_instance, seed=3)
    b = sample_theta_breve_explicit(dense_instance, seed=3)
    assert np.array_equal(a, b)
    assert a.shape == (dense_instance.p,)


@pytest.mark.slow
def test_structured_samples_match_dense_covariance(dense_instance):
    inst = dense_instance
    cov = posterior_dense(inst).cov
    empirical = mc_covariance(inst, n_samples=200_000, seed=0)
    assert np.max(np.abs(empirical - cov)) <= 0.05 * np.max(np.abs(cov))
