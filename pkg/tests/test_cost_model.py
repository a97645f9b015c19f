from __future__ import annotations

from dataclasses import replace

import pytest

from src.core.cost_model import CostParams, cost_lofi_opt, cost_posterior, cost_summary


def test_default_counts():
    p = CostParams()
    assert cost_lofi_opt(p) == 15900
    assert cost_posterior(p) == 2587
    summary = cost_summary(p)
    assert summary["ratio"] == pytest.approx(15900 / 2587)


def test_zero_counts_leave_one_adjoint_solve():
    p = CostParams(N=0, s=0, q=0, r=0, ell_E=0, ell_H=0)
    assert cost_posterior(p) == p.a_tilde == 3


@pytest.mark.parametrize("s", [0, 1, 10, 250])
def test_posterior_cost_is_linear_in_samples(s):
    base = CostParams(s=0)
    slope = base.a_tilde + base.e_z
    assert cost_posterior(replace(base, s=s)) == pytest.approx(cost_posterior(base) + slope * s)


def test_optimizer_cost_ignores_posterior_parameters():
    assert cost_lofi_opt(CostParams(s=0, r=0)) == cost_lofi_opt(CostParams(s=500, r=80))


@pytest.mark.parametrize("field", ["f", "s", "n_iter", "ell_H"])
def test_negative_values_are_rejected(field):
    with pytest.raises(ValueError):
        CostParams(**{field: -1})
