"""
Corridas completas con las configuraciones de config/ (lentas: -m "not slow" las omite).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import pytest

from src import workflows
from src.reports.export import read_csv_columns
from src.utils.helpers import load_run_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"

# cota de J(S(z̄)) / J(S(z̃)) por benchmark
IMPROVEMENT = {
    "diffusion_reaction": 0.75,
    "mass_spring": 0.75,
    "advection_diffusion": 0.5,
}


def _shipped(name: str, out: Path, **extra: str):
    return load_run_config(CONFIG_DIR / f"{name}.ini", {"run.output_dir": str(out), **extra})


def _markers(path: Path) -> dict[str, float]:
    with path.open(newline="", encoding="utf-8") as fh:
        return {row["name"]: float(row["objective"]) for row in csv.DictReader(fh)}


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(IMPROVEMENT))
def test_posterior_mean_improves_hifi_objective(name: str, tmp_path):
    config = _shipped(name, tmp_path, **{"run.samples": "0"})
    manifest = workflows.cmd_run(config)
    assert manifest.status == "ok"
    J = _markers(manifest.output_dir / "markers.csv")
    assert config.ranks
    for r in config.ranks:
        ratio = J[f"z_bar_r{r}"] / J["z_tilde"]
        assert ratio <= IMPROVEMENT[name], f"r={r}: {ratio:.3f}"

    projector = manifest.defaults["projector"]
    assert projector["rank"] == max(config.ranks)
    assert len(projector["residuals"]) == max(config.ranks)

    if name == "advection_diffusion":
        rho = read_csv_columns(manifest.output_dir / "eigenvalues.csv")["rho"]
        assert rho[0] / rho[1] >= 100


@pytest.mark.slow
def test_reaction_rank_sweep_shape(tmp_path):
    config = _shipped("diffusion_reaction", tmp_path, **{"run.samples": "40"})
    manifest = workflows.cmd_rank_sweep(config, list(range(1, 9)))
    sweep = read_csv_columns(manifest.output_dir / "rank_sweep.csv")
    assert sweep["rank"].tolist() == [float(r) for r in range(1, 9)]

    error = dict(zip(sweep["rank"].astype(int), sweep["mean_relative_error"]))
    assert error[5] < error[1]
    assert np.all(np.isfinite(sweep["mean_relative_error"]))

    variance = sweep["wz_variance"]
    assert variance[0] > 0
    assert np.all(np.diff(variance) >= -1e-9 * variance.max())
