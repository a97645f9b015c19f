from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from src import workflows
from src.core.dense_oracle import build_A_dense, build_Wtheta_dense, random_instance
from src.main import EXIT_CONFIG, EXIT_OK, main
from src.reports.export import read_csv_columns
from src.utils.helpers import load_run_config

SMALL_RUN = """
[run]
benchmark = diffusion_reaction
seed = 20240601
samples = 5
n_training = 2
ranks = 2, 4
evaluate_objective = false

[mesh]
n_elems = 20

[hyperparameters]
alpha_u = 4
beta_u = 2e-2
alpha_z = 1e-10
beta_z = 3e-2
alpha_d = 1e-4

[prior]
q_max = 21
oversample = 5

[projector]
oversample = 5
"""


@pytest.fixture()
def ini(tmp_path) -> Path:
    path = tmp_path / "small.ini"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return path


def _config(ini: Path, out: Path, **extra: str):
    return load_run_config(ini, {"run.output_dir": str(out), **extra})


def _manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


def test_cost_estimate_command(capsys):
    assert main(["cost-estimate"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["lofi_optimization"] == 15900
    assert data["posterior"] == 2587


def test_missing_key_is_a_config_error(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(SMALL_RUN.replace("alpha_d = 1e-4", ""), encoding="utf-8")
    assert main(["optimize", str(path)]) == EXIT_CONFIG
    assert "alpha_d" in capsys.readouterr().err


def test_bad_override_is_a_config_error(ini):
    assert main(["optimize", str(ini), "--set", "mesh.n_elems"]) == EXIT_CONFIG


def test_optimize_writes_tables_and_registers(ini, tmp_path, capsys):
    out = tmp_path / "res"
    assert main(["optimize", str(ini), "--set", f"run.output_dir={out}"]) == EXIT_OK
    folder = out / "optimize"
    assert capsys.readouterr().out.strip().endswith("manifest.json")
    for name in ("z_tilde.csv", "state_lofi.csv", "state_hifi.csv", "optimize.log"):
        assert (folder / name).exists()
    manifest = _manifest(folder)
    assert manifest["status"] == "ok"
    assert manifest["defaults"]["optimizer"]["converged"]
    assert set(manifest["files"]) >= {"z_tilde.csv", "state_lofi.csv"}

    assert main(["history", "--limit", "5"]) == EXIT_OK
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert rows[0]["command"] == "optimize"
    assert rows[0]["status"] == "ok"


def test_run_writes_ensemble_per_rank(ini, tmp_path):
    config = _config(ini, tmp_path / "res", **{"run.xlsx": "true"})
    manifest = workflows.cmd_run(config)
    folder = manifest.output_dir
    for name in ("training_inputs.csv", "discrepancy.csv", "calibration.json", "eigenvalues.csv",
                 "ensemble_r2.csv", "samples_r4.csv", "ensemble_summary.csv", "summary.xlsx"):
        assert (folder / name).exists(), name
    summary = read_csv_columns(folder / "ensemble_summary.csv")
    assert summary["rank"].tolist() == [2.0, 4.0]
    assert np.all(summary["samples"] == 5)
    assert np.all(np.isfinite(summary["integrated_variance"]))
    ensemble = read_csv_columns(folder / "ensemble_r4.csv")
    assert ensemble["z_tilde"].size == 21
    assert _manifest(folder)["defaults"]["ranks"] == [2, 4]


def test_run_records_eigenpair_residuals(ini, tmp_path):
    config = _config(ini, tmp_path / "res", **{"run.samples": "0", "projector.power_iterations": "3"})
    folder = workflows.cmd_run(config).output_dir
    eig = read_csv_columns(folder / "eigenvalues.csv")
    assert list(eig) == ["index", "rho", "residual"]
    assert eig["rho"].size == 4
    assert np.all(np.isfinite(eig["residual"]))

    projector = _manifest(folder)["defaults"]["projector"]
    assert projector["power_iterations"] == 3
    assert projector["tolerance"] == pytest.approx(1e-6)
    assert projector["residuals"] == pytest.approx(eig["residual"].tolist(), rel=1e-15)
    assert projector["failed"] == [j + 1 for j, res in enumerate(projector["residuals"]) if res > 1e-6]


def test_reruns_are_byte_identical(ini, tmp_path):
    first = workflows.cmd_run(_config(ini, tmp_path / "a")).output_dir
    second = workflows.cmd_run(_config(ini, tmp_path / "b")).output_dir
    for name in ("samples_r2.csv", "samples_r4.csv", "ensemble_r4.csv", "eigenvalues.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_preview_at_z_tilde_has_no_breve_variation(ini, tmp_path):
    config = _config(ini, tmp_path / "res", **{"preview.z_ref": "z_tilde", "preview.samples": "3"})
    folder = workflows.cmd_preview_prior(config).output_dir
    breve = read_csv_columns(folder / "breve_samples.csv")
    assert all(np.array_equal(breve[f"sample_{k}"], np.zeros(21)) for k in range(3))
    state = read_csv_columns(folder / "prior_state_samples.csv")
    assert np.linalg.norm(state["sample_0"]) > 0


def test_rank_sweep_reuses_registered_z_tilde(ini, tmp_path):
    config = _config(ini, tmp_path / "res")
    workflows.cmd_optimize(config)
    z_tilde = read_csv_columns(tmp_path / "res" / "optimize" / "z_tilde.csv")["z_tilde"]

    manifest = workflows.cmd_rank_sweep(config, [0, 2], z_hifi=2.0 * z_tilde)
    assert manifest.defaults["z_tilde_source"].startswith("registry:")
    sweep = read_csv_columns(manifest.output_dir / "rank_sweep.csv")
    assert sweep["rank"].tolist() == [0.0, 2.0]
    # sin proyector la media es z̃ y el error relativo contra 2z̃ es 1/2
    assert sweep["mean_relative_error"][0] == pytest.approx(0.5, rel=1e-10)
    assert sweep["integrated_variance"][0] == pytest.approx(0.0, abs=1e-20)
    assert sweep["wz_variance"][1] >= sweep["wz_variance"][0]


def test_oracle_check_command(tmp_path, capsys):
    assert main(["oracle-check", "--instances", "2", "--output", str(tmp_path)]) == EXIT_OK
    assert "0 fallas" in capsys.readouterr().out
    rows = (tmp_path / "oracle.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "instance,check,error,tolerance,passed"


def _read_triplets(path: Path) -> np.ndarray:
    lines = path.read_text(encoding="utf-8").splitlines()
    _, rows, cols, nnz = lines[0].split()
    out = np.zeros((int(rows), int(cols)))
    for line in lines[1:]:
        i, j, value = line.split()
        out[int(i), int(j)] = float(value)
    assert len(lines) - 1 == int(nnz)
    return out


def test_run_dump_writes_matrices_and_prior_factors(ini, tmp_path):
    out = tmp_path / "res"
    assert main(["run", str(ini), "--set", f"run.output_dir={out}", "--set", "run.samples=0", "--dump"]) == EXIT_OK
    folder = out / "run" / "matrices"
    mass = _read_triplets(folder / "state_mass.txt")
    assert mass.shape == (21, 21)
    assert np.allclose(mass, mass.T, rtol=0, atol=1e-15)
    assert mass.sum() == pytest.approx(1.0, rel=1e-12)

    V = _read_triplets(folder / "prior_V.txt")
    pi = _read_triplets(folder / "prior_pi.txt")
    assert V.shape[0] == 21
    assert pi.shape == (V.shape[1], V.shape[1])
    assert np.all(np.diag(pi) > 0)
    files = _manifest(out / "run")["files"]
    assert {"matrices/state_mass.txt", "matrices/prior_V.txt", "matrices/opt_mass.txt"} <= set(files)


def test_oracle_check_dump_matches_dense_constructions(tmp_path):
    assert main(["oracle-check", "--instances", "1", "--output", str(tmp_path), "--dump"]) == EXIT_OK
    inst = random_instance(0)
    folder = tmp_path / "matrices" / "random-0"
    assert np.array_equal(_read_triplets(folder / "W_theta.txt"), build_Wtheta_dense(inst))
    assert np.array_equal(_read_triplets(folder / "A.txt"), build_A_dense(inst))
    assert (tmp_path / "matrices" / "identity" / "W_u.txt").exists()


def test_oracle_dump_requires_output_folder():
    assert main(["oracle-check", "--instances", "1", "--dump"]) == EXIT_CONFIG
