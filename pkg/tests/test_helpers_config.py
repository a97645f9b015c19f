from __future__ import annotations

from pathlib import Path

import pytest

from src.utils.helpers import ConfigError, get_thread_count, load_run_config, parse_int_list

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"

MINIMAL = """
[run]
benchmark = diffusion_reaction
seed = 7

[hyperparameters]
alpha_u = 4
beta_u = 2e-2
alpha_z = 1e-10
beta_z = 3e-2
alpha_d = 1e-4
"""


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.mark.parametrize("name", ["diffusion_reaction", "mass_spring", "advection_diffusion"])
def test_shipped_configs_load(name: str):
    config = load_run_config(CONFIG_DIR / f"{name}.ini")
    assert config.benchmark == name
    assert config.function_valued is (name != "advection_diffusion")
    assert config.hyper.alpha_u > 0


def test_minimal_config_uses_defaults(tmp_path):
    config = load_run_config(_write(tmp_path, MINIMAL))
    assert config.mesh == {"n_elems": 100}
    assert config.physics["kappa"] == pytest.approx(0.1)
    assert config.n_training == 2
    assert config.samples == 100
    assert config.ranks == ()
    assert config.output_dir == Path("results/diffusion_reaction")


@pytest.mark.parametrize(
    "key",
    ["alpha_u", "beta_u", "alpha_z", "beta_z", "alpha_d"],
)
def test_missing_hyperparameter_names_the_key(tmp_path, key: str):
    text = "\n".join(line for line in MINIMAL.splitlines() if not line.startswith(key))
    with pytest.raises(ConfigError) as info:
        load_run_config(_write(tmp_path, text))
    assert info.value.key == f"hyperparameters.{key}"
    assert key in str(info.value)


def test_parametric_benchmark_rejects_beta_z(tmp_path):
    text = MINIMAL.replace("diffusion_reaction", "advection_diffusion")
    with pytest.raises(ConfigError) as info:
        load_run_config(_write(tmp_path, text))
    assert info.value.key == "hyperparameters.beta_z"


def test_overrides_and_invalid_values(tmp_path):
    path = _write(tmp_path, MINIMAL)
    config = load_run_config(path, {"mesh.n_elems": "20", "run.ranks": "1-3, 5"})
    assert config.mesh["n_elems"] == 20
    assert config.ranks == (1, 2, 3, 5)

    with pytest.raises(ConfigError) as info:
        load_run_config(path, {"hyperparameters.alpha_d": "0"})
    assert info.value.key == "hyperparameters.alpha_d"
    with pytest.raises(ConfigError) as info:
        load_run_config(path, {"mesh.n_steps": "10"})
    assert info.value.key == "mesh.n_steps"
    with pytest.raises(ConfigError):
        load_run_config(path, {"run.benchmark": "heat"})
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.ini")


def test_projector_accuracy_settings(tmp_path):
    path = _write(tmp_path, MINIMAL)
    config = load_run_config(path)
    assert config.projector_power_iterations == 2
    assert config.projector_residual_tol == pytest.approx(1e-6)

    config = load_run_config(path, {"projector.power_iterations": "4", "projector.residual_tol": "1e-8"})
    assert config.projector_power_iterations == 4
    assert config.projector_residual_tol == pytest.approx(1e-8)

    with pytest.raises(ConfigError) as info:
        load_run_config(path, {"projector.power_iterations": "-1"})
    assert info.value.key == "projector.power_iterations"
    with pytest.raises(ConfigError) as info:
        load_run_config(path, {"projector.residual_tol": "0"})
    assert info.value.key == "projector.residual_tol"


def test_fingerprints_ignore_output_dir(tmp_path):
    path = _write(tmp_path, MINIMAL)
    a = load_run_config(path, {"run.output_dir": str(tmp_path / "a")})
    b = load_run_config(path, {"run.output_dir": str(tmp_path / "b")})
    c = load_run_config(path, {"run.samples": "3"})
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()
    # el muestreo no cambia z̃
    assert a.model_fingerprint() == c.model_fingerprint()


@pytest.mark.parametrize(
    "text,expected",
    [
        ("4, 11", (4, 11)),
        ("1-4", (1, 2, 3, 4)),
        ("2, 1-3; 2", (2, 1, 3)),
        ("", ()),
    ],
)
def test_parse_int_list(text: str, expected: tuple):
    assert parse_int_list(text) == expected


def test_parse_int_list_rejects_garbage():
    with pytest.raises(ValueError):
        parse_int_list("a-b")


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("HDSA_THREADS", "3")
    assert get_thread_count() == 3
    monkeypatch.setenv("HDSA_THREADS", "many")
    with pytest.raises(ConfigError):
        get_thread_count()
