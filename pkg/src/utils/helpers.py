from __future__ import annotations

import configparser
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from src.utils.validators import is_non_negative_number, is_positive_int, is_positive_number

CONFIG_PATH = Path("config/settings.ini")


class ConfigError(Exception):
    """Errores de configuración (clave faltante o valor inválido)."""

    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key = key


def _frozen_dir() -> Path | None:
    try:
        if getattr(sys, "frozen", False):
            return Path(sys.executable).parent
    except Exception:
        pass
    return None


def _candidate_paths(rel_path: Path) -> list[Path]:
    if rel_path.is_absolute():
        return [rel_path]
    paths: list[Path] = []
    exedir = _frozen_dir()
    if exedir is not None:
        paths.append(exedir / rel_path)
    paths.append(Path.cwd() / rel_path)
    paths.append(Path(__file__).resolve().parents[2] / rel_path)
    return paths


# -----------------------------
# SETTINGS DE APLICACIÓN
# -----------------------------
def read_config() -> configparser.ConfigParser:
    """Lee config/settings.ini (junto al ejecutable, cwd o raíz del repo)."""
    cfg = configparser.ConfigParser()
    for p in _candidate_paths(CONFIG_PATH):
        if p.exists():
            cfg.read(p, encoding="utf-8")
            break
    return cfg


def get_thread_count() -> int:
    """Hilos de trabajo: HDSA_THREADS > settings [run] threads > CPUs disponibles."""
    env = os.getenv("HDSA_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"HDSA_THREADS inválido: {env!r}", key="HDSA_THREADS")
    cfg = read_config()
    value = cfg.getint("run", "threads", fallback=0)
    if value > 0:
        return value
    return max(1, os.cpu_count() or 1)


def parse_int_list(text: str) -> tuple[int, ...]:
    """'4, 11' -> (4, 11); '1-5' -> (1, 2, 3, 4, 5). Sin duplicados, en orden de aparición."""
    out: list[int] = []
    for chunk in (text or "").replace(";", ",").split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk[1:]:
            lo, hi = chunk.split("-", 1)
            values = range(int(lo), int(hi) + 1)
        else:
            values = [int(chunk)]
        for v in values:
            if v < 0:
                raise ValueError(f"rango negativo: {chunk}")
            if v not in out:
                out.append(v)
    return tuple(out)


# -----------------------------
# CONFIG DE CORRIDA
# -----------------------------
# Claves de malla/física que acepta cada benchmark; function_valued indica si z es un campo.
BENCHMARK_SCHEMA: dict[str, dict[str, Any]] = {
    "diffusion_reaction": {
        "mesh": {"n_elems": 100},
        "physics": {"kappa": 0.1, "gamma": 1e-4, "amplitude": 0.7},
        "function_valued": True,
    },
    "mass_spring": {
        "mesh": {"n_steps": 200},
        "physics": {"m1": 1.0, "m2": 10.0, "k1": 1.0, "k2": 1.0, "k3": 1.0, "horizon": 10.0, "gamma": 1e-6},
        "function_valued": True,
    },
    "advection_diffusion": {
        "mesh": {"nx": 32, "ny": 32},
        "physics": {"kappa": 0.25, "gamma": 1e-7},
        "function_valued": False,
    },
}


@dataclass(frozen=True)
class Hyperparameters:
    alpha_u: float
    beta_u: float
    alpha_z: float
    alpha_d: float
    beta_z: Optional[float] = None


@dataclass(frozen=True)
class RunConfig:
    benchmark: str
    seed: int
    hyper: Hyperparameters
    output_dir: Path
    mesh: dict[str, int] = field(default_factory=dict)
    physics: dict[str, float] = field(default_factory=dict)
    samples: int = 100
    n_training: int = 2
    ranks: tuple[int, ...] = ()
    evaluate_objective: bool = True
    compute_hifi_optimum: bool = False
    unprojected_mean: bool = False
    xlsx: bool = False
    dump: bool = False
    prior_q: Optional[int] = None
    prior_q_max: int = 200
    prior_oversample: int = 10
    prior_rank_tol: float = 1e-3
    projector_r_max: int = 60
    projector_oversample: int = 10
    projector_eig_tol: float = 1e-4
    projector_power_iterations: int = 2
    projector_residual_tol: float = 1e-6
    gtol_rel: float = 1e-8
    gtol_abs: float = 0.0
    max_iter: int = 50
    initial_radius: Optional[float] = None
    hessian: Optional[str] = None
    secondary_magnitude: float = 0.2
    preview_samples: int = 10
    preview_z_ref: str = "secondary"
    source: Optional[Path] = None

    @property
    def function_valued(self) -> bool:
        return bool(BENCHMARK_SCHEMA[self.benchmark]["function_valued"])

    def as_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["output_dir"] = str(self.output_dir)
        data["source"] = str(self.source) if self.source else None
        data["ranks"] = list(self.ranks)
        return data

    def fingerprint(self) -> str:
        """SHA-256 de la configuración canónica (sin rutas)."""
        data = self.as_dict()
        data.pop("output_dir", None)
        data.pop("source", None)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()

    def model_fingerprint(self) -> str:
        """Huella de lo que determina z̃: modelo, malla, física y optimizador."""
        data = {
            "benchmark": self.benchmark,
            "mesh": self.mesh,
            "physics": self.physics,
            "optimizer": [self.gtol_rel, self.gtol_abs, self.max_iter, self.initial_radius, self.hessian],
        }
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()


def _required(cfg: configparser.ConfigParser, section: str, key: str) -> str:
    if not cfg.has_option(section, key) or not cfg.get(section, key).strip():
        raise ConfigError(f"Falta la clave obligatoria '{section}.{key}'", key=f"{section}.{key}")
    return cfg.get(section, key).strip()


def _number(cfg: configparser.ConfigParser, section: str, key: str, fallback: Optional[float] = None) -> Optional[float]:
    if not cfg.has_option(section, key) or not cfg.get(section, key).strip():
        return fallback
    raw = cfg.get(section, key).strip()
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"'{section}.{key}' no es numérico: {raw!r}", key=f"{section}.{key}")


def _required_number(cfg: configparser.ConfigParser, section: str, key: str) -> float:
    _required(cfg, section, key)
    return float(_number(cfg, section, key))


def _integer(cfg: configparser.ConfigParser, section: str, key: str, fallback: Optional[int] = None) -> Optional[int]:
    value = _number(cfg, section, key, None)
    if value is None:
        return fallback
    if value != int(value):
        raise ConfigError(f"'{section}.{key}' debe ser entero", key=f"{section}.{key}")
    return int(value)


def _boolean(cfg: configparser.ConfigParser, section: str, key: str, fallback: bool) -> bool:
    try:
        return cfg.getboolean(section, key, fallback=fallback)
    except ValueError:
        raise ConfigError(f"'{section}.{key}' debe ser booleano", key=f"{section}.{key}")


def _apply_overrides(cfg: configparser.ConfigParser, overrides: Mapping[str, str]) -> None:
    for dotted, value in overrides.items():
        if "." not in dotted:
            raise ConfigError(f"Override inválido (se espera seccion.clave): {dotted}", key=dotted)
        section, key = dotted.split(".", 1)
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, key, str(value))


def load_run_config(path: Path | str | None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Lee y valida un archivo INI de corrida.

    Las claves de hiperparámetros se llaman exactamente alpha_u, beta_u, alpha_z,
    beta_z, alpha_d. Cualquier clave obligatoria ausente produce ConfigError con su nombre.
    """
    cfg = configparser.ConfigParser()
    source: Optional[Path] = None
    if path is not None:
        source = Path(path)
        if not source.exists():
            raise ConfigError(f"No existe el archivo de configuración: {source}", key="config")
        cfg.read(source, encoding="utf-8")
    _apply_overrides(cfg, overrides or {})

    benchmark = _required(cfg, "run", "benchmark")
    if benchmark not in BENCHMARK_SCHEMA:
        raise ConfigError(
            f"Benchmark desconocido '{benchmark}' (opciones: {', '.join(BENCHMARK_SCHEMA)})",
            key="run.benchmark",
        )
    schema = BENCHMARK_SCHEMA[benchmark]
    seed = _integer(cfg, "run", "seed")
    if seed is None:
        raise ConfigError("Falta la clave obligatoria 'run.seed'", key="run.seed")

    hp = "hyperparameters"
    alpha_u = _required_number(cfg, hp, "alpha_u")
    beta_u = _required_number(cfg, hp, "beta_u")
    alpha_z = _required_number(cfg, hp, "alpha_z")
    alpha_d = _required_number(cfg, hp, "alpha_d")
    beta_z = _number(cfg, hp, "beta_z")
    if schema["function_valued"] and beta_z is None:
        raise ConfigError("Falta la clave obligatoria 'hyperparameters.beta_z'", key="hyperparameters.beta_z")
    if not schema["function_valued"] and beta_z is not None:
        raise ConfigError(
            f"'{benchmark}' usa un controlador paramétrico y no admite beta_z",
            key="hyperparameters.beta_z",
        )
    for name, value in (("alpha_u", alpha_u), ("alpha_z", alpha_z), ("alpha_d", alpha_d)):
        if not is_positive_number(value):
            raise ConfigError(f"'{hp}.{name}' debe ser positivo", key=f"{hp}.{name}")
    for name, value in (("beta_u", beta_u), ("beta_z", beta_z)):
        if value is not None and not is_non_negative_number(value):
            raise ConfigError(f"'{hp}.{name}' debe ser no negativo", key=f"{hp}.{name}")

    mesh: dict[str, int] = {}
    for key, default in schema["mesh"].items():
        value = _integer(cfg, "mesh", key, default)
        if not is_positive_int(value):
            raise ConfigError(f"'mesh.{key}' debe ser entero positivo", key=f"mesh.{key}")
        mesh[key] = int(value)
    physics: dict[str, float] = {}
    for key, default in schema["physics"].items():
        physics[key] = float(_number(cfg, "physics", key, default))
    for section, allowed in (("mesh", schema["mesh"]), ("physics", schema["physics"])):
        if cfg.has_section(section):
            unknown = sorted(set(cfg.options(section)) - set(allowed))
            if unknown:
                raise ConfigError(
                    f"Claves no reconocidas para {benchmark}: {section}.{unknown[0]}",
                    key=f"{section}.{unknown[0]}",
                )

    try:
        ranks = parse_int_list(cfg.get("run", "ranks", fallback=""))
    except ValueError as exc:
        raise ConfigError(f"'run.ranks' inválido: {exc}", key="run.ranks")

    hessian = cfg.get("optimizer", "hessian", fallback="").strip() or None
    if hessian not in (None, "full", "gauss_newton"):
        raise ConfigError("'optimizer.hessian' debe ser full o gauss_newton", key="optimizer.hessian")
    z_ref = cfg.get("preview", "z_ref", fallback="secondary").strip()
    if z_ref not in ("secondary", "z_tilde"):
        raise ConfigError("'preview.z_ref' debe ser secondary o z_tilde", key="preview.z_ref")

    out = cfg.get("run", "output_dir", fallback="").strip() or f"results/{benchmark}"

    config = RunConfig(
        benchmark=benchmark,
        seed=int(seed),
        hyper=Hyperparameters(alpha_u=alpha_u, beta_u=beta_u, alpha_z=alpha_z, alpha_d=alpha_d, beta_z=beta_z),
        output_dir=Path(out),
        mesh=mesh,
        physics=physics,
        samples=_integer(cfg, "run", "samples", 100),
        n_training=_integer(cfg, "run", "n_training", 1 if not schema["function_valued"] else 2),
        ranks=ranks,
        evaluate_objective=_boolean(cfg, "run", "evaluate_objective", True),
        compute_hifi_optimum=_boolean(cfg, "run", "compute_hifi_optimum", False),
        unprojected_mean=_boolean(cfg, "run", "unprojected_mean", False),
        xlsx=_boolean(cfg, "run", "xlsx", False),
        dump=_boolean(cfg, "run", "dump", False),
        prior_q=_integer(cfg, "prior", "q"),
        prior_q_max=_integer(cfg, "prior", "q_max", 200),
        prior_oversample=_integer(cfg, "prior", "oversample", 10),
        prior_rank_tol=float(_number(cfg, "prior", "rank_tol", 1e-3)),
        projector_r_max=_integer(cfg, "projector", "r_max", 60),
        projector_oversample=_integer(cfg, "projector", "oversample", 10),
        projector_eig_tol=float(_number(cfg, "projector", "eig_tol", 1e-4)),
        projector_power_iterations=_integer(cfg, "projector", "power_iterations", 2),
        projector_residual_tol=float(_number(cfg, "projector", "residual_tol", 1e-6)),
        gtol_rel=float(_number(cfg, "optimizer", "gtol_rel", 1e-8)),
        gtol_abs=float(_number(cfg, "optimizer", "gtol_abs", 0.0)),
        max_iter=_integer(cfg, "optimizer", "max_iter", 50),
        initial_radius=_number(cfg, "optimizer", "initial_radius"),
        hessian=hessian,
        secondary_magnitude=float(_number(cfg, "secondary", "relative_magnitude", 0.2)),
        preview_samples=_integer(cfg, "preview", "samples", 10),
        preview_z_ref=z_ref,
        source=source,
    )
    if config.samples < 0:
        raise ConfigError("'run.samples' no puede ser negativo", key="run.samples")
    if not is_positive_int(config.n_training):
        raise ConfigError("'run.n_training' debe ser entero positivo", key="run.n_training")
    if not is_positive_int(config.max_iter):
        raise ConfigError("'optimizer.max_iter' debe ser entero positivo", key="optimizer.max_iter")
    if config.prior_q is not None and not is_positive_int(config.prior_q):
        raise ConfigError("'prior.q' debe ser entero positivo", key="prior.q")
    if config.projector_power_iterations < 0:
        raise ConfigError("'projector.power_iterations' no puede ser negativo", key="projector.power_iterations")
    if not is_positive_number(config.projector_residual_tol):
        raise ConfigError("'projector.residual_tol' debe ser positivo", key="projector.residual_tol")
    return config
