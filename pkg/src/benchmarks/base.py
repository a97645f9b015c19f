"""
Pares de modelos (alta / baja fidelidad) sobre los mismos espacios discretos.

Un Benchmark reúne el par de operadores solución, el objetivo de seguimiento,
los espacios FEM que definen W_u y W_z, y las coordenadas para volcar campos.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.core.fem import FemMatrices
from src.core.prior import (
    FunctionOptPrior,
    OptPrior,
    ParametricOptPrior,
    SeedLike,
    StatePrior,
    _rng,
    build_state_prior,
)
from src.core.problem import ForwardModel, ReducedProblem, TrackingObjective
from src.utils.validators import as_vector

logger = logging.getLogger("hdsa.benchmarks")


class BenchmarkError(Exception):
    """Benchmark desconocido o parámetros físicos inválidos."""


@dataclass(frozen=True, eq=False)
class SolutionOperatorPair:
    """S (alta fidelidad) y S̃ (baja fidelidad) con salida en el mismo espacio observado."""

    hifi: ForwardModel
    lofi: ForwardModel

    def __post_init__(self) -> None:
        if self.hifi.observed_size != self.lofi.observed_size:
            raise BenchmarkError(
                f"Espacios observados distintos: {self.hifi.observed_size} vs {self.lofi.observed_size}"
            )
        if self.hifi.control_size != self.lofi.control_size:
            raise BenchmarkError("Los modelos no comparten la variable de optimización")

    def hifi_solve(self, z: np.ndarray) -> np.ndarray:
        return self.hifi.observe(self.hifi.solve(z))

    def lofi_solve(self, z: np.ndarray) -> np.ndarray:
        return self.lofi.observe(self.lofi.solve(z))

    def discrepancy_eval(self, z: np.ndarray) -> np.ndarray:
        """d = S(z) − S̃(z)."""
        return self.hifi_solve(z) - self.lofi_solve(z)


@dataclass(frozen=True, eq=False)
class Benchmark:
    name: str
    pair: SolutionOperatorPair
    objective: TrackingObjective
    state_fem: FemMatrices
    state_coords: np.ndarray          # (n_obs, k)
    state_columns: tuple[str, ...]
    control_coords: np.ndarray        # (n, k)
    control_columns: tuple[str, ...]
    opt_fem: Optional[FemMatrices] = None
    control_basis: Optional[np.ndarray] = None
    z0: Optional[np.ndarray] = None
    settings: dict = field(default_factory=dict)

    @property
    def function_valued(self) -> bool:
        return self.opt_fem is not None

    @property
    def control_size(self) -> int:
        return int(self.pair.lofi.control_size)

    @property
    def state_size(self) -> int:
        return int(self.pair.lofi.observed_size)

    def make_problem(self, hessian: str = "full") -> ReducedProblem:
        """Problema reducido de baja fidelidad (el que se optimiza)."""
        return ReducedProblem(self.pair.lofi, self.objective, hessian=hessian)

    def hifi_problem(self, hessian: str = "full") -> ReducedProblem:
        """Mismo objetivo con el modelo de alta fidelidad (validación)."""
        return ReducedProblem(self.pair.hifi, self.objective, hessian=hessian)

    def hifi_objective(self, z: np.ndarray) -> float:
        """J(S(z), z)."""
        return self.objective.value(self.pair.hifi_solve(z), z)

    def initial_guess(self) -> np.ndarray:
        if self.z0 is not None:
            return np.array(self.z0, dtype=float, copy=True)
        return np.zeros(self.control_size)

    def state_prior(
        self,
        alpha_u: float,
        beta_u: float,
        *,
        q: Optional[int] = None,
        q_max: int = 200,
        oversample: int = 10,
        rank_tol: float = 1e-3,
        seed: SeedLike = 0,
    ) -> StatePrior:
        return build_state_prior(
            alpha_u,
            beta_u,
            self.state_fem,
            q=q,
            q_max=min(q_max, self.state_size),
            oversample=oversample,
            rank_tol=rank_tol,
            seed=seed,
        )

    def opt_prior(self, alpha_z: float, beta_z: Optional[float] = None) -> OptPrior:
        if self.function_valued:
            if beta_z is None:
                raise BenchmarkError(f"'{self.name}' requiere beta_z")
            return FunctionOptPrior.from_fem(alpha_z, beta_z, self.opt_fem)
        if beta_z is not None:
            raise BenchmarkError(f"'{self.name}' usa un controlador paramétrico y no admite beta_z")
        return ParametricOptPrior.from_basis(alpha_z, self.control_basis, self.state_fem.mass)


def sample_secondary_input(
    wz: OptPrior,
    z_tilde: np.ndarray,
    seed: SeedLike = None,
    relative_magnitude: float = 0.2,
) -> np.ndarray:
    """z₂ = z̃ + c ν con ν ~ N(0, W_z⁻¹) y ‖z₂ − z̃‖_{M_z} = relative_magnitude · ‖z̃‖_{M_z}.

    Si z̃ = 0 la perturbación se normaliza a relative_magnitude en norma M_z.
    """
    z_tilde = as_vector(z_tilde, wz.size, name="z_tilde")
    if not relative_magnitude > 0:
        raise BenchmarkError(f"Magnitud relativa inválida: {relative_magnitude}")
    nu = wz.sample(_rng(seed))
    base = wz.norm(z_tilde) or 1.0
    scale = relative_magnitude * base / wz.norm(nu)
    logger.debug("Entrada secundaria: |z̃|_M=%.3e, escala=%.3e", base, scale)
    return z_tilde + scale * nu
