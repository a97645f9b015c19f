"""
Difusión-reacción 1D con fuente distribuida:

    −κ u'' + c(x) u² = z  en (0, 1),   κ u' = 0 en {0, 1}

Baja fidelidad: c ≡ 1. Alta fidelidad: c(x) = 1 + A sin(2πx) (A = 0.7).
Objetivo: ½∫(u − T)² + (γ/2)∫z² con T(x) = 20(x + 0.5)(1.3 − x).
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from src.benchmarks.base import Benchmark, BenchmarkError, SolutionOperatorPair
from src.core.fem import QuadratureRule, assemble, quadrature
from src.core.mesh import build_interval_mesh
from src.core.nonlinear import ForwardSolveError, newton_solve
from src.core.problem import ForwardModel, TrackingObjective
from src.utils.validators import as_vector

logger = logging.getLogger("hdsa.benchmarks")


def target_state(x: np.ndarray) -> np.ndarray:
    return 20.0 * (x + 0.5) * (1.3 - x)


class DiffusionReactionModel(ForwardModel):
    """Residuo F(u, z) = κ K u + ∫ c u² φ − M z con cuadratura de Gauss de 3 puntos."""

    def __init__(self, kappa: float, stiffness: sp.spmatrix, mass: sp.spmatrix, quad: QuadratureRule,
                 coefficient: np.ndarray) -> None:
        if not kappa > 0:
            raise BenchmarkError(f"kappa debe ser positivo: {kappa}")
        self.kappa = float(kappa)
        self.stiffness = sp.csr_matrix(stiffness)
        self.mass = sp.csr_matrix(mass)
        self.quad = quad
        self.coefficient = np.asarray(coefficient, dtype=float)   # c en los puntos de cuadratura
        self.state_size = self.control_size = int(self.mass.shape[0])
        self._control_jac = (-self.mass).tocsr()

    def _reaction(self, u: np.ndarray) -> np.ndarray:
        uq = self.quad.basis @ u
        return self.quad.project(self.coefficient * uq * uq)

    def residual(self, u: np.ndarray, z: np.ndarray) -> np.ndarray:
        return self.kappa * (self.stiffness @ u) + self._reaction(u) - self.mass @ z

    def state_jacobian(self, u: np.ndarray, z: np.ndarray | None = None) -> sp.csr_matrix:
        uq = self.quad.basis @ u
        return (self.kappa * self.stiffness + self.quad.weighted_mass(2.0 * self.coefficient * uq)).tocsr()

    def control_jacobian(self) -> sp.csr_matrix:
        return self._control_jac

    def second_derivative_apply(self, u: np.ndarray, lam: np.ndarray, du: np.ndarray) -> np.ndarray:
        lam_q = self.quad.basis @ lam
        return self.quad.weighted_mass(2.0 * self.coefficient * lam_q) @ du

    def initial_guess(self, z: np.ndarray) -> np.ndarray:
        # u² ≈ z en promedio: constante positiva para evitar el jacobiano singular (Neumann puro) en u = 0
        ones = np.ones(self.state_size)
        mean_z = float(ones @ (self.mass @ z)) / float(ones @ (self.mass @ ones))
        return np.full(self.state_size, np.sqrt(max(mean_z, 0.0)) + 1e-3)

    def solve(self, z: np.ndarray) -> np.ndarray:
        z = as_vector(z, self.control_size, name="z")
        zero = np.zeros(self.state_size)
        if np.linalg.norm(self.residual(zero, z)) <= 1e-10:
            return zero
        try:
            result = newton_solve(lambda u: self.residual(u, z), lambda u: self.state_jacobian(u), self.initial_guess(z))
        except ForwardSolveError:
            logger.error("Newton difusión-reacción no converge (κ=%g, ‖z‖=%.3e)", self.kappa, np.linalg.norm(z))
            raise
        return result.solution


def build_diffusion_reaction(mesh: dict, physics: dict) -> Benchmark:
    n_elems = int(mesh.get("n_elems", 100))
    kappa = float(physics.get("kappa", 0.1))
    gamma = float(physics.get("gamma", 1e-4))
    amplitude = float(physics.get("amplitude", 0.7))
    if not abs(amplitude) < 1:
        raise BenchmarkError(f"La amplitud de la reacción debe cumplir |A| < 1: {amplitude}")

    grid = build_interval_mesh(0.0, 1.0, n_elems)
    fem = assemble(grid)
    quad = quadrature(grid)
    xq = quad.points[:, 0]
    lofi = DiffusionReactionModel(kappa, fem.stiffness, fem.mass, quad, np.ones_like(xq))
    hifi = DiffusionReactionModel(kappa, fem.stiffness, fem.mass, quad, 1.0 + amplitude * np.sin(2.0 * np.pi * xq))

    x = grid.nodes[:, 0]
    # control que reproduce T exactamente con el modelo de baja fidelidad
    T = target_state(x)
    z0 = spsolve(fem.mass.tocsc(), lofi.residual(T, np.zeros_like(T)))
    objective = TrackingObjective(obs_mass=fem.mass, target=T, reg=fem.mass, gamma=gamma)
    logger.info("Benchmark difusión-reacción: %d elementos, κ=%g, γ=%g", n_elems, kappa, gamma)
    return Benchmark(
        name="diffusion_reaction",
        pair=SolutionOperatorPair(hifi=hifi, lofi=lofi),
        objective=objective,
        state_fem=fem,
        state_coords=x[:, None],
        state_columns=("x",),
        control_coords=x[:, None],
        control_columns=("x",),
        opt_fem=fem,
        z0=z0,
        settings={"n_elems": n_elems, "kappa": kappa, "gamma": gamma, "amplitude": amplitude},
    )
