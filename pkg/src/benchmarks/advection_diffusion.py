"""
Advección-difusión estacionaria en Ω = (−1, 1)² con fuente paramétrica:

    −κ Δu + v(u)·∇u = Σ_j z_j φ_j,   u = 0 en x = −1 ó y = −1,   flujo difusivo nulo en el resto

Baja fidelidad: v = (1, 1) (linealización en u = 1). Alta fidelidad: v = (u, u).
φ_j(x, y) = exp(−30((x − x_j)² + (y − y_j)²)) con centros en una grilla 5×5 sobre [−0.8, 0]².
Objetivo: ½∫_{Ω_T}(u − 4)² + (γ/2)∫ f(z)², Ω_T = [0.6, 0.7] × [0.8, 0.9].
"""

from __future__ import annotations

import logging
import threading

import numpy as np
import scipy.sparse as sp

from src.benchmarks.base import Benchmark, BenchmarkError, SolutionOperatorPair
from src.core.fem import QuadratureRule, assemble, quadrature, zero_rows
from src.core.mesh import DIRICHLET, build_rect_mesh
from src.core.nonlinear import ForwardSolveError, factorize, newton_solve
from src.core.problem import ForwardModel, TrackingObjective
from src.utils.validators import as_vector

logger = logging.getLogger("hdsa.benchmarks")

SOURCE_EXPONENT = 30.0
SOURCE_GRID = 5
SOURCE_BOX = (-0.8, 0.0)
TARGET_BOX = ((0.6, 0.7), (0.8, 0.9))
TARGET_VALUE = 4.0


def source_centers() -> np.ndarray:
    c = np.linspace(SOURCE_BOX[0], SOURCE_BOX[1], SOURCE_GRID)
    X, Y = np.meshgrid(c, c)
    return np.column_stack([X.ravel(), Y.ravel()])


def source_basis(points: np.ndarray) -> np.ndarray:
    """Φ[i, j] = φ_j(p_i)."""
    centers = source_centers()
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-SOURCE_EXPONENT * d2)


class AdvectionDiffusionModel(ForwardModel):
    """F(u, z) = D(κ K u + C(u) u − M Φ z) + (I − D) u, con D la máscara de nodos libres."""

    def __init__(
        self,
        kappa: float,
        stiffness: sp.spmatrix,
        mass: sp.spmatrix,
        quad: QuadratureRule,
        basis: np.ndarray,
        dirichlet: np.ndarray,
        velocity: str,
    ) -> None:
        if not kappa > 0:
            raise BenchmarkError(f"kappa debe ser positivo: {kappa}")
        if velocity not in ("constant", "state"):
            raise BenchmarkError(f"Modo de velocidad desconocido: {velocity}")
        self.kappa = float(kappa)
        self.velocity = velocity
        self.quad = quad
        self.dirichlet = np.asarray(dirichlet, dtype=int)
        self.state_size = int(mass.shape[0])
        self.control_size = int(basis.shape[1])
        self._free = np.ones(self.state_size)
        self._free[self.dirichlet] = 0.0
        self._bc = sp.diags(1.0 - self._free)
        # derivada direccional (∂x + ∂y) en los puntos de cuadratura
        self._dirderiv = (quad.gradients[0] + quad.gradients[1]).tocsr()
        W = sp.diags(quad.weights)
        self._diffusion = (self.kappa * stiffness).tocsr()
        self._advection_const = (quad.basis.T @ W @ self._dirderiv).tocsr()
        self._control_jac = zero_rows(-(mass @ sp.csr_matrix(basis)), self.dirichlet)
        self._lu = None
        self._guard = threading.Lock()

    def _operator(self, u: np.ndarray) -> np.ndarray:
        if self.velocity == "constant":
            return self._diffusion @ u + self._advection_const @ u
        uq = self.quad.basis @ u
        return self._diffusion @ u + self.quad.project(uq * (self._dirderiv @ u))

    def residual(self, u: np.ndarray, z: np.ndarray) -> np.ndarray:
        interior = self._operator(u) + self._control_jac @ z
        return self._free * interior + (1.0 - self._free) * u

    def state_jacobian(self, u: np.ndarray, z: np.ndarray | None = None) -> sp.csr_matrix:
        if self.velocity == "constant":
            J = self._diffusion + self._advection_const
        else:
            uq = self.quad.basis @ u
            su = self._dirderiv @ u
            W = self.quad.weights
            J = (
                self._diffusion
                + self.quad.basis.T @ sp.diags(W * su) @ self.quad.basis
                + self.quad.basis.T @ sp.diags(W * uq) @ self._dirderiv
            )
        return (zero_rows(J, self.dirichlet) + self._bc).tocsr()

    def control_jacobian(self) -> sp.csr_matrix:
        return self._control_jac

    def second_derivative_apply(self, u: np.ndarray, lam: np.ndarray, du: np.ndarray) -> np.ndarray:
        if self.velocity == "constant":
            return np.zeros_like(du)
        # las filas Dirichlet del residuo son lineales: λ restringido a nodos libres
        lam_q = self.quad.basis @ (self._free * lam)
        W = self.quad.weights
        return (
            self.quad.basis.T @ (W * lam_q * (self._dirderiv @ du))
            + self._dirderiv.T @ (W * lam_q * (self.quad.basis @ du))
        )

    def solve_linearized(self, z: np.ndarray) -> np.ndarray:
        """Solución con v = (1, 1); punto de partida de Newton para v = (u, u)."""
        with self._guard:
            if self._lu is None:
                lin = zero_rows(self._diffusion + self._advection_const, self.dirichlet) + self._bc
                self._lu = factorize(lin, "advección-difusión")
            return self._lu.solve(-(self._control_jac @ z))

    def solve(self, z: np.ndarray) -> np.ndarray:
        z = as_vector(z, self.control_size, name="z")
        if self.velocity == "constant":
            return self.solve_linearized(z)
        try:
            result = newton_solve(lambda u: self.residual(u, z), self.state_jacobian, self.solve_linearized(z))
        except ForwardSolveError:
            logger.error("Newton advección-difusión no converge (κ=%g, ‖z‖=%.3e)", self.kappa, np.linalg.norm(z))
            raise
        return result.solution


def build_advection_diffusion(mesh: dict, physics: dict, *, hifi_velocity: str = "state") -> Benchmark:
    nx, ny = int(mesh.get("nx", 32)), int(mesh.get("ny", 32))
    kappa = float(physics.get("kappa", 0.25))
    gamma = float(physics.get("gamma", 1e-7))

    grid = build_rect_mesh((-1.0, 1.0), (-1.0, 1.0), nx, ny)
    fem = assemble(grid)
    quad = quadrature(grid)
    basis = source_basis(grid.nodes)
    dirichlet = grid.boundary_nodes(DIRICHLET)
    lofi = AdvectionDiffusionModel(kappa, fem.stiffness, fem.mass, quad, basis, dirichlet, "constant")
    hifi = AdvectionDiffusionModel(kappa, fem.stiffness, fem.mass, quad, basis, dirichlet, hifi_velocity)

    (x0, x1), (y0, y1) = TARGET_BOX
    px, py = quad.points[:, 0], quad.points[:, 1]
    inside = ((px >= x0) & (px <= x1) & (py >= y0) & (py <= y1)).astype(float)
    if not inside.any():
        raise BenchmarkError(f"La malla {nx}x{ny} no tiene puntos de cuadratura en la región objetivo")
    obs_mass = quad.weighted_mass(inside)
    gram = basis.T @ (fem.mass @ basis)
    objective = TrackingObjective(
        obs_mass=obs_mass, target=np.full(grid.n_nodes, TARGET_VALUE), reg=gram, gamma=gamma
    )

    centers = source_centers()
    logger.info("Benchmark advección-difusión: malla %dx%d, κ=%g, γ=%g", nx, ny, kappa, gamma)
    return Benchmark(
        name="advection_diffusion",
        pair=SolutionOperatorPair(hifi=hifi, lofi=lofi),
        objective=objective,
        state_fem=fem,
        state_coords=grid.nodes,
        state_columns=("x", "y"),
        control_coords=np.column_stack([np.arange(centers.shape[0]), centers]),
        control_columns=("index", "x_center", "y_center"),
        control_basis=basis,
        settings={
            "nx": nx, "ny": ny, "kappa": kappa, "gamma": gamma, "hifi_velocity": hifi_velocity,
            "target_quadrature_points": int(inside.sum()),
        },
    )
