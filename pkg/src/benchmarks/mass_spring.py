"""
Sistema masa-resorte forzado en [0, horizon]:

    alta fidelidad:  m₁x₁'' = k₂x₂ − (k₁+k₂)x₁ + z(t),   m₂x₂'' = k₂x₁ − (k₂+k₃)x₂
    baja fidelidad:  m₁x₁'' = −(k₁+k₂)x₁ + z(t)          (bloque 2 inmóvil)

Integración por trapecio implícito (Crank-Nicolson) de la forma de primer orden
y' = A y + b z. El estado se ordena por componente: u[c·(K+1) + k] = y_c(t_k) con
componentes (x₁, x₁', x₂, x₂'). Ambos modelos observan (x₁, x₁') en toda la malla temporal.
"""

from __future__ import annotations

import logging
import threading
from typing import Optional

import numpy as np
import scipy.sparse as sp

from src.benchmarks.base import Benchmark, BenchmarkError, SolutionOperatorPair
from src.core.fem import assemble, block_diag_fem
from src.core.mesh import build_interval_mesh
from src.core.nonlinear import factorize
from src.core.problem import ForwardModel, TrackingObjective
from src.utils.validators import as_vector

logger = logging.getLogger("hdsa.benchmarks")

OBSERVED_COMPONENTS = 2


def spring_matrix(k1: float, k2: float, k3: float) -> np.ndarray:
    return np.array([[k1 + k2, -k2], [-k2, k2 + k3]])


class SpringChainModel(ForwardModel):
    """Cadena de masas con matriz de resortes Ks; la fuerza z(t) actúa sobre la primera masa."""

    def __init__(
        self,
        masses: np.ndarray,
        springs: np.ndarray,
        n_steps: int,
        horizon: float,
        initial_state: Optional[np.ndarray] = None,
    ) -> None:
        self.masses = np.atleast_1d(np.asarray(masses, dtype=float))
        self.springs = np.atleast_2d(np.asarray(springs, dtype=float))
        if np.any(self.masses <= 0):
            raise BenchmarkError(f"Masas no positivas: {self.masses}")
        if n_steps < 1 or not horizon > 0:
            raise BenchmarkError(f"Discretización temporal inválida: n_steps={n_steps}, horizon={horizon}")
        d = self.masses.size
        self.n_steps = int(n_steps)
        self.n_times = self.n_steps + 1
        self.dt = float(horizon) / self.n_steps
        self.n_components = 2 * d
        self.state_size = self.n_components * self.n_times
        self.control_size = self.n_times

        # y = (x₁, v₁, x₂, v₂, ...)
        A = np.zeros((2 * d, 2 * d))
        b = np.zeros(2 * d)
        for i in range(d):
            A[2 * i, 2 * i + 1] = 1.0
            for j in range(d):
                A[2 * i + 1, 2 * j] = -self.springs[i, j] / self.masses[i]
        b[1] = 1.0 / self.masses[0]
        self.A, self.b = A, b

        if initial_state is None:
            initial_state = np.zeros(2 * d)
        self.initial_state = as_vector(initial_state, 2 * d, name="initial_state")

        n = self.n_times
        first = sp.csr_matrix(([1.0], ([0], [0])), shape=(n, n))
        later = sp.diags(np.r_[0.0, np.ones(n - 1)])
        previous = sp.diags(np.ones(n - 1), -1)
        half = 0.5 * self.dt
        I = np.eye(2 * d)
        self._jac = (
            sp.kron(sp.identity(2 * d), first)
            + sp.kron(I - half * A, later)
            - sp.kron(I + half * A, previous)
        ).tocsc()
        self._control_jac = (-half * sp.kron(b[:, None], later + previous)).tocsr()
        self._rhs0 = np.kron(self.initial_state, np.r_[1.0, np.zeros(n - 1)])
        self._lu = factorize(self._jac, "Crank-Nicolson")
        self._guard = threading.Lock()

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_times) * self.dt

    @property
    def observed_size(self) -> int:
        return OBSERVED_COMPONENTS * self.n_times

    def observe(self, u: np.ndarray) -> np.ndarray:
        return u[: self.observed_size]

    def observe_adjoint(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros(self.state_size)
        out[: self.observed_size] = y
        return out

    def component(self, u: np.ndarray, c: int) -> np.ndarray:
        return u[c * self.n_times:(c + 1) * self.n_times]

    def residual(self, u: np.ndarray, z: np.ndarray) -> np.ndarray:
        return self._jac @ u + self._control_jac @ z - self._rhs0

    def state_jacobian(self, u: np.ndarray, z: np.ndarray) -> sp.csc_matrix:
        return self._jac

    def control_jacobian(self) -> sp.csr_matrix:
        return self._control_jac

    def solve(self, z: np.ndarray) -> np.ndarray:
        z = as_vector(z, self.control_size, name="z")
        with self._guard:
            return self._lu.solve(self._rhs0 - self._control_jac @ z)

    def energy(self, u: np.ndarray) -> np.ndarray:
        """½ Σ mᵢ vᵢ² + ½ xᵀ Ks x en cada instante."""
        d = self.masses.size
        X = np.stack([self.component(u, 2 * i) for i in range(d)])
        V = np.stack([self.component(u, 2 * i + 1) for i in range(d)])
        kinetic = 0.5 * np.sum(self.masses[:, None] * V * V, axis=0)
        potential = 0.5 * np.einsum("it,ij,jt->t", X, self.springs, X)
        return kinetic + potential


def build_mass_spring(mesh: dict, physics: dict) -> Benchmark:
    n_steps = int(mesh.get("n_steps", 200))
    m1, m2 = float(physics.get("m1", 1.0)), float(physics.get("m2", 10.0))
    k1, k2, k3 = (float(physics.get(k, 1.0)) for k in ("k1", "k2", "k3"))
    horizon = float(physics.get("horizon", 10.0))
    gamma = float(physics.get("gamma", 1e-6))
    if min(k1, k2, k3) < 0:
        raise BenchmarkError(f"Constantes de resorte negativas: k1={k1}, k2={k2}, k3={k3}")

    hifi = SpringChainModel(np.array([m1, m2]), spring_matrix(k1, k2, k3), n_steps, horizon)
    lofi = SpringChainModel(np.array([m1]), np.array([[k1 + k2]]), n_steps, horizon)

    t = lofi.times
    grid = build_interval_mesh(0.0, horizon, n_steps)
    fem_t = assemble(grid)
    state_fem = block_diag_fem(fem_t, fem_t)
    # el objetivo solo mide x₁; la velocidad entra con peso cero
    obs_mass = sp.block_diag([fem_t.mass, sp.csr_matrix(fem_t.mass.shape)], format="csr")
    target = np.concatenate([5.0 * t**2, 10.0 * t])
    objective = TrackingObjective(obs_mass=obs_mass, target=target, reg=fem_t.mass, gamma=gamma)

    coords = np.column_stack([np.repeat([0.0, 1.0], t.size), np.tile(t, 2)])
    logger.info("Benchmark masa-resorte: %d pasos, dt=%g, γ=%g", n_steps, lofi.dt, gamma)
    return Benchmark(
        name="mass_spring",
        pair=SolutionOperatorPair(hifi=hifi, lofi=lofi),
        objective=objective,
        state_fem=state_fem,
        state_coords=coords,
        state_columns=("component", "t"),
        control_coords=t[:, None],
        control_columns=("t",),
        opt_fem=fem_t,
        settings={
            "n_steps": n_steps, "dt": lofi.dt, "horizon": horizon, "gamma": gamma,
            "m1": m1, "m2": m2, "k1": k1, "k2": k2, "k3": k3, "integrator": "crank-nicolson",
        },
    )
