"""
Problema reducido min_z J(S̃(z), z) con derivadas por adjuntos.

Convención de signos: el modelo define F(u, z) = 0, lineal en z. Entonces
∇_z S̃ = −F_u⁻¹ F_z y su transpuesta −F_zᵀ F_u⁻ᵀ. El objetivo actúa sobre el
estado observado y = O u (identidad salvo en el sistema masa-resorte de alta fidelidad).
"""

from __future__ import annotations

import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from src.core.nonlinear import factorize
from src.utils.validators import as_vector

logger = logging.getLogger("hdsa.optimizer")


class ForwardModel(ABC):
    """Modelo F(u, z) = 0 con jacobianos; el estado observado se obtiene con observe()."""

    state_size: int
    control_size: int

    @abstractmethod
    def solve(self, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def residual(self, u: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def state_jacobian(self, u: np.ndarray, z: np.ndarray) -> sp.spmatrix: ...

    @abstractmethod
    def control_jacobian(self) -> sp.spmatrix: ...

    def second_derivative_apply(self, u: np.ndarray, lam: np.ndarray, du: np.ndarray) -> np.ndarray:
        """Σ_i λ_i ∂²F_i/∂u² du; cero para modelos lineales en u."""
        return np.zeros_like(du)

    @property
    def observed_size(self) -> int:
        return self.state_size

    def observe(self, u: np.ndarray) -> np.ndarray:
        return u

    def observe_adjoint(self, y: np.ndarray) -> np.ndarray:
        return y


class LinearModel(ForwardModel):
    """F(u, z) = u − S z con S densa; problemas cuadráticos de referencia."""

    def __init__(self, S: np.ndarray) -> None:
        self.S = np.asarray(S, dtype=float)
        self.state_size, self.control_size = self.S.shape

    def solve(self, z: np.ndarray) -> np.ndarray:
        return self.S @ z

    def residual(self, u: np.ndarray, z: np.ndarray) -> np.ndarray:
        return u - self.S @ z

    def state_jacobian(self, u: np.ndarray, z: np.ndarray) -> sp.spmatrix:
        return sp.identity(self.state_size, format="csc")

    def control_jacobian(self) -> sp.spmatrix:
        return sp.csr_matrix(-self.S)


@dataclass(frozen=True, eq=False)
class TrackingObjective:
    """J(y, z) = ½ (y − T)ᵀ M_obs (y − T) + (γ/2) zᵀ R z."""

    obs_mass: sp.spmatrix
    target: np.ndarray
    reg: sp.spmatrix | np.ndarray
    gamma: float

    def misfit(self, y: np.ndarray) -> float:
        r = y - self.target
        return 0.5 * float(r @ (self.obs_mass @ r))

    def regularization(self, z: np.ndarray) -> float:
        return 0.5 * self.gamma * float(z @ (self.reg @ z))

    def value(self, y: np.ndarray, z: np.ndarray) -> float:
        return self.misfit(y) + self.regularization(z)

    def grad_y(self, y: np.ndarray) -> np.ndarray:
        return self.obs_mass @ (y - self.target)

    def hess_yy(self, w: np.ndarray) -> np.ndarray:
        return self.obs_mass @ w

    def grad_z(self, z: np.ndarray) -> np.ndarray:
        return self.gamma * (self.reg @ z)

    def hess_zz(self, w: np.ndarray) -> np.ndarray:
        return self.gamma * (self.reg @ w)


@dataclass(frozen=True, eq=False)
class BPieces:
    """Piezas de B en z̃: ∇_z S̃ᵀ-apply, ∇_u J y ∇_{u,u} J-apply (espacio observado)."""

    z_tilde: np.ndarray
    state: np.ndarray
    grad_u: np.ndarray
    jacobian_transpose_apply: Callable[[np.ndarray], np.ndarray]
    hess_uu_apply: Callable[[np.ndarray], np.ndarray]


class _StateRecord:
    def __init__(self, z: np.ndarray, u: np.ndarray, y: np.ndarray, jac: sp.spmatrix) -> None:
        self.z = z
        self.u = u
        self.y = y
        self.lu = factorize(jac, "F_u")
        self.lock = threading.Lock()
        self.adjoint: Optional[np.ndarray] = None

    def solve(self, rhs: np.ndarray, trans: str = "N") -> np.ndarray:
        with self.lock:
            return self.lu.solve(rhs, trans=trans)


class ReducedProblem:
    """Objetivo reducido, gradiente e Hessiano-vector por estados/adjuntos incrementales."""

    def __init__(self, model: ForwardModel, objective: TrackingObjective, hessian: str = "full") -> None:
        if hessian not in ("full", "gauss_newton"):
            raise ValueError(f"Modo de Hessiano desconocido: {hessian}")
        self.model = model
        self.objective = objective
        self.hessian = hessian
        self._records: list[_StateRecord] = []
        self._lock = threading.Lock()
        self._control_jac = sp.csr_matrix(model.control_jacobian())

    @property
    def size(self) -> int:
        return int(self.model.control_size)

    @property
    def gamma(self) -> float:
        return self.objective.gamma

    # ---------------------------
    # Estado (cache de dos elementos: iterado y punto de prueba)
    # ---------------------------
    def state(self, z: np.ndarray) -> _StateRecord:
        z = as_vector(z, self.size, name="z")
        with self._lock:
            for rec in self._records:
                if np.array_equal(rec.z, z):
                    return rec
            u = self.model.solve(z)
            rec = _StateRecord(z.copy(), u, self.model.observe(u), self.model.state_jacobian(u, z))
            self._records = [rec] + self._records[:1]
            return rec

    def _adjoint(self, rec: _StateRecord) -> np.ndarray:
        # λ = −F_u⁻ᵀ Oᵀ ∇_y J
        if rec.adjoint is None:
            rhs = self.model.observe_adjoint(self.objective.grad_y(rec.y))
            rec.adjoint = -rec.solve(rhs, trans="T")
        return rec.adjoint

    def _tangent(self, rec: _StateRecord, v: np.ndarray) -> np.ndarray:
        # û = −F_u⁻¹ F_z v (espacio completo)
        return -rec.solve(self._control_jac @ v)

    def _adjoint_state_apply(self, rec: _StateRecord, w_state: np.ndarray) -> np.ndarray:
        # −F_zᵀ F_u⁻ᵀ w
        return -(self._control_jac.T @ rec.solve(w_state, trans="T"))

    # ---------------------------
    # Operaciones públicas
    # ---------------------------
    def solve_state(self, z: np.ndarray) -> np.ndarray:
        return self.state(z).y

    def objective_value(self, z: np.ndarray) -> float:
        rec = self.state(z)
        return self.objective.value(rec.y, rec.z)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        rec = self.state(z)
        g_y = self.objective.grad_y(rec.y)
        return self.objective.grad_z(rec.z) + self._adjoint_state_apply(rec, self.model.observe_adjoint(g_y))

    def hess_vec(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        rec = self.state(z)
        w = as_vector(w, self.size, name="w")
        du = self._tangent(rec, w)
        rhs = self.model.observe_adjoint(self.objective.hess_yy(self.model.observe(du)))
        if self.hessian == "full":
            rhs = rhs + self.model.second_derivative_apply(rec.u, self._adjoint(rec), du)
        return self.objective.hess_zz(w) + self._adjoint_state_apply(rec, rhs)

    def jacobian_apply(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        rec = self.state(z)
        return self.model.observe(self._tangent(rec, as_vector(v, self.size, name="v")))

    def jacobian_transpose_apply(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        rec = self.state(z)
        w = as_vector(w, self.model.observed_size, name="w")
        return self._adjoint_state_apply(rec, self.model.observe_adjoint(w))

    def b_pieces(self, z_tilde: np.ndarray) -> BPieces:
        """Piezas de B en z̃ ligadas al estado convergido (cada apply es una resolución adjunta)."""
        rec = self.state(z_tilde)

        def jt_apply(w: np.ndarray) -> np.ndarray:
            w = as_vector(w, self.model.observed_size, name="w")
            return self._adjoint_state_apply(rec, self.model.observe_adjoint(w))

        return BPieces(
            z_tilde=rec.z.copy(),
            state=rec.y.copy(),
            grad_u=self.objective.grad_y(rec.y),
            jacobian_transpose_apply=jt_apply,
            hess_uu_apply=self.objective.hess_yy,
        )
