"""
Priors gaussianas con precisión tipo Laplaciano.

    E = βK + M,    W = (1/α) E M⁻¹ E,    W⁻¹ = α E⁻¹ M E⁻¹

- Estado: factorización GSVD truncada E⁻¹ = V Π Vᵀ con VᵀMV = I (rango finder
  aleatorizado + Rayleigh-Ritz), que da W_u⁻¹ = α V Π² Vᵀ y el muestreador
  desplazado (α_d W_u + μ M)⁻¹ = α V ℵ Vᵀ.
- Optimización: campo (dos resoluciones elípticas) o controlador paramétrico
  (Gram denso Φᵀ M Φ).
"""

from __future__ import annotations

import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.core.fem import FemMatrices

logger = logging.getLogger("hdsa.prior")

SeedLike = int | np.random.Generator | None


class PriorError(Exception):
    """Errores de construcción de priors (rango, operador singular, hiperparámetros)."""


def _rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


def _check_dims(x: np.ndarray, size: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape[0] != size:
        raise ValueError(f"{name}: dimensión {arr.shape[0]} distinta de {size}")
    return arr


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    beta: float
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    matrix: sp.csc_matrix = field(init=False)
    _lu: object = field(init=False, repr=False)
    _mass_lu: object = field(init=False, repr=False)
    _guard: threading.Lock = field(init=False, repr=False, default_factory=threading.Lock)

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise PriorError(f"beta debe ser no negativo: {self.beta}")
        E = (self.beta * self.stiffness + self.mass).tocsc()
        try:
            lu = splu(E)
            mass_lu = splu(sp.csc_matrix(self.mass))
        except RuntimeError as exc:  # factor exactamente singular
            raise PriorError(f"Operador elíptico singular: {exc}") from exc
        object.__setattr__(self, "matrix", E)
        object.__setattr__(self, "_lu", lu)
        object.__setattr__(self, "_mass_lu", mass_lu)

    @classmethod
    def from_fem(cls, beta: float, fem: FemMatrices) -> "EllipticOperator":
        return cls(beta=float(beta), mass=fem.mass, stiffness=fem.stiffness)

    @property
    def size(self) -> int:
        return int(self.matrix.shape[0])

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def solve(self, x: np.ndarray) -> np.ndarray:
        with self._guard:
            return self._lu.solve(np.asarray(x, dtype=float))

    def solve_mass(self, x: np.ndarray) -> np.ndarray:
        with self._guard:
            return self._mass_lu.solve(np.asarray(x, dtype=float))


def m_orthonormalize(Y: np.ndarray, mass: sp.spmatrix | np.ndarray) -> np.ndarray:
    """QR euclidiano seguido de Cholesky de ZᵀMZ: columnas M-ortonormales."""
    Z, _ = np.linalg.qr(Y)
    C = Z.T @ (mass @ Z)
    R = sla.cholesky(0.5 * (C + C.T), lower=False)
    return sla.solve_triangular(R, Z.T, trans="T", lower=False).T


@dataclass(frozen=True, eq=False)
class GsvdFactors:
    V: np.ndarray      # (m, q), VᵀMV = I
    pi: np.ndarray     # (q,), descendente

    @property
    def rank(self) -> int:
        return int(self.pi.size)

    def truncate(self, q: int) -> "GsvdFactors":
        return GsvdFactors(V=self.V[:, :q], pi=self.pi[:q])


def truncated_gsvd(
    E: EllipticOperator,
    q: int,
    oversample: int = 10,
    seed: SeedLike = 0,
    power_iterations: int = 1,
) -> GsvdFactors:
    """GSVD truncada de E⁻¹ respecto de M: pares dominantes de E⁻¹M v = π v.

    Si q + oversample supera m se usan m columnas (factorización exacta).
    """
    m = E.size
    if int(q) != q or q < 1:
        raise PriorError(f"Rango inválido: {q}")
    if q > m:
        raise PriorError(f"Rango {q} mayor que la dimensión {m}")
    k = min(int(q) + int(oversample), m)
    rng = _rng(seed)
    omega = rng.standard_normal((m, k))

    Q = m_orthonormalize(E.solve(E.mass @ omega), E.mass)
    for _ in range(power_iterations):
        Q = m_orthonormalize(E.solve(E.mass @ Q), E.mass)
    MQ = E.mass @ Q
    T = MQ.T @ E.solve(MQ)
    vals, vecs = np.linalg.eigh(0.5 * (T + T.T))
    order = np.argsort(vals, kind="stable")[::-1][: int(q)]
    pi = vals[order]
    if not np.all(pi > 0):
        raise PriorError("Valores singulares no positivos: operador elíptico singular")
    V = Q @ vecs[:, order]
    logger.debug("GSVD truncada: q=%d, muestras=%d, pi_1=%.3e, pi_q=%.3e", q, k, pi[0], pi[-1])
    return GsvdFactors(V=V, pi=pi)


def choose_rank(pi: np.ndarray, tol: float = 1e-3) -> int:
    """Menor q con π_{q+1}/π_1 < tol (o todos si no decae lo suficiente)."""
    ratios = np.asarray(pi) / pi[0]
    below = np.flatnonzero(ratios < tol)
    if below.size == 0:
        logger.warning("El espectro no decae bajo %.1e con %d valores; se usan todos", tol, ratios.size)
        return int(ratios.size)
    return max(1, int(below[0]))


@dataclass(frozen=True, eq=False)
class StatePrior:
    """Prior del estado N(0, W_u⁻¹) representada por su GSVD truncada."""

    alpha: float
    operator: EllipticOperator
    factors: GsvdFactors

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise PriorError(f"alpha_u debe ser positivo: {self.alpha}")

    @property
    def V(self) -> np.ndarray:
        return self.factors.V

    @property
    def pi(self) -> np.ndarray:
        return self.factors.pi

    @property
    def rank(self) -> int:
        return self.factors.rank

    @property
    def size(self) -> int:
        return self.operator.size

    @property
    def mass(self) -> sp.csr_matrix:
        return self.operator.mass

    def apply_inv(self, x: np.ndarray) -> np.ndarray:
        """W_u⁻¹ x = α V Π² Vᵀ x."""
        x = _check_dims(x, self.size, "apply_inv")
        coeff = self.V.T @ x
        scale = self.pi**2 if coeff.ndim == 1 else (self.pi**2)[:, None]
        return self.alpha * (self.V @ (scale * coeff))

    def apply_precision(self, x: np.ndarray) -> np.ndarray:
        """W_u x = (1/α) E M⁻¹ E x (sin truncar)."""
        x = _check_dims(x, self.size, "apply_precision")
        E = self.operator
        return E.apply(E.solve_mass(E.apply(x))) / self.alpha

    def shifted_diagonal(self, alpha_d: float, mu: float) -> np.ndarray:
        """ℵ_jj = π_j² / (α_d + α μ π_j²)."""
        if not alpha_d > 0 or mu < 0:
            raise PriorError(f"Desplazamiento inválido: alpha_d={alpha_d}, mu={mu}")
        p2 = self.pi**2
        return p2 / (alpha_d + self.alpha * mu * p2)

    def apply_shifted_inv(self, alpha_d: float, mu: float, x: np.ndarray) -> np.ndarray:
        """(α_d W_u + μ M)⁻¹ x = α V ℵ Vᵀ x."""
        x = _check_dims(x, self.size, "apply_shifted_inv")
        aleph = self.shifted_diagonal(alpha_d, mu)
        coeff = self.V.T @ x
        scale = aleph if coeff.ndim == 1 else aleph[:, None]
        return self.alpha * (self.V @ (scale * coeff))

    def sample(self, seed: SeedLike = None) -> np.ndarray:
        """√α V Π ω, ω ~ N(0, I_q)."""
        omega = _rng(seed).standard_normal(self.rank)
        return np.sqrt(self.alpha) * (self.V @ (self.pi * omega))

    def sample_shifted(self, alpha_d: float, mu: float, seed: SeedLike = None) -> np.ndarray:
        """Muestra de N(0, (α_d W_u + μ M)⁻¹) = √α V ℵ^{1/2} ω."""
        aleph = self.shifted_diagonal(alpha_d, mu)
        omega = _rng(seed).standard_normal(self.rank)
        return np.sqrt(self.alpha) * (self.V @ (np.sqrt(aleph) * omega))


def build_state_prior(
    alpha: float,
    beta: float,
    fem: FemMatrices,
    *,
    q: Optional[int] = None,
    q_max: int = 200,
    oversample: int = 10,
    rank_tol: float = 1e-3,
    seed: SeedLike = 0,
) -> StatePrior:
    """Construye la prior del estado; sin q explícito aplica la regla π_{q+1}/π_1 < rank_tol."""
    E = EllipticOperator.from_fem(beta, fem)
    if q is not None:
        factors = truncated_gsvd(E, q, oversample, seed)
    else:
        factors = truncated_gsvd(E, min(q_max, E.size), oversample, seed)
        factors = factors.truncate(choose_rank(factors.pi, rank_tol))
    logger.info("Prior de estado: alpha_u=%g, beta_u=%g, rango q=%d de m=%d", alpha, beta, factors.rank, E.size)
    return StatePrior(alpha=float(alpha), operator=E, factors=factors)


# ---------------------------
# Prior de la variable de optimización
# ---------------------------
class OptPrior(ABC):
    """Interfaz común: W_z, W_z⁻¹, M_z y muestreo de N(0, W_z⁻¹)."""

    alpha: float

    @property
    @abstractmethod
    def size(self) -> int: ...

    @property
    @abstractmethod
    def mass(self): ...

    @abstractmethod
    def apply(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def apply_inv(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def solve_mass(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def sample(self, seed: SeedLike = None) -> np.ndarray: ...

    def norm(self, x: np.ndarray) -> float:
        """Norma inducida por M_z."""
        x = np.asarray(x, dtype=float)
        return float(np.sqrt(max(x @ (self.mass @ x), 0.0)))


class FunctionOptPrior(OptPrior):
    """W_z = (1/α) E M⁻¹ E sobre un espacio de funciones FEM."""

    def __init__(self, alpha: float, operator: EllipticOperator, mass_sqrt: sp.spmatrix) -> None:
        if not alpha > 0:
            raise PriorError(f"alpha_z debe ser positivo: {alpha}")
        self.alpha = float(alpha)
        self.operator = operator
        self.mass_sqrt = sp.csr_matrix(mass_sqrt)

    @classmethod
    def from_fem(cls, alpha: float, beta: float, fem: FemMatrices) -> "FunctionOptPrior":
        return cls(alpha, EllipticOperator.from_fem(beta, fem), fem.mass_sqrt)

    @property
    def size(self) -> int:
        return self.operator.size

    @property
    def mass(self) -> sp.csr_matrix:
        return self.operator.mass

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = _check_dims(x, self.size, "W_z")
        E = self.operator
        return E.apply(E.solve_mass(E.apply(x))) / self.alpha

    def apply_inv(self, x: np.ndarray) -> np.ndarray:
        x = _check_dims(x, self.size, "W_z⁻¹")
        E = self.operator
        return self.alpha * E.solve(E.mass @ E.solve(x))

    def solve_mass(self, x: np.ndarray) -> np.ndarray:
        return self.operator.solve_mass(x)

    def sample(self, seed: SeedLike = None) -> np.ndarray:
        """√α E⁻¹ Gᵀ ω con GᵀG = M."""
        omega = _rng(seed).standard_normal(self.mass_sqrt.shape[0])
        return np.sqrt(self.alpha) * self.operator.solve(self.mass_sqrt.T @ omega)


class ParametricOptPrior(OptPrior):
    """W_z = (1/α) Φᵀ M Φ para controladores con base fija; M_z es la identidad."""

    def __init__(self, alpha: float, gram: np.ndarray) -> None:
        if not alpha > 0:
            raise PriorError(f"alpha_z debe ser positivo: {alpha}")
        gram = np.asarray(gram, dtype=float)
        self.alpha = float(alpha)
        self.gram = 0.5 * (gram + gram.T)
        try:
            self._chol = sla.cholesky(self.gram, lower=True)
        except sla.LinAlgError as exc:
            raise PriorError("Matriz de Gram no definida positiva") from exc

    @classmethod
    def from_basis(cls, alpha: float, basis: sp.spmatrix | np.ndarray, mass: sp.spmatrix) -> "ParametricOptPrior":
        B = basis.toarray() if sp.issparse(basis) else np.asarray(basis)
        return cls(alpha, B.T @ (mass @ B))

    @property
    def size(self) -> int:
        return int(self.gram.shape[0])

    @property
    def mass(self) -> np.ndarray:
        return np.eye(self.size)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.gram @ _check_dims(x, self.size, "W_z") / self.alpha

    def apply_inv(self, x: np.ndarray) -> np.ndarray:
        x = _check_dims(x, self.size, "W_z⁻¹")
        return self.alpha * sla.cho_solve((self._chol, True), x)

    def solve_mass(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=float, copy=True)

    def sample(self, seed: SeedLike = None) -> np.ndarray:
        omega = _rng(seed).standard_normal(self.size)
        return np.sqrt(self.alpha) * sla.solve_triangular(self._chol, omega, lower=True, trans="T")
