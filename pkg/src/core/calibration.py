"""
Calibración bayesiana de la discrepancia afín δ(z, θ) = θ₀ + (I ⊗ zᵀM_z) θ₁.

Nada se materializa en ℝᵖ: la media y las muestras del posterior son listas de
términos de Kronecker (a, u, M_z w) que representan el bloque (a·u ; u ⊗ w).
Con esa representación

    δ(z) = Σ (a + (M_z w)ᵀ z) u

y todos los costos quedan en O(N) resoluciones de las priors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as sla

from src.core.prior import OptPrior, SeedLike, StatePrior, _rng
from src.utils.validators import as_matrix, as_vector

logger = logging.getLogger("hdsa.calibration")

# Tolerancia relativa para decidir dependencia lineal de las entradas
RANK_TOL = 1e-10


class CalibrationError(Exception):
    """Datos de entrenamiento inválidos (dependencia lineal, z₁ ≠ z̃, dimensiones)."""

    def __init__(self, message: str, column: int | None = None) -> None:
        super().__init__(message)
        self.column = column


# ---------------------------
# Datos de entrenamiento
# ---------------------------
@dataclass(frozen=True, eq=False)
class TrainingData:
    """Entradas Z (n×N) y discrepancias D (m×N) con d_ℓ = S(z_ℓ) − S̃(z_ℓ)."""

    Z: np.ndarray
    D: np.ndarray
    z_tilde: np.ndarray

    def __post_init__(self) -> None:
        Z = as_matrix(self.Z, name="Z")
        D = as_matrix(self.D, name="D")
        z_tilde = as_vector(self.z_tilde, Z.shape[0], name="z_tilde")
        if Z.shape[1] < 1:
            raise CalibrationError("Se requiere al menos una evaluación de alta fidelidad")
        if D.shape[1] != Z.shape[1]:
            raise CalibrationError(f"Z tiene {Z.shape[1]} columnas y D {D.shape[1]}")
        scale = max(1.0, float(np.linalg.norm(z_tilde)))
        if float(np.linalg.norm(Z[:, 0] - z_tilde)) > 1e-12 * scale:
            raise CalibrationError("La primera entrada debe ser z̃ (datos en el óptimo nominal)", column=0)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "z_tilde", z_tilde)

    @classmethod
    def from_columns(cls, inputs: list[np.ndarray], discrepancies: list[np.ndarray]) -> "TrainingData":
        Z = np.column_stack(inputs)
        return cls(Z=Z, D=np.column_stack(discrepancies), z_tilde=Z[:, 0].copy())

    @property
    def n_training(self) -> int:
        return int(self.Z.shape[1])

    @property
    def state_size(self) -> int:
        return int(self.D.shape[0])

    @property
    def opt_size(self) -> int:
        return int(self.Z.shape[0])

    @property
    def centered(self) -> np.ndarray:
        """Z − z̃ eᵀ."""
        return self.Z - self.z_tilde[:, None]


def _apply_columns(fn, X: np.ndarray) -> np.ndarray:
    if X.shape[1] == 0:
        return np.zeros_like(X)
    return np.column_stack([fn(X[:, j]) for j in range(X.shape[1])])


def _dependent_column(Zc: np.ndarray) -> int:
    """Índice (en Z) de la primera columna linealmente dependiente de las anteriores."""
    scale = max(1.0, float(np.linalg.norm(Zc)))
    for k in range(1, Zc.shape[1] + 1):
        sv = np.linalg.svd(Zc[:, :k], compute_uv=False)
        if sv[-1] <= RANK_TOL * scale:
            return k
    return Zc.shape[1]


# ---------------------------
# Espectro de G
# ---------------------------
@dataclass(frozen=True, eq=False)
class GSpectrum:
    data: TrainingData
    G: np.ndarray
    mu: np.ndarray              # (N,)
    g: np.ndarray               # (N, N), columnas g_i con eᵀg_i ≥ 0
    Y: np.ndarray               # (n, N), y_i = Z g_i − (eᵀg_i) z̃
    Wzinv_Y: np.ndarray         # (n, N)
    s: np.ndarray               # (N,)
    e_g: np.ndarray             # (N,), eᵀg_i
    Wzinv_dZ: np.ndarray        # (n, N), W_z⁻¹(z_ℓ − z̃)
    Wzinv_ztilde: np.ndarray    # (n,)
    _zc_factor: Any = field(default=None, repr=False)

    @property
    def n_training(self) -> int:
        return self.data.n_training

    @property
    def z_tilde(self) -> np.ndarray:
        return self.data.z_tilde

    @property
    def Zc(self) -> np.ndarray:
        """(z₂ − z̃ ⋯ z_N − z̃)."""
        return self.data.centered[:, 1:]

    @property
    def Wzinv_Zc(self) -> np.ndarray:
        return self.Wzinv_dZ[:, 1:]

    def zc_solve(self, rhs: np.ndarray) -> np.ndarray:
        """(Z_cᵀ W_z⁻¹ Z_c)⁻¹ rhs; vacío para N = 1."""
        if self._zc_factor is None:
            return np.zeros((0,) + np.shape(rhs)[1:])
        return sla.cho_solve(self._zc_factor, rhs)


def build_spectrum(data: TrainingData, wz: OptPrior) -> GSpectrum:
    """G = eeᵀ + (Z − z̃eᵀ)ᵀ W_z⁻¹ (Z − z̃eᵀ), su espectro y los vectores y_i, s_i."""
    if wz.size != data.opt_size:
        raise ValueError(f"Prior de optimización de dimensión {wz.size}, datos de dimensión {data.opt_size}")
    N = data.n_training
    dZ = data.centered
    Wzinv_dZ = np.zeros_like(dZ)
    if N > 1:
        Wzinv_dZ[:, 1:] = _apply_columns(wz.apply_inv, dZ[:, 1:])

    zc_factor = None
    if N > 1:
        Czc = dZ[:, 1:].T @ Wzinv_dZ[:, 1:]
        try:
            zc_factor = sla.cho_factor(0.5 * (Czc + Czc.T), lower=True)
        except sla.LinAlgError:
            col = _dependent_column(dZ[:, 1:])
            raise CalibrationError(
                f"Entradas linealmente dependientes: la columna {col} depende de las anteriores", column=col
            ) from None
        # una columna casi dependiente pasa Cholesky pero deja G mal condicionada
        diag = np.sqrt(np.diag(Czc))
        if np.min(np.linalg.eigvalsh(Czc / np.outer(diag, diag))) <= RANK_TOL:
            col = _dependent_column(dZ[:, 1:])
            raise CalibrationError(
                f"Entradas linealmente dependientes: la columna {col} depende de las anteriores", column=col
            )

    e = np.ones(N)
    G = np.outer(e, e) + dZ.T @ Wzinv_dZ
    G = 0.5 * (G + G.T)
    mu, g = np.linalg.eigh(G)
    order = np.argsort(mu, kind="stable")[::-1]
    mu, g = mu[order], g[:, order]
    e_g = g.sum(axis=0)
    flip = e_g < 0
    g[:, flip] *= -1.0
    e_g = np.abs(e_g)
    if not np.all(mu > 0):
        raise CalibrationError(f"G no es definida positiva (mu_min={mu.min():.3e})")

    Wzinv_ztilde = wz.apply_inv(data.z_tilde)
    Y = dZ @ g
    Wzinv_Y = Wzinv_dZ @ g
    s = e_g - Y.T @ Wzinv_ztilde
    logger.info("Espectro de G: N=%d, mu=%s", N, np.array2string(mu, precision=4))
    return GSpectrum(
        data=data,
        G=G,
        mu=mu,
        g=g,
        Y=Y,
        Wzinv_Y=Wzinv_Y,
        s=s,
        e_g=e_g,
        Wzinv_dZ=Wzinv_dZ,
        Wzinv_ztilde=Wzinv_ztilde,
        _zc_factor=zc_factor,
    )


# ---------------------------
# Representación estructurada de θ
# ---------------------------
@dataclass(frozen=True, eq=False)
class ThetaStructured:
    """Suma de términos (a_k, u_k, M_z w_k); nunca un vector de longitud p."""

    scalars: np.ndarray     # (k,)
    state: np.ndarray       # (m, k)
    opt_dual: np.ndarray    # (n, k)
    origin: str = "mean"

    @classmethod
    def empty(cls, m: int, n: int, origin: str = "mean") -> "ThetaStructured":
        return cls(np.zeros(0), np.zeros((m, 0)), np.zeros((n, 0)), origin)

    @classmethod
    def from_terms(cls, terms: list[tuple[float, np.ndarray, np.ndarray]], m: int, n: int, origin: str) -> "ThetaStructured":
        if not terms:
            return cls.empty(m, n, origin)
        scalars = np.array([float(t[0]) for t in terms])
        state = np.column_stack([t[1] for t in terms])
        opt_dual = np.column_stack([t[2] for t in terms])
        return cls(scalars, state, opt_dual, origin)

    @property
    def n_terms(self) -> int:
        return int(self.scalars.size)

    @property
    def state_size(self) -> int:
        return int(self.state.shape[0])

    @property
    def opt_size(self) -> int:
        return int(self.opt_dual.shape[0])

    def coefficients(self, z: np.ndarray) -> np.ndarray:
        """a_k + (M_z w_k)ᵀ z."""
        return self.scalars + self.opt_dual.T @ z

    def __add__(self, other: "ThetaStructured") -> "ThetaStructured":
        if (self.state_size, self.opt_size) != (other.state_size, other.opt_size):
            raise ValueError("Términos de dimensiones distintas")
        return ThetaStructured(
            np.concatenate([self.scalars, other.scalars]),
            np.hstack([self.state, other.state]),
            np.hstack([self.opt_dual, other.opt_dual]),
            self.origin if self.origin == other.origin else "sum",
        )

    def to_dense(self, opt_mass: np.ndarray) -> np.ndarray:
        """θ ∈ ℝ^{m(n+1)} (solo para instancias pequeñas): (Σ a u ; Σ u ⊗ w)."""
        W = np.linalg.solve(np.asarray(opt_mass, dtype=float), self.opt_dual)
        head = self.state @ self.scalars
        tail = sum((np.kron(self.state[:, k], W[:, k]) for k in range(self.n_terms)),
                   np.zeros(self.state_size * self.opt_size))
        return np.concatenate([head, tail])


def delta_eval(theta: ThetaStructured, z: np.ndarray) -> np.ndarray:
    """δ(z, θ) = Σ (a + (M_z w)ᵀ z) u."""
    z = as_vector(z, theta.opt_size, name="z")
    if theta.n_terms == 0:
        return np.zeros(theta.state_size)
    return theta.state @ theta.coefficients(z)


@dataclass(frozen=True, eq=False)
class BreveDraw:
    """Componente no informada por los datos, representada por ν_z ~ N(0, W_z⁻¹)."""

    nu_z: np.ndarray
    origin: str = "breve"


def sample_theta_breve(wz: OptPrior, seed: SeedLike = None) -> BreveDraw:
    return BreveDraw(nu_z=wz.sample(seed))


# ---------------------------
# Media y muestras del posterior
# ---------------------------
@dataclass(frozen=True, eq=False)
class PosteriorCoefficients:
    a: np.ndarray           # (N,)
    b: np.ndarray           # (N, N), b[i, ℓ]
    U: np.ndarray           # (m, N), u_ℓ = W_u⁻¹ M_u d_ℓ
    U_shift: np.ndarray     # (N, m, N), U_shift[i, :, ℓ] = (α_d W_u + μ_i M_u)⁻¹ M_u u_ℓ
    alpha_d: float


def posterior_coefficients(spectrum: GSpectrum, state_prior: StatePrior, alpha_d: float) -> PosteriorCoefficients:
    if not alpha_d > 0:
        raise CalibrationError(f"alpha_d debe ser positivo: {alpha_d}")
    data = spectrum.data
    if state_prior.size != data.state_size:
        raise ValueError(f"Prior de estado de dimensión {state_prior.size}, discrepancias de dimensión {data.state_size}")
    dZ = data.centered
    a = 1.0 - dZ.T @ spectrum.Wzinv_ztilde
    # (z_ℓ − z̃)ᵀ W_z⁻¹ Z g_i con Z g_i = y_i + (eᵀg_i) z̃
    cross = dZ.T @ (spectrum.Wzinv_Y + np.outer(spectrum.Wzinv_ztilde, spectrum.e_g))
    b = cross.T + np.outer(spectrum.e_g, a)

    M = state_prior.mass
    U = state_prior.apply_inv(M @ data.D)
    MU = M @ U
    U_shift = np.stack([state_prior.apply_shifted_inv(alpha_d, float(mu), MU) for mu in spectrum.mu])
    return PosteriorCoefficients(a=a, b=b, U=U, U_shift=U_shift, alpha_d=float(alpha_d))


def posterior_mean(
    spectrum: GSpectrum,
    state_prior: StatePrior,
    alpha_d: float,
    coefficients: PosteriorCoefficients | None = None,
) -> ThetaStructured:
    """θ̄ con N + N² términos: (a_ℓ, u_ℓ/α_d, W_z⁻¹(z_ℓ−z̃)) y (s_i, −b_{iℓ} u_{iℓ}/α_d, W_z⁻¹ y_i)."""
    c = coefficients or posterior_coefficients(spectrum, state_prior, alpha_d)
    N = spectrum.n_training
    terms: list[tuple[float, np.ndarray, np.ndarray]] = []
    for ell in range(N):
        terms.append((c.a[ell], c.U[:, ell] / alpha_d, spectrum.Wzinv_dZ[:, ell]))
        for i in range(N):
            terms.append((spectrum.s[i], -c.b[i, ell] * c.U_shift[i, :, ell] / alpha_d, spectrum.Wzinv_Y[:, i]))
    return ThetaStructured.from_terms(terms, state_prior.size, spectrum.data.opt_size, "mean")


def sample_theta_hat(spectrum: GSpectrum, state_prior: StatePrior, alpha_d: float, seed: SeedLike = None) -> ThetaStructured:
    """θ̂ = √α_d Σ μ_i^{-1/2} (s_i û_i ; û_i ⊗ M_z⁻¹W_z⁻¹y_i), û_i ~ N(0, (α_d W_u + μ_i M_u)⁻¹)."""
    rng = _rng(seed)
    terms = []
    for i, mu in enumerate(spectrum.mu):
        u_hat = state_prior.sample_shifted(alpha_d, float(mu), rng)
        terms.append((spectrum.s[i], np.sqrt(alpha_d / mu) * u_hat, spectrum.Wzinv_Y[:, i]))
    return ThetaStructured.from_terms(terms, state_prior.size, spectrum.data.opt_size, "hat")


def delta_breve_scale(spectrum: GSpectrum, wz: OptPrior, z: np.ndarray) -> float:
    """γ(z) a partir del residuo de mínimos cuadrados r = (z − z̃) − Z_c c en la métrica W_z⁻¹."""
    dz = as_vector(z, spectrum.data.opt_size, name="z") - spectrum.z_tilde
    if not np.any(dz):
        return 0.0
    w = wz.apply_inv(dz)
    if spectrum.n_training == 1:
        return float(np.sqrt(max(float(dz @ w), 0.0)))
    c = spectrum.zc_solve(spectrum.Wzinv_Zc.T @ dz)
    r = dz - spectrum.Zc @ c
    Wr = w - spectrum.Wzinv_Zc @ c
    return float(np.sqrt(max(float(r @ Wr), 0.0)))


def sample_delta_breve(
    spectrum: GSpectrum, wz: OptPrior, z: np.ndarray, state_prior: StatePrior, seed: SeedLike = None
) -> np.ndarray:
    """δ̆(z) = γ(z) ν_u con ν_u ~ N(0, W_u⁻¹); cero exacto en z̃."""
    gamma = delta_breve_scale(spectrum, wz, z)
    nu_u = state_prior.sample(seed)
    return gamma * nu_u


# ---------------------------
# Reporte de calibración
# ---------------------------
def calibration_report(
    spectrum: GSpectrum,
    coefficients: PosteriorCoefficients,
    mean: ThetaStructured,
    state_mass,
) -> dict:
    """G, μ, a, b y los residuos relativos ‖δ̄(z_ℓ) − d_ℓ‖_M / ‖d_ℓ‖_M (E[δ̂] = 0)."""
    data = spectrum.data
    residuals = []
    for ell in range(data.n_training):
        d = data.D[:, ell]
        r = delta_eval(mean, data.Z[:, ell]) - d
        nd = float(np.sqrt(max(d @ (state_mass @ d), 0.0)))
        nr = float(np.sqrt(max(r @ (state_mass @ r), 0.0)))
        residuals.append({"index": ell, "residual": nr, "relative": nr / nd if nd > 0 else None, "data_norm": nd})
    return {
        "n_training": data.n_training,
        "alpha_d": coefficients.alpha_d,
        "G": spectrum.G.tolist(),
        "mu": spectrum.mu.tolist(),
        "s": spectrum.s.tolist(),
        "a": coefficients.a.tolist(),
        "b": coefficients.b.tolist(),
        "mean_terms": mean.n_terms,
        "fit_residuals": residuals,
    }
