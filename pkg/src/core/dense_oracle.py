"""
Oráculo denso: materializa W_θ, A, Σ, L, L⁻¹, Ψ, D, C, T y B en dimensiones pequeñas.

Orden de θ ∈ ℝ^{m(n+1)}: primero el bloque θ₀ ∈ ℝᵐ y luego θ₁ con θ₁[j·n + k] = Θ₁[j, k],
de modo que (I_m ⊗ zᵀM_z) θ₁ = Θ₁ M_z z y un término u ⊗ w corresponde a np.kron(u, w).
Este orden es el contrato entre el oráculo y las fórmulas estructuradas.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from src.core.calibration import (
    GSpectrum,
    PosteriorCoefficients,
    ThetaStructured,
    TrainingData,
    build_spectrum,
    delta_breve_scale,
    delta_eval,
    posterior_coefficients,
    posterior_mean,
    sample_theta_hat,
)
from src.core.fem import FemMatrices
from src.core.prior import EllipticOperator, FunctionOptPrior, StatePrior, build_state_prior
from src.core.problem import BPieces, LinearModel, ReducedProblem, TrackingObjective
from src.core.solution_update import (
    BreveOperator,
    HessianProjector,
    UpdateInputs,
    apply_B,
    gen_eig_H,
    posterior_sample,
    project_inv_hess,
)
from src.utils.validators import relative_error

logger = logging.getLogger("hdsa.oracle")

MAX_STATE = 8
MAX_OPT = 10
MAX_TRAINING = 3
ORACLE_TOL = 1e-10


class OracleError(Exception):
    """Instancia densa inválida (dimensiones fuera de rango o matrices no SPD)."""


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _spd_power(A: np.ndarray, power: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_sym(A))
    return (vecs * vals**power) @ vecs.T


def _check_spd(A: np.ndarray, name: str) -> None:
    try:
        np.linalg.cholesky(_sym(A))
    except np.linalg.LinAlgError as exc:
        raise OracleError(f"{name} no es simétrica definida positiva") from exc


# ---------------------------
# Instancia
# ---------------------------
@dataclass(frozen=True, eq=False)
class DenseInstance:
    M_u: np.ndarray
    K_u: np.ndarray
    alpha_u: float
    beta_u: float
    M_z: np.ndarray
    K_z: np.ndarray
    alpha_z: float
    beta_z: float
    Z: np.ndarray
    D: np.ndarray
    alpha_d: float
    # problema lineal-cuadrático: S̃(z) = S z, J = ½‖u − T‖²_{M_obs} + (γ/2) zᵀ M_z z
    S: np.ndarray
    M_obs: np.ndarray
    target: np.ndarray
    gamma: float
    W_u: np.ndarray = field(init=False)
    W_z: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        m, n, N = self.M_u.shape[0], self.M_z.shape[0], self.Z.shape[1]
        if not (1 <= m <= MAX_STATE and 1 <= n <= MAX_OPT and 1 <= N <= MAX_TRAINING):
            raise OracleError(f"Dimensiones fuera del rango del oráculo: m={m}, n={n}, N={N}")
        if self.Z.shape[0] != n or self.D.shape != (m, N) or self.S.shape != (m, n):
            raise OracleError("Dimensiones inconsistentes en la instancia densa")
        if N > n:
            raise OracleError(f"N={N} mayor que n={n}")
        for name in ("M_u", "M_z", "M_obs"):
            _check_spd(getattr(self, name), name)
        E_u = self.beta_u * self.K_u + self.M_u
        E_z = self.beta_z * self.K_z + self.M_z
        object.__setattr__(self, "W_u", _sym(E_u @ np.linalg.solve(self.M_u, E_u)) / self.alpha_u)
        object.__setattr__(self, "W_z", _sym(E_z @ np.linalg.solve(self.M_z, E_z)) / self.alpha_z)
        _check_spd(self.W_u, "W_u")
        _check_spd(self.W_z, "W_z")

    @property
    def m(self) -> int:
        return int(self.M_u.shape[0])

    @property
    def n(self) -> int:
        return int(self.M_z.shape[0])

    @property
    def N(self) -> int:
        return int(self.Z.shape[1])

    @property
    def p(self) -> int:
        return self.m * (self.n + 1)

    @property
    def z_tilde(self) -> np.ndarray:
        return self.Z[:, 0]

    @property
    def d(self) -> np.ndarray:
        """(d₁ ; … ; d_N)."""
        return self.D.reshape(-1, order="F")

    def hessian(self) -> np.ndarray:
        return _sym(self.S.T @ self.M_obs @ self.S + self.gamma * self.M_z)

    def grad_u(self) -> np.ndarray:
        return self.M_obs @ (self.S @ self.z_tilde - self.target)

    # estructuras equivalentes para la ruta estructurada
    def state_prior(self) -> StatePrior:
        fem = FemMatrices(
            mass=sp.csr_matrix(self.M_u),
            stiffness=sp.csr_matrix(self.K_u),
            mass_sqrt=sp.csr_matrix(np.linalg.cholesky(self.M_u).T),
        )
        return build_state_prior(self.alpha_u, self.beta_u, fem, q=self.m, oversample=0, seed=0)

    def opt_prior(self) -> FunctionOptPrior:
        op = EllipticOperator(beta=self.beta_z, mass=sp.csr_matrix(self.M_z), stiffness=sp.csr_matrix(self.K_z))
        return FunctionOptPrior(self.alpha_z, op, sp.csr_matrix(np.linalg.cholesky(self.M_z).T))

    def training_data(self) -> TrainingData:
        return TrainingData(Z=self.Z, D=self.D, z_tilde=self.z_tilde)

    def problem(self) -> ReducedProblem:
        objective = TrackingObjective(
            obs_mass=sp.csr_matrix(self.M_obs), target=self.target, reg=sp.csr_matrix(self.M_z), gamma=self.gamma
        )
        return ReducedProblem(LinearModel(self.S), objective)


def _random_spd(rng: np.random.Generator, k: int) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return _sym((Q * rng.uniform(0.5, 1.5, k)) @ Q.T)


def _random_spsd(rng: np.random.Generator, k: int) -> np.ndarray:
    B = rng.standard_normal((k, k))
    return _sym(B.T @ B) / k


def random_instance(
    seed: int,
    m: Optional[int] = None,
    n: Optional[int] = None,
    N: Optional[int] = None,
    *,
    identity_priors: bool = False,
    ztilde_optimal: bool = True,
) -> DenseInstance:
    """Instancia aleatoria bien condicionada; z̃ es el minimizador del problema cuadrático."""
    rng = np.random.default_rng(seed)
    N = int(N or rng.integers(1, MAX_TRAINING + 1))
    m = int(m or rng.integers(2, MAX_STATE + 1))
    n = int(n or rng.integers(max(N, 2), MAX_OPT + 1))
    if identity_priors:
        M_u, K_u, a_u, b_u = np.eye(m), np.zeros((m, m)), 1.0, 0.0
        M_z, K_z, a_z, b_z = np.eye(n), np.zeros((n, n)), 1.0, 0.0
    else:
        M_u, K_u = _random_spd(rng, m), _random_spsd(rng, m)
        M_z, K_z = _random_spd(rng, n), _random_spsd(rng, n)
        a_u, b_u = rng.uniform(0.5, 2.0), rng.uniform(0.05, 0.3)
        a_z, b_z = rng.uniform(0.5, 2.0), rng.uniform(0.05, 0.3)
    S = rng.standard_normal((m, n)) / np.sqrt(n)
    target = rng.standard_normal(m)
    gamma = rng.uniform(0.05, 0.5)
    M_obs = M_u
    if ztilde_optimal:
        H = S.T @ M_obs @ S + gamma * M_z
        z_tilde = np.linalg.solve(H, S.T @ (M_obs @ target))
    else:
        z_tilde = rng.standard_normal(n)
    Z = np.column_stack([z_tilde] + [z_tilde + 0.5 * rng.standard_normal(n) for _ in range(N - 1)])
    D = 0.3 * rng.standard_normal((m, N))
    return DenseInstance(
        M_u=M_u, K_u=K_u, alpha_u=a_u, beta_u=b_u,
        M_z=M_z, K_z=K_z, alpha_z=a_z, beta_z=b_z,
        Z=Z, D=D, alpha_d=float(rng.uniform(0.05, 1.0)),
        S=S, M_obs=M_obs, target=target, gamma=float(gamma),
    )


# ---------------------------
# Construcciones densas
# ---------------------------
def a_row(inst: DenseInstance, z: np.ndarray) -> np.ndarray:
    """A_z = (I_m, I_m ⊗ zᵀM_z)."""
    return np.hstack([np.eye(inst.m), np.kron(np.eye(inst.m), (inst.M_z @ z)[None, :])])


def build_A_dense(inst: DenseInstance) -> np.ndarray:
    return np.vstack([a_row(inst, inst.Z[:, ell]) for ell in range(inst.N)])


def build_Wtheta_dense(inst: DenseInstance) -> np.ndarray:
    Wu, Mz, zt = inst.W_u, inst.M_z, inst.z_tilde
    c = Mz @ zt
    top = np.hstack([Wu, np.kron(Wu, c[None, :])])
    bottom = np.hstack([np.kron(Wu, c[:, None]), np.kron(Wu, Mz @ (inst.W_z + np.outer(zt, zt)) @ Mz)])
    W = _sym(np.vstack([top, bottom]))
    _check_spd(W, "W_theta")
    return W


@dataclass(frozen=True, eq=False)
class DensePosterior:
    mean: np.ndarray
    cov: np.ndarray


def posterior_dense(inst: DenseInstance) -> DensePosterior:
    """θ̄ = α_d⁻¹ Σ Aᵀ(I ⊗ M_u) d,  Σ = (W_θ + α_d⁻¹ Aᵀ(I ⊗ M_u) A)⁻¹."""
    A = build_A_dense(inst)
    MN = np.kron(np.eye(inst.N), inst.M_u)
    precision = _sym(build_Wtheta_dense(inst) + A.T @ MN @ A / inst.alpha_d)
    factor = sla.cho_factor(precision)
    cov = _sym(sla.cho_solve(factor, np.eye(inst.p)))
    mean = sla.cho_solve(factor, A.T @ (MN @ inst.d)) / inst.alpha_d
    return DensePosterior(mean=mean, cov=cov)


def dense_B(inst: DenseInstance) -> np.ndarray:
    """B = Sᵀ ∇_uuJ A_z̃ + (0, ∇_uJ ⊗ M_z)."""
    left = inst.S.T @ inst.M_obs @ a_row(inst, inst.z_tilde)
    right = np.hstack([np.zeros((inst.n, inst.m)), np.kron(inst.grad_u()[None, :], inst.M_z)])
    return left + right


def dense_projected_inverse(inst: DenseInstance, r: Optional[int] = None) -> np.ndarray:
    """P H⁻¹ = V_r diag(1/ρ) V_rᵀ con H v = ρ W_z v."""
    rho, V = sla.eigh(inst.hessian(), inst.W_z)
    order = np.argsort(rho)[::-1][: (r if r is not None else inst.n)]
    V, rho = V[:, order], rho[order]
    return (V / rho) @ V.T


@dataclass(frozen=True, eq=False)
class DenseSpectrum:
    G: np.ndarray
    mu: np.ndarray
    g: np.ndarray
    Y: np.ndarray
    s: np.ndarray
    e_g: np.ndarray


def dense_spectrum(inst: DenseInstance) -> DenseSpectrum:
    Wzinv = np.linalg.inv(inst.W_z)
    dZ = inst.Z - inst.z_tilde[:, None]
    e = np.ones(inst.N)
    G = _sym(np.outer(e, e) + dZ.T @ Wzinv @ dZ)
    mu, g = np.linalg.eigh(G)
    order = np.argsort(mu)[::-1]
    mu, g = mu[order], g[:, order]
    e_g = g.sum(axis=0)
    g[:, e_g < 0] *= -1.0
    e_g = np.abs(e_g)
    Y = inst.Z @ g - np.outer(inst.z_tilde, e_g)
    s = e_g - Y.T @ Wzinv @ inst.z_tilde
    return DenseSpectrum(G=G, mu=mu, g=g, Y=Y, s=s, e_g=e_g)


def state_gevd(inst: DenseInstance) -> tuple[np.ndarray, np.ndarray]:
    """(λ, X) con W_u x = λ M_u x y XᵀM_uX = I."""
    lam, X = sla.eigh(inst.W_u, inst.M_u)
    return lam, X


def build_L(inst: DenseInstance) -> np.ndarray:
    lam, X = state_gevd(inst)
    F = inst.M_u @ X * np.sqrt(lam)
    top = np.hstack([F, np.zeros((inst.m, inst.m * inst.n))])
    bottom = np.hstack([np.kron(F, (inst.M_z @ inst.z_tilde)[:, None]), np.kron(F, inst.M_z @ _spd_power(inst.W_z, 0.5))])
    return np.vstack([top, bottom])


def build_L_inv(inst: DenseInstance) -> np.ndarray:
    lam, X = state_gevd(inst)
    F = X.T / np.sqrt(lam)[:, None]
    Wmh = _spd_power(inst.W_z, -0.5)
    top = np.hstack([F, np.zeros((inst.m, inst.m * inst.n))])
    bottom = np.hstack([np.kron(F, -(Wmh @ inst.z_tilde)[:, None]), np.kron(F, Wmh @ np.linalg.inv(inst.M_z))])
    return np.vstack([top, bottom])


def build_Psi(inst: DenseInstance) -> tuple[np.ndarray, np.ndarray]:
    """Vectores singulares derechos ψ_{i,j} (orden i·m + j) y Φ² = μ_i/λ_j."""
    lam, X = state_gevd(inst)
    spec = dense_spectrum(inst)
    Mz_inv_Wz_inv = np.linalg.solve(inst.M_z, np.linalg.inv(inst.W_z))
    cols, phi2 = [], []
    for i in range(inst.N):
        w = Mz_inv_Wz_inv @ spec.Y[:, i]
        for j in range(inst.m):
            x = X[:, j]
            cols.append(np.concatenate([spec.s[i] * x, np.kron(x, w)]) / np.sqrt(spec.mu[i] * lam[j]))
            phi2.append(spec.mu[i] / lam[j])
    return np.column_stack(cols), np.array(phi2)


def build_D(inst: DenseInstance) -> np.ndarray:
    lam, _ = state_gevd(inst)
    spec = dense_spectrum(inst)
    return np.array([mu / (mu + inst.alpha_d * l) for mu in spec.mu for l in lam])


def build_C(inst: DenseInstance) -> np.ndarray:
    L = build_L(inst)
    Psi, phi2 = build_Psi(inst)
    LP = L.T @ Psi
    return _sym(inst.alpha_d * np.eye(inst.p) + (LP * phi2) @ LP.T)


def breve_basis(inst: DenseInstance) -> np.ndarray:
    """Base ortonormal del complemento de span{W_z^{-1/2}(z_ℓ − z̃)}_{ℓ≥2}, n × (n − N + 1)."""
    if inst.N == 1:
        return np.eye(inst.n)
    Wmh = _spd_power(inst.W_z, -0.5)
    Zc = inst.Z[:, 1:] - inst.z_tilde[:, None]
    return sla.null_space((Wmh @ Zc).T)


def build_Q_Upsilon(inst: DenseInstance) -> tuple[np.ndarray, np.ndarray]:
    lam, _ = state_gevd(inst)
    spec = dense_spectrum(inst)
    Wmh = _spd_power(inst.W_z, -0.5)
    cols, ups = [], []
    for i in range(inst.N):
        wy = Wmh @ spec.Y[:, i]
        for j in range(inst.m):
            e_j = np.eye(inst.m)[:, j]
            cols.append(np.concatenate([spec.e_g[i] * e_j, np.kron(e_j, wy)]) / np.sqrt(spec.mu[i]))
            ups.append(inst.alpha_d + spec.mu[i] / lam[j])
    Zb = breve_basis(inst)
    for j in range(inst.m):
        e_j = np.eye(inst.m)[:, j]
        for k in range(Zb.shape[1]):
            cols.append(np.concatenate([np.zeros(inst.m), np.kron(e_j, Zb[:, k])]))
            ups.append(inst.alpha_d)
    return np.column_stack(cols), np.array(ups)


def build_T(inst: DenseInstance) -> np.ndarray:
    """T = √α_d L⁻ᵀ Q Υ^{-1/2}."""
    Q, ups = build_Q_Upsilon(inst)
    return np.sqrt(inst.alpha_d) * np.linalg.solve(build_L(inst).T, Q / np.sqrt(ups))


def breve_terms(inst: DenseInstance) -> tuple[np.ndarray, np.ndarray]:
    """(s̆_k, y̆_k) con s̆_k = −z̃ᵀW_z^{-1/2} z̆_k y y̆_k = M_z⁻¹ W_z^{-1/2} z̆_k."""
    Zb = breve_basis(inst)
    Wmh = _spd_power(inst.W_z, -0.5)
    s_b = -(Wmh @ inst.z_tilde) @ Zb
    Y_b = np.linalg.solve(inst.M_z, Wmh @ Zb)
    return s_b, Y_b


def sample_theta_breve_explicit(inst: DenseInstance, seed=None) -> np.ndarray:
    """θ̆ = Σ_k (s̆_k ŭ_k ; ŭ_k ⊗ y̆_k) con ŭ_k ~ N(0, W_u⁻¹), usando la base explícita."""
    rng = np.random.default_rng(seed)
    s_b, Y_b = breve_terms(inst)
    chol = np.linalg.cholesky(np.linalg.inv(inst.W_u))
    theta = np.zeros(inst.p)
    for k in range(s_b.size):
        u = chol @ rng.standard_normal(inst.m)
        theta[: inst.m] += s_b[k] * u
        theta[inst.m:] += np.kron(u, Y_b[:, k])
    return theta


def _term_map(inst: DenseInstance, a: float, w: np.ndarray) -> np.ndarray:
    """u ↦ (a u ; u ⊗ w) como matriz p × m."""
    return np.vstack([a * np.eye(inst.m), np.kron(np.eye(inst.m), w[:, None])])


def structured_covariance(inst: DenseInstance, state_prior: StatePrior, spectrum: GSpectrum) -> np.ndarray:
    """Cov(θ̂) + Cov(θ̆) a partir de las fórmulas de muestreo por términos."""
    cov = np.zeros((inst.p, inst.p))
    eye = np.eye(inst.m)
    for i, mu in enumerate(spectrum.mu):
        C_i = state_prior.apply_shifted_inv(inst.alpha_d, float(mu), eye)
        w = np.linalg.solve(inst.M_z, spectrum.Wzinv_Y[:, i])
        T = _term_map(inst, spectrum.s[i], w)
        cov += (inst.alpha_d / mu) * T @ C_i @ T.T
    Wu_inv = state_prior.apply_inv(eye)
    s_b, Y_b = breve_terms(inst)
    for k in range(s_b.size):
        T = _term_map(inst, s_b[k], Y_b[:, k])
        cov += T @ Wu_inv @ T.T
    return _sym(cov)


def mc_covariance(inst: DenseInstance, n_samples: int = 200_000, seed: int = 0, chunk: int = 20_000) -> np.ndarray:
    """Covarianza empírica de θ̂ + θ̆ (media cero conocida) con muestreo por lotes."""
    rng = np.random.default_rng(seed)
    state_prior = inst.state_prior()
    spectrum = build_spectrum(inst.training_data(), inst.opt_prior())
    s_b, Y_b = breve_terms(inst)
    chol = np.linalg.cholesky(np.linalg.inv(inst.W_u))
    m, n = inst.m, inst.n
    w_hat = [np.linalg.solve(inst.M_z, spectrum.Wzinv_Y[:, i]) for i in range(inst.N)]
    acc = np.zeros((inst.p, inst.p))
    done = 0
    while done < n_samples:
        S = min(chunk, n_samples - done)
        theta = np.zeros((inst.p, S))
        for i, mu in enumerate(spectrum.mu):
            aleph = state_prior.shifted_diagonal(inst.alpha_d, float(mu))
            U = np.sqrt(state_prior.alpha) * state_prior.V @ (np.sqrt(aleph)[:, None] * rng.standard_normal((state_prior.rank, S)))
            U *= np.sqrt(inst.alpha_d / mu)
            theta[:m] += spectrum.s[i] * U
            theta[m:] += (U[:, None, :] * w_hat[i][None, :, None]).reshape(m * n, S)
        for k in range(s_b.size):
            U = chol @ rng.standard_normal((m, S))
            theta[:m] += s_b[k] * U
            theta[m:] += (U[:, None, :] * Y_b[:, k][None, :, None]).reshape(m * n, S)
        acc += theta @ theta.T
        done += S
    return acc / n_samples


def theta_quadratic_form(inst: DenseInstance, theta: np.ndarray) -> tuple[float, float, float]:
    """(θᵀW_θθ, ‖δ(z̃,θ)‖²_{W_u}, Tr(W_z J_θᵀ W_u J_θ)) con J_θ = Θ₁ M_z."""
    total = float(theta @ build_Wtheta_dense(inst) @ theta)
    delta = a_row(inst, inst.z_tilde) @ theta
    J = theta[inst.m:].reshape(inst.m, inst.n) @ inst.M_z
    schatten = float(np.trace(inst.W_z @ J.T @ inst.W_u @ J))
    return total, float(delta @ inst.W_u @ delta), schatten


# ---------------------------
# Reportes
# ---------------------------
@dataclass(frozen=True)
class IdentityCheck:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


@dataclass
class IdentityReport:
    label: str = ""
    checks: list[IdentityCheck] = field(default_factory=list)

    def add(self, name: str, error: float, tolerance: float = ORACLE_TOL) -> None:
        self.checks.append(IdentityCheck(name, float(error), tolerance))

    def compare(self, name: str, actual, expected, tolerance: float = ORACLE_TOL) -> None:
        self.add(name, relative_error(actual, expected), tolerance)

    def extend(self, other: "IdentityReport") -> None:
        self.checks.extend(other.checks)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[IdentityCheck]:
        return [c for c in self.checks if not c.passed]

    def as_rows(self) -> list[dict]:
        return [
            {"instance": self.label, "check": c.name, "error": c.error, "tolerance": c.tolerance, "passed": c.passed}
            for c in self.checks
        ]


def verify_identities(inst: DenseInstance, seed: int = 0) -> IdentityReport:
    """Identidades de factorización de W_θ, de A y de Σ; los fallos se reportan, no se lanzan."""
    report = IdentityReport()
    try:
        W = build_Wtheta_dense(inst)
        L, L_inv = build_L(inst), build_L_inv(inst)
        report.compare("W_theta = L L^T", L @ L.T, W)
        report.compare("L L^-1 = I", L @ L_inv, np.eye(inst.p))

        W_inv = sla.cho_solve(sla.cho_factor(W), np.eye(inst.p))
        A = build_A_dense(inst)
        MN = np.kron(np.eye(inst.N), inst.M_u)
        spec = dense_spectrum(inst)
        report.compare("A W_theta^-1 A^T (I x M_u) = G x W_u^-1 M_u", A @ W_inv @ A.T @ MN,
                       np.kron(spec.G, np.linalg.solve(inst.W_u, inst.M_u)))
        A_t = a_row(inst, inst.z_tilde)
        report.compare("A_ztilde W_theta^-1 A_ztilde^T = W_u^-1", A_t @ W_inv @ A_t.T, np.linalg.inv(inst.W_u))

        Psi, phi2 = build_Psi(inst)
        report.compare("Psi^T W_theta Psi = I", Psi.T @ W @ Psi, np.eye(Psi.shape[1]))
        post = posterior_dense(inst)
        report.compare("Sigma = W_theta^-1 - Psi D Psi^T", W_inv - (Psi * build_D(inst)) @ Psi.T, post.cov)

        Q, ups = build_Q_Upsilon(inst)
        report.compare("L^T psi_ij formula", L.T @ Psi, Q[:, : Psi.shape[1]])
        C = build_C(inst)
        report.compare("C Q = Q Upsilon", C @ Q, Q * ups)
        report.compare("eig(C) = Upsilon", np.sort(np.linalg.eigvalsh(C)), np.sort(ups))
        report.compare("Q^T Q = I", Q.T @ Q, np.eye(inst.p))
        T = build_T(inst)
        report.compare("T T^T = Sigma", T @ T.T, post.cov)

        theta = np.random.default_rng(seed).standard_normal(inst.p)
        total, delta_part, schatten = theta_quadratic_form(inst, theta)
        report.add("theta^T W_theta theta = |delta|^2 + Schatten", abs(total - delta_part - schatten) / abs(total))
    except (np.linalg.LinAlgError, OracleError) as exc:
        logger.error("Identidad no evaluable: %s", exc)
        report.add(f"evaluation error: {exc}", float("inf"))
    return report


@dataclass(frozen=True, eq=False)
class StructuredPipeline:
    spectrum: GSpectrum
    state_prior: StatePrior
    opt_prior: FunctionOptPrior
    coefficients: PosteriorCoefficients
    mean: ThetaStructured
    problem: ReducedProblem
    pieces: BPieces
    projector: HessianProjector
    breve: BreveOperator

    def update_inputs(self, alpha_d: float) -> UpdateInputs:
        return UpdateInputs(
            spectrum=self.spectrum,
            mean=self.mean,
            state_prior=self.state_prior,
            opt_prior=self.opt_prior,
            alpha_d=alpha_d,
            pieces=self.pieces,
            projector=self.projector,
            breve=self.breve,
        )


def structured_pipeline(inst: DenseInstance, r: Optional[int] = None, seed: int = 0) -> StructuredPipeline:
    """Ruta estructurada completa sobre la instancia (priors a rango completo)."""
    state_prior = inst.state_prior()
    opt_prior = inst.opt_prior()
    spectrum = build_spectrum(inst.training_data(), opt_prior)
    coeffs = posterior_coefficients(spectrum, state_prior, inst.alpha_d)
    mean = posterior_mean(spectrum, state_prior, inst.alpha_d, coeffs)
    problem = inst.problem()
    pieces = problem.b_pieces(inst.z_tilde)
    projector = gen_eig_H(lambda v: problem.hess_vec(inst.z_tilde, v), opt_prior, r or inst.n, seed=seed)
    breve = BreveOperator.build(spectrum, state_prior, pieces.grad_u)
    return StructuredPipeline(spectrum, state_prior, opt_prior, coeffs, mean, problem, pieces, projector, breve)


def verify_structured(inst: DenseInstance, seed: int = 0) -> IdentityReport:
    """Compara media, covarianza, B, γ, Γ y la actualización completa con el cálculo denso."""
    report = IdentityReport()
    rng = np.random.default_rng([seed, 7])
    try:
        pipe = structured_pipeline(inst, seed=seed)
        spec = dense_spectrum(inst)
        post = posterior_dense(inst)
        B = dense_B(inst)
        H_inv = np.linalg.inv(inst.hessian())
        Mz = inst.M_z

        report.compare("G structured", pipe.spectrum.G, spec.G, 1e-12)
        theta_bar = pipe.mean.to_dense(Mz)
        report.compare("posterior mean", theta_bar, post.mean)
        report.compare("posterior covariance (hat + breve)",
                       structured_covariance(inst, pipe.state_prior, pipe.spectrum), post.cov)
        z = inst.z_tilde + rng.standard_normal(inst.n)
        report.compare("delta(z, theta) = A_z theta", delta_eval(pipe.mean, z), a_row(inst, z) @ theta_bar)

        report.compare("B theta_bar", apply_B(pipe.mean, pipe.pieces), B @ theta_bar)
        theta_hat = sample_theta_hat(pipe.spectrum, pipe.state_prior, inst.alpha_d, rng)
        report.compare("B theta_hat", apply_B(theta_hat, pipe.pieces), B @ theta_hat.to_dense(Mz))

        # Γ = c Q y su covarianza contra B Cov(θ̆) Bᵀ
        Qop = np.column_stack([pipe.breve.oblique_projector(e) for e in np.eye(inst.n)])
        report.compare("Q^2 = Q", Qop @ Qop, Qop)
        Gamma = pipe.breve.scale * Qop
        s_b, Y_b = breve_terms(inst)
        Wu_inv = np.linalg.inv(inst.W_u)
        cov_b = sum(_term_map(inst, s_b[k], Y_b[:, k]) @ Wu_inv @ _term_map(inst, s_b[k], Y_b[:, k]).T
                    for k in range(s_b.size))
        report.compare("cov(B theta_breve) = Gamma W_z^-1 Gamma^T", B @ cov_b @ B.T,
                       Gamma @ np.linalg.inv(inst.W_z) @ Gamma.T)
        gamma_z = delta_breve_scale(pipe.spectrum, pipe.opt_prior, z)
        A_z = a_row(inst, z)
        report.compare("cov(delta_breve(z)) = gamma(z)^2 W_u^-1", A_z @ cov_b @ A_z.T, gamma_z**2 * Wu_inv)
        Zb = breve_basis(inst)
        parseval = float(np.sum((Zb.T @ _spd_power(inst.W_z, -0.5) @ (z - inst.z_tilde)) ** 2))
        report.add("gamma^2 Parseval", abs(gamma_z**2 - parseval) / max(parseval, np.finfo(float).tiny))
        vanish = max(delta_breve_scale(pipe.spectrum, pipe.opt_prior, inst.Z[:, ell]) for ell in range(inst.N))
        report.add("gamma(z_l) = 0", vanish / max(gamma_z, np.finfo(float).tiny), 1e-12)

        P = np.column_stack([pipe.projector.project(e) for e in np.eye(inst.n)])
        report.compare("P^2 = P", P @ P, P, 1e-8)
        z_bar = inst.z_tilde - project_inv_hess(pipe.projector, apply_B(pipe.mean, pipe.pieces))
        report.compare("mean update end to end", z_bar, inst.z_tilde - H_inv @ B @ post.mean, 1e-9)

        inputs = pipe.update_inputs(inst.alpha_d)
        b_mean = apply_B(pipe.mean, pipe.pieces)
        sample_seed = (seed, 1, 0)
        z_k = posterior_sample(inputs, b_mean, sample_seed)
        rng_k = np.random.default_rng(list(sample_seed))
        hat_k = sample_theta_hat(pipe.spectrum, pipe.state_prior, inst.alpha_d, rng_k)
        nu_k = pipe.opt_prior.sample(rng_k)
        expected = inst.z_tilde - H_inv @ (B @ (post.mean + hat_k.to_dense(Mz)) + Gamma @ nu_k)
        report.compare("posterior sample end to end", z_k, expected, 1e-9)
    except (np.linalg.LinAlgError, OracleError) as exc:
        logger.error("Comparación estructurada no evaluable: %s", exc)
        report.add(f"evaluation error: {exc}", float("inf"))
    return report


def oracle_instances(n_instances: int = 20, seed: int = 0) -> list[tuple[str, DenseInstance]]:
    """Instancia con priors identidad seguida de n_instances aleatorias, con etiqueta."""
    instances = [("identity", random_instance(seed, identity_priors=True))]
    instances += [(f"random-{k}", random_instance(seed * 1000 + k)) for k in range(n_instances)]
    return instances


def run_oracle_suite(n_instances: int = 20, seed: int = 0) -> list[IdentityReport]:
    """Identidades y comparaciones estructuradas sobre instancias aleatorias (más una con priors identidad)."""
    reports = []
    for label, inst in oracle_instances(n_instances, seed):
        report = IdentityReport(label=label)
        report.extend(verify_identities(inst, seed))
        report.extend(verify_structured(inst, seed))
        status = "ok" if report.passed else "FALLA"
        logger.info("Oráculo %s (m=%d, n=%d, N=%d): %s", label, inst.m, inst.n, inst.N, status)
        reports.append(report)
    return reports
