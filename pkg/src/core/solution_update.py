"""
Propagación del posterior de la discrepancia al óptimo: z = z̃ − P H⁻¹ B θ.

- gen_eig_H: pares generalizados H v = ρ W_z v (aleatorizado, doble pasada).
- apply_B: B θ̄ y B θ̂ por la suma de términos; B θ̆ = Γ ν_z.
- posterior_solution_samples: ensamble con semillas por índice de muestra.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, cg

from src.core.calibration import BreveDraw, GSpectrum, ThetaStructured, sample_theta_breve, sample_theta_hat
from src.core.prior import OptPrior, SeedLike, StatePrior, _rng
from src.core.problem import BPieces
from src.utils.validators import as_vector

logger = logging.getLogger("hdsa.update")

HessVec = Callable[[np.ndarray], np.ndarray]

# Flujos de números aleatorios derivados de la semilla maestra
SAMPLE_STREAM = 1
PROJECTOR_STREAM = 2


class ProjectionError(Exception):
    """Valores de Ritz no positivos o estancamiento de CG al aplicar H⁻¹."""


def _apply_columns(fn: HessVec, X: np.ndarray) -> np.ndarray:
    return np.column_stack([fn(X[:, j]) for j in range(X.shape[1])])


# ---------------------------
# Proyector del Hessiano
# ---------------------------
@dataclass(frozen=True, eq=False)
class HessianProjector:
    V: np.ndarray       # (n, r), VᵀW_zV = I
    rho: np.ndarray     # (r,), descendente
    WzV: np.ndarray     # (n, r)

    @property
    def rank(self) -> int:
        return int(self.rho.size)

    @property
    def size(self) -> int:
        return int(self.V.shape[0])

    def truncate(self, r: int) -> "HessianProjector":
        if r < 0 or r > self.rank:
            raise ProjectionError(f"Rango {r} fuera de [0, {self.rank}]")
        return HessianProjector(V=self.V[:, :r], rho=self.rho[:r], WzV=self.WzV[:, :r])

    def project(self, x: np.ndarray) -> np.ndarray:
        """P x = V Vᵀ W_z x."""
        return self.V @ (self.WzV.T @ x)

    def projection_residual(self, x: np.ndarray) -> float:
        """‖Px − x‖ / ‖x‖ (cero para x en el rango de P)."""
        nx = float(np.linalg.norm(x))
        return float(np.linalg.norm(self.project(x) - x)) / nx if nx > 0 else 0.0

    def residuals(self, hess_vec: HessVec) -> np.ndarray:
        """‖H v_j − ρ_j W_z v_j‖ / (ρ_j ‖W_z v_j‖); cuesta r productos Hessiano-vector."""
        out = np.empty(self.rank)
        for j in range(self.rank):
            wv = self.WzV[:, j]
            out[j] = np.linalg.norm(hess_vec(self.V[:, j]) - self.rho[j] * wv) / (self.rho[j] * np.linalg.norm(wv))
        return out


def _w_orthonormalize(Y: np.ndarray, wz: OptPrior) -> tuple[np.ndarray, np.ndarray]:
    """Columnas W_z-ortonormales del rango de Y y su imagen por W_z."""
    Q, _ = np.linalg.qr(Y)
    WQ = _apply_columns(wz.apply, Q)
    C = Q.T @ WQ
    R = sla.cholesky(0.5 * (C + C.T), lower=False)
    Q = sla.solve_triangular(R, Q.T, trans="T", lower=False).T
    WQ = sla.solve_triangular(R, WQ.T, trans="T", lower=False).T
    return Q, WQ


def choose_projector_rank(rho: np.ndarray, tol: float = 1e-4) -> int:
    """Menor r con ρ_r/ρ_1 ≤ tol; todos si el espectro no decae tanto."""
    if rho.size == 0:
        return 0
    below = np.flatnonzero(rho / rho[0] <= tol)
    return int(below[0]) + 1 if below.size else int(rho.size)


def gen_eig_H(
    hess_vec: HessVec,
    wz: OptPrior,
    r: int,
    oversample: int = 10,
    seed: SeedLike = 0,
    power_iterations: int = 2,
) -> HessianProjector:
    """Pares dominantes de H v = ρ W_z v con aplicaciones de W_z⁻¹ (método de doble pasada).

    Cada iteración de potencia vuelve a aplicar W_z⁻¹H a la base W_z-ortonormal.
    """
    n = wz.size
    if r < 1 or r > n:
        raise ProjectionError(f"Rango del proyector inválido: {r} (n={n})")
    k = min(int(r) + int(oversample), n)
    omega = _rng(seed).standard_normal((n, k))

    Y = _apply_columns(lambda x: wz.apply_inv(hess_vec(x)), omega)
    Q, WQ = _w_orthonormalize(Y, wz)
    for _ in range(power_iterations):
        Y = _apply_columns(lambda x: wz.apply_inv(hess_vec(x)), Q)
        Q, WQ = _w_orthonormalize(Y, wz)
    HQ = _apply_columns(hess_vec, Q)
    T = Q.T @ HQ
    vals, vecs = np.linalg.eigh(0.5 * (T + T.T))
    order = np.argsort(vals, kind="stable")[::-1][: int(r)]
    rho = vals[order]
    if rho[0] <= 0:
        raise ProjectionError(f"Hessiano no definido positivo: rho_1={rho[0]:.3e}")
    if np.any(rho <= 0):
        bad = int(np.flatnonzero(rho <= 0)[0])
        raise ProjectionError(f"Valor de Ritz no positivo en la posición {bad + 1}: {rho[bad]:.3e}")
    S = vecs[:, order]
    logger.info("Proyector: r=%d, rho_1=%.4e, rho_r=%.4e (muestras=%d, potencia=%d)", r, rho[0], rho[-1], k,
                power_iterations)
    return HessianProjector(V=Q @ S, rho=rho, WzV=WQ @ S)


def projector_diagnostics(proj: HessianProjector, hess_vec: HessVec, tol: float = 1e-6) -> dict:
    """Residuos de Rayleigh de cada par; advierte en el log los que superan tol."""
    residuals = proj.residuals(hess_vec)
    failed = [int(j) + 1 for j in np.flatnonzero(residuals > tol)]
    if failed:
        logger.warning("Pares generalizados con residuo > %.1e: %s (máx %.3e)", tol, failed, float(residuals.max()))
    return {
        "rank": proj.rank,
        "tolerance": float(tol),
        "residuals": [float(x) for x in residuals],
        "max_residual": float(residuals.max()) if residuals.size else 0.0,
        "failed": failed,
    }


def project_inv_hess(proj: HessianProjector, x: np.ndarray) -> np.ndarray:
    """Σ_j ρ_j⁻¹ (v_jᵀ x) v_j."""
    x = as_vector(x, proj.size, name="x")
    return proj.V @ ((proj.V.T @ x) / proj.rho)


def unprojected_update(hess_vec: HessVec, x: np.ndarray, cg_tol: float = 1e-10, max_iter: Optional[int] = None) -> np.ndarray:
    """−H⁻¹ x por gradientes conjugados (solo para validación)."""
    x = as_vector(x, name="x")
    if not np.any(x):
        return np.zeros_like(x)
    n = x.size
    op = LinearOperator((n, n), matvec=lambda v: hess_vec(np.asarray(v, dtype=float).ravel()), dtype=float)
    sol, info = cg(op, x, rtol=cg_tol, atol=0.0, maxiter=max_iter or 10 * n)
    if info != 0:
        raise ProjectionError(f"CG no convergió (info={info}, tol={cg_tol:g})")
    return -sol


# ---------------------------
# Acción de B
# ---------------------------
@dataclass(frozen=True, eq=False)
class BreveOperator:
    """Γ = √(∇_uJ W_u⁻¹ ∇_uJᵀ) (I − W_z⁻¹ Z_c (Z_cᵀ W_z⁻¹ Z_c)⁻¹ Z_cᵀ), independiente de z."""

    scale: float
    spectrum: GSpectrum

    @classmethod
    def build(cls, spectrum: GSpectrum, state_prior: StatePrior, grad_u: np.ndarray) -> "BreveOperator":
        g = as_vector(grad_u, state_prior.size, name="grad_u")
        return cls(scale=float(np.sqrt(max(float(g @ state_prior.apply_inv(g)), 0.0))), spectrum=spectrum)

    def oblique_projector(self, x: np.ndarray) -> np.ndarray:
        """Q x = x − W_z⁻¹ Z_c (Z_cᵀ W_z⁻¹ Z_c)⁻¹ Z_cᵀ x."""
        if self.spectrum.n_training == 1:
            return np.array(x, dtype=float, copy=True)
        return x - self.spectrum.Wzinv_Zc @ self.spectrum.zc_solve(self.spectrum.Zc.T @ x)

    def apply(self, nu_z: np.ndarray) -> np.ndarray:
        return self.scale * self.oblique_projector(nu_z)


def apply_B(theta: ThetaStructured | BreveDraw | None, pieces: BPieces, breve: BreveOperator | None = None) -> np.ndarray:
    """B θ = ∇_zS̃ᵀ ∇_uuJ δ(z̃, θ) + Σ (∇_uJ · u) M_z w para términos; Γ ν_z para la parte no informada."""
    n = pieces.z_tilde.size
    if theta is None:
        return np.zeros(n)
    if isinstance(theta, BreveDraw):
        if breve is None:
            raise ValueError("Se requiere el operador Γ para aplicar B a la componente no informada")
        return breve.apply(theta.nu_z)
    if theta.n_terms == 0:
        return np.zeros(n)
    coeff = theta.coefficients(pieces.z_tilde)
    delta = theta.state @ coeff
    out = pieces.jacobian_transpose_apply(pieces.hess_uu_apply(delta))
    return out + theta.opt_dual @ (theta.state.T @ pieces.grad_u)


# ---------------------------
# Ensamble posterior
# ---------------------------
@dataclass(frozen=True, eq=False)
class UpdateInputs:
    """Artefactos inmutables de la calibración y del proyector."""

    spectrum: GSpectrum
    mean: ThetaStructured
    state_prior: StatePrior
    opt_prior: OptPrior
    alpha_d: float
    pieces: BPieces
    projector: HessianProjector
    breve: BreveOperator

    @property
    def z_tilde(self) -> np.ndarray:
        return self.pieces.z_tilde


@dataclass(frozen=True, eq=False)
class PosteriorEnsemble:
    z_tilde: np.ndarray
    mean: np.ndarray                # z̄ = z̃ − P H⁻¹ B θ̄
    samples: np.ndarray             # (n, s)
    seeds: tuple[tuple[int, int, int], ...]
    rank: int
    b_mean: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[1])

    @property
    def mean_update(self) -> np.ndarray:
        return self.mean - self.z_tilde

    def pointwise_std(self) -> np.ndarray:
        if self.n_samples < 2:
            return np.zeros_like(self.mean)
        return self.samples.std(axis=1, ddof=1)

    def integrated_variance(self, weight) -> float:
        """tr(W Cov) estimada con las muestras (W = M_z da la varianza integrada)."""
        if self.n_samples < 2:
            return 0.0
        dev = self.samples - self.samples.mean(axis=1, keepdims=True)
        Wdev = weight @ dev
        return float(np.sum(dev * Wdev) / (self.n_samples - 1))

    def max_projection_residual(self, projector: HessianProjector) -> float:
        if self.n_samples == 0:
            return 0.0
        return max(projector.projection_residual(self.samples[:, k] - self.z_tilde) for k in range(self.n_samples))


def posterior_sample(inputs: UpdateInputs, b_mean: np.ndarray, seed: tuple[int, int, int]) -> np.ndarray:
    """z^k = z̃ − P H⁻¹ (Bθ̄ + Bθ̂^k + Bθ̆^k) con rng = default_rng(seed)."""
    rng = np.random.default_rng(list(seed))
    theta_hat = sample_theta_hat(inputs.spectrum, inputs.state_prior, inputs.alpha_d, rng)
    breve = sample_theta_breve(inputs.opt_prior, rng)
    x = b_mean + apply_B(theta_hat, inputs.pieces) + apply_B(breve, inputs.pieces, inputs.breve)
    return inputs.z_tilde - project_inv_hess(inputs.projector, x)


def posterior_solution_samples(
    inputs: UpdateInputs,
    s: int,
    seed: int,
    *,
    threads: int = 1,
) -> PosteriorEnsemble:
    """Algoritmo completo de muestreo; el resultado no depende del número de hilos."""
    if s < 0:
        raise ValueError(f"Número de muestras negativo: {s}")
    b_mean = apply_B(inputs.mean, inputs.pieces)
    z_bar = inputs.z_tilde - project_inv_hess(inputs.projector, b_mean)
    seeds = tuple((int(seed), SAMPLE_STREAM, k) for k in range(s))

    if s == 0:
        samples = np.zeros((inputs.z_tilde.size, 0))
    elif threads <= 1:
        samples = np.column_stack([posterior_sample(inputs, b_mean, sd) for sd in seeds])
    else:
        with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="hdsa-sample") as pool:
            samples = np.column_stack(list(pool.map(lambda sd: posterior_sample(inputs, b_mean, sd), seeds)))

    logger.info("Ensamble posterior: s=%d, r=%d, |z̄ − z̃|=%.3e", s, inputs.projector.rank, np.linalg.norm(z_bar - inputs.z_tilde))
    return PosteriorEnsemble(
        z_tilde=inputs.z_tilde.copy(),
        mean=z_bar,
        samples=samples,
        seeds=seeds,
        rank=inputs.projector.rank,
        b_mean=b_mean,
        metadata={"alpha_d": inputs.alpha_d, "master_seed": int(seed), "breve_scale": inputs.breve.scale},
    )
