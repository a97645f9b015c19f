"""
Región de confianza Newton-CG (Steihaug-Toint) precondicionada por la métrica M_z.

La región de confianza se mide en la norma M_z y el gradiente se reporta en la
norma dual ‖g‖_{M_z⁻¹}. Parámetros: η = 0.1, expansión 2x si ρ > 0.75 en el borde,
contracción a 0.25‖p‖ si ρ < 0.25, tolerancia CG min(0.5, √(‖g‖/‖g₀‖))·‖g‖.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.core.nonlinear import ForwardSolveError
from src.core.problem import ReducedProblem
from src.utils.app_logging import ITERATION_LOGGER
from src.utils.validators import as_vector

logger = logging.getLogger("hdsa.optimizer")
iteration_logger = logging.getLogger(ITERATION_LOGGER)

ETA_ACCEPT = 0.1
EXPAND_FACTOR = 2.0
SHRINK_FACTOR = 0.25


class OptimizationError(Exception):
    """Falla del optimizador de baja fidelidad (región de confianza colapsada, estado inválido)."""

    def __init__(self, message: str, log_path: str | None = None) -> None:
        if log_path:
            message = f"{message} (ver {log_path})"
        super().__init__(message)
        self.log_path = log_path


@dataclass(frozen=True)
class TrustRegionStep:
    iteration: int
    objective: float
    grad_norm: float
    radius: float
    cg_iterations: int
    accepted: bool
    ratio: float


@dataclass(frozen=True)
class OptimizationResult:
    z_tilde: np.ndarray
    objective: float
    grad_norm: float
    initial_grad_norm: float
    iterations: int
    converged: bool
    trace: tuple[TrustRegionStep, ...] = ()
    min_curvature: float = math.inf
    settings: dict = field(default_factory=dict)

    def trace_rows(self) -> list[dict]:
        return [asdict(s) for s in self.trace]


class MetricSolver:
    """Aplica M y M⁻¹ para una métrica dispersa o densa."""

    def __init__(self, metric: sp.spmatrix | np.ndarray | None, size: int) -> None:
        if metric is None:
            metric = sp.identity(size, format="csc")
        self.metric = metric
        if sp.issparse(metric):
            self._lu = splu(sp.csc_matrix(metric))
            self._solve = self._lu.solve
        else:
            factor = sla.cho_factor(np.asarray(metric, dtype=float))
            self._solve = lambda x: sla.cho_solve(factor, x)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.metric @ x

    def solve(self, x: np.ndarray) -> np.ndarray:
        return self._solve(x)

    def norm(self, x: np.ndarray) -> float:
        return math.sqrt(max(float(x @ self.apply(x)), 0.0))

    def dual_norm(self, g: np.ndarray) -> float:
        return math.sqrt(max(float(g @ self.solve(g)), 0.0))


@dataclass
class _CgOutcome:
    step: np.ndarray
    hess_step: np.ndarray
    iterations: int
    on_boundary: bool
    min_curvature: float


def _to_boundary(p: np.ndarray, d: np.ndarray, radius: float, metric: MetricSolver) -> float:
    """τ ≥ 0 con ‖p + τ d‖_M = radio."""
    Md = metric.apply(d)
    a = float(d @ Md)
    b = 2.0 * float(p @ Md)
    c = float(p @ metric.apply(p)) - radius**2
    disc = max(b * b - 4.0 * a * c, 0.0)
    return (-b + math.sqrt(disc)) / (2.0 * a)


def steihaug_cg(
    grad: np.ndarray,
    hess: Callable[[np.ndarray], np.ndarray],
    metric: MetricSolver,
    radius: float,
    tol: float,
    max_iter: int,
) -> _CgOutcome:
    """CG truncado para min gᵀp + ½pᵀHp sujeto a ‖p‖_M ≤ radio."""
    p = np.zeros_like(grad)
    Hp = np.zeros_like(grad)
    r = grad.copy()
    y = metric.solve(r)
    ry = float(r @ y)
    d = -y
    min_curv = math.inf
    if math.sqrt(max(ry, 0.0)) <= tol:
        return _CgOutcome(p, Hp, 0, False, min_curv)
    for j in range(max_iter):
        Hd = hess(d)
        dHd = float(d @ Hd)
        dMd = float(d @ metric.apply(d))
        if dMd > 0:
            min_curv = min(min_curv, dHd / dMd)
        if dHd <= 0:
            # curvatura negativa: ir al borde
            if not math.isfinite(radius):
                if j == 0:
                    raise OptimizationError("Curvatura negativa con región de confianza no acotada")
                return _CgOutcome(p, Hp, j + 1, False, min_curv)
            tau = _to_boundary(p, d, radius, metric)
            return _CgOutcome(p + tau * d, Hp + tau * Hd, j + 1, True, min_curv)
        alpha = ry / dHd
        p_next = p + alpha * d
        if math.isfinite(radius) and metric.norm(p_next) >= radius:
            tau = _to_boundary(p, d, radius, metric)
            return _CgOutcome(p + tau * d, Hp + tau * Hd, j + 1, True, min_curv)
        p, Hp = p_next, Hp + alpha * Hd
        r = r + alpha * Hd
        y = metric.solve(r)
        ry_next = float(r @ y)
        if math.sqrt(max(ry_next, 0.0)) <= tol:
            return _CgOutcome(p, Hp, j + 1, False, min_curv)
        d = -y + (ry_next / ry) * d
        ry = ry_next
    return _CgOutcome(p, Hp, max_iter, False, min_curv)


def solve_lofi(
    prob: ReducedProblem,
    z0: np.ndarray,
    gtol: float = 1e-8,
    max_iter: int = 50,
    *,
    metric: sp.spmatrix | np.ndarray | None = None,
    gtol_abs: float = 0.0,
    initial_radius: Optional[float] = None,
    cg_rtol: Optional[float] = None,
    cg_max_iter: Optional[int] = None,
) -> OptimizationResult:
    """Minimiza J(S̃(z), z) desde z0.

    gtol es relativo a la norma inicial del gradiente; gtol_abs es un piso absoluto.
    cg_rtol fija una tolerancia relativa de CG en lugar de la regla min(0.5, √(‖g‖/‖g₀‖)).
    Sin radio inicial el primer paso es Newton sin restricción.
    """
    z = as_vector(z0, prob.size, name="z0").copy()
    M = MetricSolver(metric, prob.size)
    cg_max = cg_max_iter or max(2 * prob.size, 10)
    settings = {
        "eta": ETA_ACCEPT,
        "expand": EXPAND_FACTOR,
        "shrink": SHRINK_FACTOR,
        "initial_radius": initial_radius,
        "cg_forcing": "min(0.5, sqrt(|g|/|g0|))" if cg_rtol is None else cg_rtol,
        "gtol_rel": gtol,
        "gtol_abs": gtol_abs,
        "max_iter": max_iter,
        "hessian": prob.hessian,
    }

    try:
        f = prob.objective_value(z)
    except ForwardSolveError as exc:
        raise OptimizationError(f"El solver directo no converge en z0: {exc}") from exc
    g = prob.gradient(z)
    gnorm = M.dual_norm(g)
    gnorm0 = gnorm
    target = max(gtol_abs, gtol * gnorm0)
    radius = math.inf if initial_radius is None else float(initial_radius)
    trace: list[TrustRegionStep] = []
    min_curv = math.inf
    iteration_logger.info("iter objective grad_norm radius cg_iters accepted")
    iteration_logger.info("%d %.17g %.17g %.17g %d %d", 0, f, gnorm, radius, 0, 1)
    logger.info("Optimización baja fidelidad: J0=%.6e |g0|=%.3e", f, gnorm0)

    it = 0
    converged = gnorm <= target
    while not converged and it < max_iter:
        it += 1
        forcing = cg_rtol if cg_rtol is not None else min(0.5, math.sqrt(gnorm / gnorm0))
        cg = steihaug_cg(g, lambda v: prob.hess_vec(z, v), M, radius, forcing * gnorm, cg_max)
        min_curv = min(min_curv, cg.min_curvature)
        p = cg.step
        pred = -(float(g @ p) + 0.5 * float(p @ cg.hess_step))
        step_norm = M.norm(p)

        trial = z + p
        try:
            f_trial = prob.objective_value(trial)
            ratio = (f - f_trial) / pred if pred > 0 else -math.inf
        except ForwardSolveError as exc:
            logger.warning("Punto de prueba rechazado (solver directo): %s", exc)
            f_trial, ratio = math.nan, -math.inf

        if pred <= 0 and step_norm == 0.0:
            # CG no produjo paso: el gradiente ya está en el piso numérico
            logger.warning("Paso nulo en iteración %d; se detiene con |g|=%.3e", it, gnorm)
            break

        if ratio < 0.25:
            radius = SHRINK_FACTOR * step_norm
        elif ratio > 0.75 and cg.on_boundary:
            radius = EXPAND_FACTOR * radius

        accepted = ratio > ETA_ACCEPT
        if accepted:
            z, f = trial, f_trial
            g = prob.gradient(z)
            gnorm = M.dual_norm(g)
        trace.append(TrustRegionStep(it, f, gnorm, radius, cg.iterations, accepted, ratio))
        iteration_logger.info("%d %.17g %.17g %.17g %d %d", it, f, gnorm, radius, cg.iterations, int(accepted))
        logger.debug("TR it=%d J=%.6e |g|=%.3e radio=%.3e cg=%d rho=%.3f", it, f, gnorm, radius, cg.iterations, ratio)

        converged = gnorm <= target
        if not accepted and radius <= 1e-14 * max(1.0, M.norm(z)):
            raise OptimizationError(f"La región de confianza colapsó en la iteración {it}")

    if converged:
        logger.info("Convergencia en %d iteraciones: J=%.6e |g|=%.3e", it, f, gnorm)
    else:
        logger.warning("Sin convergencia tras %d iteraciones: |g|=%.3e > %.3e", it, gnorm, target)
    return OptimizationResult(
        z_tilde=z,
        objective=f,
        grad_norm=gnorm,
        initial_grad_norm=gnorm0,
        iterations=it,
        converged=converged,
        trace=tuple(trace),
        min_curvature=min_curv,
        settings=settings,
    )
