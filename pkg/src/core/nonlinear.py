from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

logger = logging.getLogger("hdsa.benchmarks")


class ForwardSolveError(Exception):
    """El solver directo (Newton) no converge; conserva la traza de residuos."""

    def __init__(self, message: str, trace: list[float] | None = None) -> None:
        self.trace = list(trace or [])
        if self.trace:
            tail = ", ".join(f"{r:.3e}" for r in self.trace[-5:])
            message = f"{message} (residuos: {tail})"
        super().__init__(message)


@dataclass(frozen=True)
class NewtonResult:
    solution: np.ndarray
    iterations: int
    residual_norm: float
    trace: list[float] = field(default_factory=list)


def factorize(matrix: sp.spmatrix, what: str = "jacobiano"):
    """LU dispersa; un factor singular se informa como ForwardSolveError."""
    try:
        return splu(sp.csc_matrix(matrix))
    except RuntimeError as exc:
        raise ForwardSolveError(f"Sistema lineal singular ({what}): {exc}") from exc


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], sp.spmatrix],
    u0: np.ndarray,
    *,
    atol: float = 1e-10,
    max_iter: int = 50,
    min_step: float = 1e-10,
) -> NewtonResult:
    """Newton con búsqueda lineal por retroceso sobre ‖F(u)‖ (tolerancia absoluta)."""
    u = np.array(u0, dtype=float, copy=True)
    r = residual(u)
    norm = float(np.linalg.norm(r))
    trace = [norm]
    for it in range(max_iter):
        if norm <= atol:
            return NewtonResult(solution=u, iterations=it, residual_norm=norm, trace=trace)
        du = factorize(jacobian(u)).solve(-r)
        if not np.all(np.isfinite(du)):
            raise ForwardSolveError("Paso de Newton no finito", trace)
        step = 1.0
        while True:
            trial = u + step * du
            r_trial = residual(trial)
            trial_norm = float(np.linalg.norm(r_trial))
            if np.isfinite(trial_norm) and trial_norm <= (1.0 - 1e-4 * step) * norm:
                break
            step *= 0.5
            if step < min_step:
                # sin descenso posible: solo se acepta si ya estamos en el piso de redondeo
                if norm <= 1e3 * atol:
                    return NewtonResult(solution=u, iterations=it, residual_norm=norm, trace=trace)
                raise ForwardSolveError("Búsqueda lineal sin descenso", trace)
        u, r, norm = trial, r_trial, trial_norm
        trace.append(norm)
        logger.debug("Newton it=%d |F|=%.3e paso=%.3g", it + 1, norm, step)
    if norm <= atol:
        return NewtonResult(solution=u, iterations=max_iter, residual_norm=norm, trace=trace)
    raise ForwardSolveError(f"Newton no convergió en {max_iter} iteraciones", trace)
