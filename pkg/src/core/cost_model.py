"""Conteo de resoluciones de EDP: optimización de baja fidelidad vs. análisis post-optimalidad."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class CostParams:
    # costos por resolución
    f: float = 100.0          # directa de alta fidelidad
    f_tilde: float = 15.0     # directa de baja fidelidad
    a_tilde: float = 3.0      # adjunta / lineal de baja fidelidad
    e_u: float = 1.0          # elíptica de la prior del estado
    e_z: float = 1.0          # elíptica de la prior de optimización
    # contadores del optimizador
    n_iter: int = 50
    n_adjoint: int = 50
    # parámetros del algoritmo
    N: int = 2
    s: int = 100
    q: int = 500
    r: int = 50
    ell_E: int = 10
    ell_H: int = 10

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"Parámetro de costo negativo: {f.name}={getattr(self, f.name)}")

    def as_dict(self) -> dict:
        return asdict(self)


def cost_lofi_opt(p: CostParams) -> float:
    """Õ = ñ_iter f̃ + ñ_iter (1 + 2 ñ_adjoint) ã."""
    return p.n_iter * p.f_tilde + p.n_iter * (1 + 2 * p.n_adjoint) * p.a_tilde


def cost_posterior(p: CostParams) -> float:
    """P̃ = N f + (s + 1 + 4r + 4ℓ_H) ã + 2(q + ℓ_E) e_u + (s + 4r + 4ℓ_H + 2N) e_z."""
    return (
        p.N * p.f
        + (p.s + 1 + 4 * p.r + 4 * p.ell_H) * p.a_tilde
        + 2 * (p.q + p.ell_E) * p.e_u
        + (p.s + 4 * p.r + 4 * p.ell_H + 2 * p.N) * p.e_z
    )


def cost_summary(p: CostParams) -> dict:
    lofi = cost_lofi_opt(p)
    post = cost_posterior(p)
    return {"lofi_optimization": lofi, "posterior": post, "ratio": lofi / post if post else float("inf")}
