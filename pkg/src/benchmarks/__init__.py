from __future__ import annotations

from typing import Callable

from .base import Benchmark, BenchmarkError, SolutionOperatorPair, sample_secondary_input
from .advection_diffusion import build_advection_diffusion
from .diffusion_reaction import build_diffusion_reaction
from .mass_spring import build_mass_spring

BUILDERS: dict[str, Callable[[dict, dict], Benchmark]] = {
    "diffusion_reaction": build_diffusion_reaction,
    "mass_spring": build_mass_spring,
    "advection_diffusion": build_advection_diffusion,
}


def build_benchmark(name: str, mesh: dict | None = None, physics: dict | None = None) -> Benchmark:
    """Construye el benchmark registrado con ese nombre."""
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise BenchmarkError(f"Benchmark desconocido '{name}' (opciones: {', '.join(BUILDERS)})")
    return builder(dict(mesh or {}), dict(physics or {}))


__all__ = [
    "BUILDERS",
    "Benchmark",
    "BenchmarkError",
    "SolutionOperatorPair",
    "build_benchmark",
    "sample_secondary_input",
]
