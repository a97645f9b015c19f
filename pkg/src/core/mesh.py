"""
Mallas estructuradas para elementos lineales:
- Intervalo 1D uniforme (dominio espacial o eje de tiempo).
- Rectángulo 2D triangulado (P1), con etiquetas Dirichlet/Neumann en el borde.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger("hdsa.fem")

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class MeshError(Exception):
    """Errores de construcción o validación de mallas."""


@dataclass(frozen=True, eq=False)
class Mesh:
    dimension: int
    nodes: np.ndarray          # (n_nodes, dimension)
    elements: np.ndarray       # (n_elements, dimension + 1)
    boundary: dict[str, np.ndarray] = field(default_factory=dict)
    shape: tuple[int, ...] = ()

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.elements.shape[0])

    def element_measures(self) -> np.ndarray:
        """Largo (1D) o área (2D) con signo de cada elemento."""
        x = self.nodes[self.elements]
        if self.dimension == 1:
            return x[:, 1, 0] - x[:, 0, 0]
        e1 = x[:, 1, :] - x[:, 0, :]
        e2 = x[:, 2, :] - x[:, 0, :]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def measure(self) -> float:
        return float(self.element_measures().sum())

    def boundary_nodes(self, tag: str) -> np.ndarray:
        return self.boundary.get(tag, np.zeros(0, dtype=int))

    def tag_of(self, node: int) -> str | None:
        for tag, idx in self.boundary.items():
            if node in idx:
                return tag
        return None

    def validate(self) -> "Mesh":
        if self.dimension not in (1, 2):
            raise MeshError(f"Dimensión no soportada: {self.dimension}")
        if self.nodes.ndim != 2 or self.nodes.shape[1] != self.dimension:
            raise MeshError("Coordenadas de nodos con forma inválida")
        if self.elements.shape[1] != self.dimension + 1:
            raise MeshError("Conectividad incompatible con elementos lineales")
        if self.elements.min() < 0 or self.elements.max() >= self.n_nodes:
            raise MeshError("Conectividad fuera de rango")
        measures = self.element_measures()
        if np.any(measures <= 0):
            bad = int(np.argmin(measures))
            raise MeshError(f"Elemento degenerado o invertido: #{bad} (medida {measures[bad]:.3e})")
        seen: set[int] = set()
        for tag, idx in self.boundary.items():
            dup = seen.intersection(int(i) for i in idx)
            if dup:
                raise MeshError(f"Nodo de borde con más de una etiqueta: {sorted(dup)[0]} ({tag})")
            seen.update(int(i) for i in idx)
        return self


def build_interval_mesh(a: float, b: float, n_elems: int) -> Mesh:
    """Malla uniforme en [a, b] con n_elems + 1 nodos; ambos extremos Neumann."""
    if int(n_elems) != n_elems or n_elems < 1:
        raise MeshError(f"Cantidad de elementos inválida: {n_elems}")
    if not a < b:
        raise MeshError(f"Intervalo inválido: a={a} >= b={b}")
    n_elems = int(n_elems)
    x = np.linspace(a, b, n_elems + 1)
    elements = np.column_stack([np.arange(n_elems), np.arange(1, n_elems + 1)])
    mesh = Mesh(
        dimension=1,
        nodes=x[:, None],
        elements=elements,
        boundary={NEUMANN: np.array([0, n_elems])},
        shape=(n_elems,),
    )
    logger.debug("Malla 1D [%g, %g] con %d elementos", a, b, n_elems)
    return mesh.validate()


def build_rect_mesh(x_range: tuple[float, float], y_range: tuple[float, float], nx: int, ny: int) -> Mesh:
    """Rectángulo triangulado (2 triángulos por celda).

    Dirichlet en los lados x = x0 e y = y0 (incluye esquinas que los tocan);
    el resto del borde queda Neumann.
    """
    (x0, x1), (y0, y1) = x_range, y_range
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"Conteos inválidos: nx={nx}, ny={ny}")
    if not (x0 < x1 and y0 < y1):
        raise MeshError(f"Rango degenerado: {x_range} x {y_range}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # fila j = y_j
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    n10 = n00 + 1
    n01 = n00 + (nx + 1)
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.empty((2 * n00.size, 3), dtype=int)
    elements[0::2] = lower
    elements[1::2] = upper

    ii = np.tile(np.arange(nx + 1), ny + 1)
    jj = np.repeat(np.arange(ny + 1), nx + 1)
    on_border = (ii == 0) | (ii == nx) | (jj == 0) | (jj == ny)
    on_dirichlet = (ii == 0) | (jj == 0)
    mesh = Mesh(
        dimension=2,
        nodes=nodes,
        elements=elements,
        boundary={
            DIRICHLET: np.flatnonzero(on_dirichlet),
            NEUMANN: np.flatnonzero(on_border & ~on_dirichlet),
        },
        shape=(nx, ny),
    )
    logger.debug("Malla 2D %dx%d (%d nodos)", nx, ny, mesh.n_nodes)
    return mesh.validate()
