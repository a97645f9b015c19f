"""
Ensamblaje de elementos finitos lineales (P1).

- assemble(): masa M (SPD) y rigidez K (SPSD) sin condiciones de borde.
- quadrature(): reglas de cuadratura por elemento, con las matrices de evaluación
  de la base y sus gradientes en los puntos, para términos no lineales.
- zero_rows(): anula las ecuaciones de los nodos Dirichlet (los modelos agregan la diagonal).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from src.core.mesh import Mesh

logger = logging.getLogger("hdsa.fem")

# Patrones locales de masa: M_e = medida * _MASS_PATTERN
_MASS_PATTERN = {
    1: np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0,
    2: np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0,
}


@dataclass(frozen=True, eq=False)
class FemMatrices:
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    # Factor G con GᵀG = M, útil para muestrear N(0, E⁻¹ M E⁻¹)
    mass_sqrt: sp.csr_matrix

    @property
    def size(self) -> int:
        return int(self.mass.shape[0])


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray               # (n_q, dim)
    weights: np.ndarray              # (n_q,)
    basis: sp.csr_matrix             # (n_q, n_nodes): φ_i(x_q)
    gradients: tuple[sp.csr_matrix, ...]  # ∂φ_i/∂x_k (x_q), uno por dimensión

    def weighted_mass(self, coefficient: np.ndarray | float = 1.0) -> sp.csr_matrix:
        """Φᵀ diag(w·c) Φ: masa con coeficiente evaluado en los puntos."""
        c = self.weights * np.broadcast_to(np.asarray(coefficient, dtype=float), self.weights.shape)
        return (self.basis.T @ sp.diags(c) @ self.basis).tocsr()

    def project(self, values: np.ndarray) -> np.ndarray:
        """Σ_q w_q f(x_q) φ_i(x_q): vector de carga de valores en puntos."""
        return self.basis.T @ (self.weights * values)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)


def _local_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Medidas (ne,) y gradientes de la base local (ne, k, dim)."""
    measures = mesh.element_measures()
    x = mesh.nodes[mesh.elements]
    if mesh.dimension == 1:
        g = np.stack([-1.0 / measures, 1.0 / measures], axis=1)[:, :, None]
        return measures, g
    # ∇λ_i = (y_{i+1} - y_{i+2}, x_{i+2} - x_{i+1}) / (2A)
    grads = np.empty((mesh.n_elements, 3, 2))
    for i in range(3):
        a, b = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = x[:, a, 1] - x[:, b, 1]
        grads[:, i, 1] = x[:, b, 0] - x[:, a, 0]
    grads /= (2.0 * measures)[:, None, None]
    return measures, grads


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.broadcast_to(mesh.elements[:, :, None], local.shape)
    cols = np.broadcast_to(mesh.elements[:, None, :], local.shape)
    n = mesh.n_nodes
    mat = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    return (0.5 * (mat + mat.T)).tocsr()


def assemble(mesh: Mesh) -> FemMatrices:
    """Masa y rigidez P1 con integración exacta por elemento."""
    mesh.validate()
    measures, grads = _local_gradients(mesh)
    pattern = _MASS_PATTERN[mesh.dimension]
    local_mass = measures[:, None, None] * pattern[None, :, :]
    local_stiff = measures[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)

    mass = _scatter(mesh, local_mass)
    stiffness = _scatter(mesh, local_stiff)

    # G_e = sqrt(medida) Lᵀ con L L ᵀ = patrón local
    chol = np.linalg.cholesky(pattern)
    k = mesh.dimension + 1
    vals = np.sqrt(measures)[:, None, None] * chol.T[None, :, :]
    rows = (np.arange(mesh.n_elements)[:, None, None] * k + np.arange(k)[None, :, None])
    rows = np.broadcast_to(rows, vals.shape)
    cols = np.broadcast_to(mesh.elements[:, None, :], vals.shape)
    mass_sqrt = sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_elements * k, mesh.n_nodes)
    ).tocsr()

    logger.debug("Ensamblado FEM: %d nodos, %d elementos", mesh.n_nodes, mesh.n_elements)
    return FemMatrices(mass=mass, stiffness=stiffness, mass_sqrt=mass_sqrt)


def block_diag_fem(*blocks: FemMatrices) -> FemMatrices:
    """FEM de un espacio producto (p.ej. (x₁, x₁′) sobre la misma malla temporal)."""
    return FemMatrices(
        mass=sp.block_diag([b.mass for b in blocks], format="csr"),
        stiffness=sp.block_diag([b.stiffness for b in blocks], format="csr"),
        mass_sqrt=sp.block_diag([b.mass_sqrt for b in blocks], format="csr"),
    )


def quadrature(mesh: Mesh) -> QuadratureRule:
    """Gauss de 3 puntos en 1D (grado 5); regla interior de 3 puntos en triángulos (grado 2)."""
    measures, grads = _local_gradients(mesh)
    ne, k = mesh.n_elements, mesh.dimension + 1
    if mesh.dimension == 1:
        xi = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])
        ref_w = np.array([5.0, 8.0, 5.0]) / 18.0
        values = np.column_stack([1.0 - xi, xi])          # (nq, k)
    else:
        values = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        ref_w = np.full(3, 1.0 / 3.0)
    nq = values.shape[0]

    x = mesh.nodes[mesh.elements]                          # (ne, k, dim)
    points = np.einsum("qa,ead->eqd", values, x).reshape(ne * nq, mesh.dimension)
    weights = (measures[:, None] * ref_w[None, :]).ravel()

    rows = np.broadcast_to(np.arange(ne * nq).reshape(ne, nq, 1), (ne, nq, k))
    cols = np.broadcast_to(mesh.elements[:, None, :], (ne, nq, k))
    shape = (ne * nq, mesh.n_nodes)
    basis = sp.coo_matrix(
        (np.broadcast_to(values[None, :, :], (ne, nq, k)).ravel(), (rows.ravel(), cols.ravel())), shape=shape
    ).tocsr()
    gradients = tuple(
        sp.coo_matrix(
            (np.broadcast_to(grads[:, None, :, d], (ne, nq, k)).ravel(), (rows.ravel(), cols.ravel())),
            shape=shape,
        ).tocsr()
        for d in range(mesh.dimension)
    )
    return QuadratureRule(points=points, weights=weights, basis=basis, gradients=gradients)


def zero_rows(matrix: sp.spmatrix, nodes: np.ndarray) -> sp.csr_matrix:
    keep = np.ones(matrix.shape[0])
    keep[np.asarray(nodes, dtype=int)] = 0.0
    return (sp.diags(keep) @ matrix).tocsr()
