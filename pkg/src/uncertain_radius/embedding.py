"""Discrete Rayleigh-quotient estimates of the embedding constants.

For the P1 subspace of V0 on a mesh,

    C1_h = max ||w||^2 / ||grad w||^2,
    C2_h = max ||w||^2_G2 / ||grad w||^2,
    C3_h = max ||w||^2_G3 / ||grad w||^2.

Each maximum is the largest eigenvalue of a generalized symmetric problem
``N x = c K x`` on the free nodes. The subspace maximum never exceeds the
continuous supremum, so the estimates approach the true constants from below.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from . import fem
from .mesh import Mesh
from .quadrature import edge_mass, local_mass


def _laplace(mesh: Mesh) -> sp.csr_matrix:
    eye = np.broadcast_to(np.eye(2), (mesh.num_triangles, 2, 2))
    return fem.cell_matrix(mesh, fem.stiffness_local(mesh, eye))


def _mass(mesh: Mesh) -> sp.csr_matrix:
    return fem.cell_matrix(mesh, local_mass()[None] * mesh.areas[:, None, None])


def _boundary_mass(mesh: Mesh, tag: int) -> sp.csr_matrix:
    ids = mesh.edges_with_tag(tag)
    return fem.edge_matrix(mesh, ids, edge_mass()[None] * mesh.edge_lengths[ids][:, None, None])


def largest_ratio(mesh: Mesh, numerator: sp.spmatrix) -> float:
    free = mesh.free_nodes
    k = _laplace(mesh)[free][:, free].tocsc()
    n = numerator[free][:, free].tocsc()
    if n.nnz == 0:
        return 0.0
    if free.size < 200:
        from scipy.linalg import eigh
        return float(eigh(n.toarray(), k.toarray(), eigvals_only=True)[-1])
    vals = eigsh(n, k=1, M=k, which="LA", return_eigenvectors=False)
    return float(vals[0])


def estimate_constants(mesh: Mesh) -> tuple[float, float, float]:
    """(C1_h, C2_h, C3_h) on ``mesh``."""
    return (largest_ratio(mesh, _mass(mesh)),
            largest_ratio(mesh, _boundary_mass(mesh, 2)),
            largest_ratio(mesh, _boundary_mass(mesh, 3)))
