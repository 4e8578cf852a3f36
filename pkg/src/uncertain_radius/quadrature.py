"""Quadrature helpers, including exact integration of sign-changing products.

For P1 functions ``p`` and ``q`` the integrand ``|p q|`` is piecewise
quadratic with kinks along the zero lines of ``p`` and ``q``. Splitting each
cell along those lines gives sub-triangles on which ``sign(p q)`` is
constant; a degree-2 rule on each piece then integrates ``|p q|`` exactly.
"""
from __future__ import annotations

import numpy as np

# Edge-midpoint rule, exact for quadratics on a triangle (barycentric points).
MIDPOINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])

_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0
_EDGE_MASS = (np.ones((2, 2)) + np.eye(2)) / 6.0


def local_mass() -> np.ndarray:
    """P1 mass matrix of a triangle of unit area."""
    return _LOCAL_MASS


def edge_mass() -> np.ndarray:
    """P1 mass matrix of an edge of unit length."""
    return _EDGE_MASS


def _sign(x):
    # zero counts as positive: the frozen sign is only ever multiplied by a zero integrand
    return np.where(x < 0, -1.0, 1.0)


def _split(bary: np.ndarray, parent: np.ndarray, vals: np.ndarray):
    """Cut sub-triangles along the zero line of a linear function.

    ``bary`` (M, 3, 3): vertex rows in barycentric coordinates of the parent
    cell ``parent[m]``; ``vals`` (T, 3): nodal values of the linear function
    on each parent cell. Returns pieces on which the function has one sign.
    """
    v = np.einsum("mkj,mj->mk", bary, vals[parent])
    cut = (v.max(axis=1) > 0) & (v.min(axis=1) < 0)
    if not cut.any():
        return bary, parent
    keep_b, keep_p = bary[~cut], parent[~cut]
    b, vc, pc = bary[cut], v[cut], parent[cut]
    pos = vc > 0
    iso = np.where(pos.sum(axis=1) == 1, np.argmax(pos, axis=1), np.argmax(vc < 0, axis=1))
    rows = np.arange(b.shape[0])
    i1 = (iso + 1) % 3
    i2 = (iso + 2) % 3
    b0, b1, b2 = b[rows, iso], b[rows, i1], b[rows, i2]
    v0, v1, v2 = vc[rows, iso], vc[rows, i1], vc[rows, i2]
    t1 = (v0 / (v0 - v1))[:, None]
    t2 = (v0 / (v0 - v2))[:, None]
    p1 = b0 + t1 * (b1 - b0)
    p2 = b0 + t2 * (b2 - b0)
    pieces = np.concatenate([
        np.stack([b0, p1, p2], axis=1),
        np.stack([p1, b1, b2], axis=1),
        np.stack([p1, b2, p2], axis=1),
    ])
    return np.concatenate([keep_b, pieces]), np.concatenate([keep_p, pc, pc, pc])


def signed_cell_mass(p_cell: np.ndarray, q_cell: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Local matrices ``int_T sign(p q) phi_i phi_j`` for every cell, shape (T, 3, 3).

    ``p_cell``, ``q_cell`` hold the vertex values (T, 3) of the two P1
    functions. The result is exact: ``p^T M q = int_T |p q|``.
    """
    nt = p_cell.shape[0]
    sp = _sign(p_cell)
    sq = _sign(q_cell)
    constant = (np.all(sp > 0, axis=1) | np.all(p_cell <= 0, axis=1)) & \
               (np.all(sq > 0, axis=1) | np.all(q_cell <= 0, axis=1))
    out = np.empty((nt, 3, 3))
    sign_c = _sign(p_cell.mean(axis=1)) * _sign(q_cell.mean(axis=1))
    out[:] = _LOCAL_MASS[None] * (sign_c * areas)[:, None, None]
    todo = np.flatnonzero(~constant)
    if todo.size == 0:
        return out
    bary = np.broadcast_to(np.eye(3), (todo.size, 3, 3)).copy()
    parent = np.arange(todo.size)
    bary, parent = _split(bary, parent, p_cell[todo])
    bary, parent = _split(bary, parent, q_cell[todo])
    centroid = bary.mean(axis=1)
    s = _sign(np.einsum("mj,mj->m", centroid, p_cell[todo][parent])) * \
        _sign(np.einsum("mj,mj->m", centroid, q_cell[todo][parent]))
    # area of a piece relative to its parent = |det| of its barycentric vertex matrix
    ratio = np.abs(np.linalg.det(bary))
    mids = 0.5 * (bary[:, [0, 1, 2]] + bary[:, [1, 2, 0]])
    loc = np.einsum("mqi,mqj->mij", mids, mids) / 3.0
    loc *= (s * ratio)[:, None, None]
    acc = np.zeros((todo.size, 3, 3))
    np.add.at(acc, parent, loc)
    out[todo] = acc * areas[todo, None, None]
    return out


def signed_edge_mass(p_edge: np.ndarray, q_edge: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Local matrices ``int_e sign(p q) phi_i phi_j`` on edges, shape (E, 2, 2)."""
    ne = p_edge.shape[0]
    if ne == 0:
        return np.zeros((0, 2, 2))

    def root(v):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = v[:, 0] / (v[:, 0] - v[:, 1])
        return np.where(v[:, 0] * v[:, 1] < 0, t, 1.0)

    brk = np.sort(np.column_stack([np.zeros(ne), root(p_edge), root(q_edge), np.ones(ne)]), axis=1)
    out = np.zeros((ne, 2, 2))
    for k in range(3):
        a, b = brk[:, k], brk[:, k + 1]
        m = 0.5 * (a + b)
        pm = p_edge[:, 0] * (1 - m) + p_edge[:, 1] * m
        qm = q_edge[:, 0] * (1 - m) + q_edge[:, 1] * m
        s = _sign(pm) * _sign(qm)
        # Simpson on [a, b] is exact for phi_i phi_j
        for t, w in ((a, 1 / 6), (m, 4 / 6), (b, 1 / 6)):
            phi = np.column_stack([1 - t, t])
            out += (w * (b - a) * s)[:, None, None] * np.einsum("ei,ej->eij", phi, phi)
    return out * lengths[:, None, None]


def gauss_triangle(order: int):
    """Collapsed Gauss-Legendre rule on a triangle.

    Returns barycentric points (Q, 3) and weights summing to 1, so that
    ``int_T g ~= |T| sum_q w_q g(x_q)``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    l1 = u.ravel()
    l2 = (v * (1 - u)).ravel()
    pts = np.column_stack([1 - l1 - l2, l1, l2])
    weights = 2.0 * (wu * wv * (1 - u)).ravel()
    return pts, weights
