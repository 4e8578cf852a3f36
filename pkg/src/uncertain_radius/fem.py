"""P1 finite elements for the reaction-diffusion-Robin problem.

All coefficients and loads are piecewise constant, so every bilinear and
linear form below is integrated exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .mesh import Mesh
from .problem import Coefficients, Scenario
from .quadrature import edge_mass, local_mass

logger = logging.getLogger(__name__)


class FEMError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Continuous piecewise-linear function given by its nodal values."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.mesh.num_nodes,):
            raise FEMError(f"field has {self.values.shape} values for {self.mesh.num_nodes} nodes")

    def in_v0(self) -> bool:
        return bool(np.all(self.values[self.mesh.dirichlet_nodes] == 0.0))

    def gradient(self) -> np.ndarray:
        """Cellwise constant gradient, shape (T, 2)."""
        return np.einsum("tkd,tk->td", self.mesh.gradients, self.values[self.mesh.triangles])

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _same_mesh(self, other)
        return ScalarField(self.mesh, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _same_mesh(self, other)
        return ScalarField(self.mesh, self.values - other.values)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.mesh, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class FluxField:
    """Vector field with continuous piecewise-linear Cartesian components."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.mesh.num_nodes, 2):
            raise FEMError(f"flux has shape {self.values.shape}, expected ({self.mesh.num_nodes}, 2)")


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Unconstrained matrix and load; ``constrained`` nodes are fixed to zero."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray
    mesh: Mesh


def _same_mesh(*fields):
    mesh = fields[0].mesh
    for f in fields[1:]:
        if f.mesh is not mesh:
            raise FEMError("fields live on different meshes")
    return mesh


def zero_field(mesh: Mesh) -> ScalarField:
    return ScalarField(mesh, np.zeros(mesh.num_nodes))


def constant_field(mesh: Mesh, c: float) -> ScalarField:
    return ScalarField(mesh, np.full(mesh.num_nodes, float(c)))


def interpolate(mesh: Mesh, fn) -> ScalarField:
    """Nodal interpolant of ``fn(x, y)``."""
    return ScalarField(mesh, np.asarray(fn(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float))


# ---------------------------------------------------------------- assembly

def _coo(rows, cols, vals, n):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def stiffness_local(mesh: Mesh, a: np.ndarray) -> np.ndarray:
    g = mesh.gradients
    return np.einsum("t,tid,tde,tje->tij", mesh.areas, g, a, g)


def mass_local(mesh: Mesh, weight: np.ndarray) -> np.ndarray:
    return local_mass()[None] * (weight * mesh.areas)[:, None, None]


def cell_matrix(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t[:, :, None], 3, axis=2)
    cols = np.repeat(t[:, None, :], 3, axis=1)
    return _coo(rows, cols, local, mesh.num_nodes)


def edge_matrix(mesh: Mesh, edge_ids: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
    e = mesh.edges[edge_ids]
    rows = np.repeat(e[:, :, None], 2, axis=2)
    cols = np.repeat(e[:, None, :], 2, axis=1)
    return _coo(rows, cols, local, mesh.num_nodes)


def robin_local(mesh: Mesh, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ids = mesh.edges_with_tag(3)
    return ids, edge_mass()[None] * (alpha[ids] * mesh.edge_lengths[ids])[:, None, None]


def operator_matrix(mesh: Mesh, coeffs: Coefficients) -> sp.csr_matrix:
    """Matrix of a(., .) on the full nodal space (no constraints)."""
    k = stiffness_local(mesh, coeffs.a) + mass_local(mesh, coeffs.rho)
    ids, r = robin_local(mesh, coeffs.alpha)
    return cell_matrix(mesh, k) + edge_matrix(mesh, ids, r)


def load_vector(s: Scenario) -> np.ndarray:
    m = s.mesh
    b = np.zeros(m.num_nodes)
    np.add.at(b, m.triangles.ravel(), np.repeat(s.f * m.areas / 3.0, 3))
    for tag, data in ((2, s.F), (3, s.G)):
        ids = m.edges_with_tag(tag)
        np.add.at(b, m.edges[ids].ravel(), np.repeat(data[ids] * m.edge_lengths[ids] / 2.0, 2))
    return b


def check_coefficients(mesh: Mesh, coeffs: Coefficients):
    eig = np.linalg.eigvalsh(0.5 * (coeffs.a + np.swapaxes(coeffs.a, 1, 2)))
    asym = np.abs(coeffs.a - np.swapaxes(coeffs.a, 1, 2)).max(axis=(1, 2))
    bad = np.flatnonzero((eig[:, 0] <= 0) | (asym > 1e-12 * np.abs(coeffs.a).max(axis=(1, 2))))
    if bad.size:
        raise FEMError(f"diffusion matrix on cell {bad[0]} is not symmetric positive definite")
    bad = np.flatnonzero(coeffs.rho < 0)
    if bad.size:
        raise FEMError(f"negative reaction coefficient on cell {bad[0]}")
    robin = mesh.edges_with_tag(3)
    bad = robin[coeffs.alpha[robin] < 0]
    if bad.size:
        raise FEMError(f"negative Robin coefficient on edge {bad[0]}")


def assemble(s: Scenario, coeffs: Coefficients) -> LinearSystem:
    check_coefficients(s.mesh, coeffs)
    return LinearSystem(operator_matrix(s.mesh, coeffs), load_vector(s), s.mesh.dirichlet_nodes, s.mesh)


def solve_spd(matrix: sp.spmatrix, rhs: np.ndarray, rtol: float = 1e-10,
              maxiter: int | None = None, x0: np.ndarray | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients."""
    n = rhs.shape[0]
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros(n)
    inv_diag = 1.0 / matrix.diagonal()
    precond = LinearOperator(matrix.shape, matvec=lambda r: inv_diag * r.ravel(), dtype=float)
    x, info = cg(matrix, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter or 10 * n, M=precond)
    res = np.linalg.norm(rhs - matrix @ x) / bnorm
    if info != 0 or res > 10 * rtol:
        raise SolverError("conjugate gradients did not converge", res)
    return x


def solve_system(system: LinearSystem, rtol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    n = system.rhs.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[system.constrained] = False
    free = np.flatnonzero(mask)
    a = system.matrix[free][:, free]
    u = np.zeros(n)
    u[free] = solve_spd(a, system.rhs[free], rtol=rtol, maxiter=maxiter)
    return u


def solve(system: LinearSystem, rtol: float = 1e-10, maxiter: int | None = None) -> ScalarField:
    """Discrete solution in V0 (exact zeros on the Dirichlet nodes)."""
    return ScalarField(system.mesh, solve_system(system, rtol=rtol, maxiter=maxiter))


def solve_scenario(s: Scenario, coeffs: Coefficients | None = None, rtol: float = 1e-10) -> ScalarField:
    return solve(assemble(s, s.mean if coeffs is None else coeffs), rtol=rtol)


# ------------------------------------------------------------ forms, norms

def grad_sq(v: ScalarField) -> float:
    """||grad v||^2 over the domain."""
    g = v.gradient()
    return float(np.dot(v.mesh.areas, np.einsum("td,td->t", g, g)))


def l2_sq(v: ScalarField, weight: np.ndarray | None = None) -> float:
    m = v.mesh
    loc = v.values[m.triangles]
    q = np.einsum("ti,ij,tj->t", loc, local_mass(), loc) * m.areas
    return float(np.sum(q if weight is None else q * weight))


def boundary_sq(v: ScalarField, tag: int, weight: np.ndarray | None = None) -> float:
    """||v||^2 on the boundary part ``tag`` (``weight`` indexed like mesh.edges)."""
    m = v.mesh
    ids = m.edges_with_tag(tag)
    loc = v.values[m.edges[ids]]
    q = np.einsum("ei,ij,ej->e", loc, edge_mass(), loc) * m.edge_lengths[ids]
    return float(np.sum(q if weight is None else q * weight[ids]))


def bilinear(coeffs: Coefficients, u: ScalarField, w: ScalarField) -> float:
    m = _same_mesh(u, w)
    gu, gw = u.gradient(), w.gradient()
    diff = np.einsum("t,td,tde,te->", m.areas, gu, coeffs.a, gw)
    lu, lw = u.values[m.triangles], w.values[m.triangles]
    react = np.einsum("t,ti,ij,tj->", coeffs.rho * m.areas, lu, local_mass(), lw)
    ids = m.edges_with_tag(3)
    eu, ew = u.values[m.edges[ids]], w.values[m.edges[ids]]
    robin = np.einsum("e,ei,ij,ej->", coeffs.alpha[ids] * m.edge_lengths[ids], eu, edge_mass(), ew)
    return float(diff + react + robin)


def load(s: Scenario, w: ScalarField) -> float:
    if w.mesh is not s.mesh:
        raise FEMError("field does not live on the scenario mesh")
    return float(np.dot(load_vector(s), w.values))


def energy_norm(coeffs: Coefficients, v: ScalarField) -> float:
    return float(np.sqrt(max(bilinear(coeffs, v, v), 0.0)))


def delta_norm(s: Scenario, v: ScalarField) -> float:
    """Squared delta-weighted norm d1 ||grad v||^2 + d2 ||v||^2 + d3 ||v||^2_{G3}."""
    d1, d2, d3 = s.delta
    return d1 * grad_sq(v) + d2 * l2_sq(v) + d3 * boundary_sq(v, 3)


# ------------------------------------------------------------------- fluxes

def flux_divergence(y: FluxField) -> np.ndarray:
    """Exact divergence of the P1 vector field, constant per cell."""
    m = y.mesh
    return np.einsum("tkd,tkd->t", m.gradients, y.values[m.triangles])


def normal_trace(y: FluxField, tag: int) -> np.ndarray:
    """``y . nu`` at the two endpoints of each boundary edge with ``tag``, shape (E_tag, 2)."""
    if tag not in (2, 3):
        raise FEMError(f"normal trace is defined on parts 2 and 3, got {tag}")
    m = y.mesh
    ids = m.edges_with_tag(tag)
    vals = y.values[m.edges[ids]]
    return np.einsum("ekd,ed->ek", vals, m.edge_normals[ids])


def interpolate_cell_vectors(mesh: Mesh, cell_vectors: np.ndarray) -> FluxField:
    """P1 vector field from cellwise constant vectors by area-weighted nodal averaging."""
    acc = np.zeros((mesh.num_nodes, 2))
    wsum = np.zeros(mesh.num_nodes)
    for k in range(3):
        np.add.at(acc, mesh.triangles[:, k], cell_vectors * mesh.areas[:, None])
        np.add.at(wsum, mesh.triangles[:, k], mesh.areas)
    return FluxField(mesh, acc / wsum[:, None])


def flux_of(coeffs: Coefficients, v: ScalarField) -> FluxField:
    """P1 interpolant of ``A grad v``."""
    return interpolate_cell_vectors(v.mesh, np.einsum("tde,te->td", coeffs.a, v.gradient()))


# -------------------------------------------------------------- file formats

def dump_field(v: ScalarField) -> str:
    return f"field {v.values.size}\n" + "".join(f"{x!r}\n" for x in v.values.tolist())


def load_field(text: str, mesh: Mesh) -> ScalarField:
    rows = _numeric_rows(text, "field", 1)
    return ScalarField(mesh, np.array([r[0] for r in rows]))


def dump_flux(y: FluxField) -> str:
    return f"flux {y.values.shape[0]}\n" + "".join(f"{a!r} {b!r}\n" for a, b in y.values.tolist())


def load_flux(text: str, mesh: Mesh) -> FluxField:
    return FluxField(mesh, np.array(_numeric_rows(text, "flux", 2)).reshape(-1, 2))


def _numeric_rows(text: str, header: str, width: int):
    lines = [(i, ln.split("#", 1)[0].split()) for i, ln in enumerate(text.splitlines(), 1)]
    lines = [(i, t) for i, t in lines if t]
    if not lines or lines[0][1][0] != header or len(lines[0][1]) != 2:
        raise FEMError(f"line {lines[0][0] if lines else 1}: expected '{header} <N>' header")
    count = int(lines[0][1][1])
    body = lines[1:]
    if len(body) != count:
        raise FEMError(f"{header} file declares {count} rows but has {len(body)}")
    rows = []
    for i, tok in body:
        if len(tok) != width:
            raise FEMError(f"line {i}: expected {width} values, got {len(tok)}")
        rows.append([float(t) for t in tok])
    return rows
