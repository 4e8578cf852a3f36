"""Functional error minorant and lower bounds of the solution-set radius.

For a fixed coefficient triple and any ``w`` in V0,

    |||u - v|||^2 >= -a(w + 2v, w) + 2 l(w),

with equality at ``w = u - v``. Taking the supremum of the right-hand side
over the indeterminacy box (at ``v = u0``) gives the radius minorant

    M(u0, w) = -|||w|||_0^2 + d1 int |grad w + 2 grad u0| |grad w|
               + d2 int |(w + 2u0) w| + d3 int_G3 |(w + 2u0) w|,

and ``r^2 >= c_lower * M(u0, w)`` for every ``w``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import ScalarField
from .mesh import Mesh
from .problem import Coefficients, Scenario, c_lower, theta
from .quadrature import signed_cell_mass, signed_edge_mass

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MinorantValue:
    """``total = sum(parts)``; ``bound = c_lower * total`` is a lower bound of r^2."""

    total: float
    parts: tuple[float, float, float, float]
    witness: ScalarField
    bound: float
    history: tuple[float, ...] = ()
    info: dict = field(default_factory=dict)


def _require_v0(w: ScalarField):
    if not w.in_v0():
        raise fem.FEMError("test function w must vanish on the Dirichlet part")


def minorant_fixed(coeffs: Coefficients, v: ScalarField, w: ScalarField, s: Scenario) -> float:
    """-a(w + 2v, w) + 2 l(w) for one coefficient triple."""
    _require_v0(w)
    return -fem.bilinear(coeffs, w + 2.0 * v, w) + 2.0 * fem.load(s, w)


def frobenius_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Frobenius norms of the dyads ``a x b`` for stacked vectors (..., d)."""
    dyad = np.einsum("...i,...j->...ij", a, b)
    return np.sqrt(np.einsum("...ij,...ij->...", dyad, dyad))


def _delta_terms(s: Scenario, u0: ScalarField, w: ScalarField):
    m = s.mesh
    d1, d2, d3 = s.delta
    gw = w.gradient()
    gp = gw + 2.0 * u0.gradient()
    t1 = float(np.dot(m.areas, np.linalg.norm(gp, axis=1) * np.linalg.norm(gw, axis=1)))
    p = (w.values + 2.0 * u0.values)
    q = w.values
    mass = signed_cell_mass(p[m.triangles], q[m.triangles], m.areas)
    t2 = float(np.einsum("ti,tij,tj->", p[m.triangles], mass, q[m.triangles]))
    ids = m.edges_with_tag(3)
    emass = signed_edge_mass(p[m.edges[ids]], q[m.edges[ids]], m.edge_lengths[ids])
    t3 = float(np.einsum("ei,eij,ej->", p[m.edges[ids]], emass, q[m.edges[ids]]))
    return d1 * t1, d2 * t2, d3 * t3


def minorant_radius(s: Scenario, u0: ScalarField, w: ScalarField) -> MinorantValue:
    """Radius minorant at ``w``; all absolute-value integrals are exact."""
    _require_v0(w)
    if w.mesh is not s.mesh or u0.mesh is not s.mesh:
        raise fem.FEMError("fields do not live on the scenario mesh")
    quad = -fem.bilinear(s.mean, w, w)
    t1, t2, t3 = _delta_terms(s, u0, w)
    total = quad + t1 + t2 + t3
    return MinorantValue(total, (quad, t1, t2, t3), w, c_lower(s) * total)


def lambda_bound(s: Scenario, u0: ScalarField) -> tuple[float, float]:
    """Best minorant along ``w = lambda u0``: returns ``(r^2_lower, lambda*)``.

    With ``E0 = |||u0|||_0^2`` and ``Ed`` the squared delta-norm,
    ``lambda* = Ed / (E0 - Ed)`` and the bound is ``Ed^2 / (E0 - Ed)``.
    """
    e0 = fem.bilinear(s.mean, u0, u0)
    ed = fem.delta_norm(s, u0)
    if ed == 0.0:
        if e0 == 0.0:
            logger.warning("mean solution vanishes; lambda bound is zero")
        return 0.0, 0.0
    gap = e0 - ed
    return ed * ed / gap, ed / gap


def normalized_lambda_bound(s: Scenario) -> float:
    th = theta(s)
    return th * th / (1.0 - th)


# --------------------------------------------------------- maximization

@dataclass
class MinorantOptions:
    max_iter: int = 50
    restarts: int = 5
    seed: int = 0
    rtol: float = 1e-8
    coarse_levels: int = 0
    initial: np.ndarray | None = None
    threads: int = 1
    solver_rtol: float = 1e-8


def prolongation_matrix(mesh: Mesh, levels: int) -> tuple[sp.csr_matrix, Mesh]:
    """Nodal prolongation onto ``mesh`` from the mesh ``levels`` refinements below it."""
    p = sp.identity(mesh.num_nodes, format="csr")
    current = mesh
    for _ in range(levels):
        if current.parents is None or current.coarse is None:
            raise fem.FEMError("mesh was not produced by refine(); no coarse subspace available")
        n_fine = current.num_nodes
        rows = np.repeat(np.arange(n_fine), 2)
        step = sp.coo_matrix((np.full(2 * n_fine, 0.5), (rows, current.parents.ravel())),
                             shape=(n_fine, current.coarse.num_nodes)).tocsr()
        p = p @ step
        current = current.coarse
    return p, current


def frozen_perturbation(s: Scenario, u0: ScalarField, w: ScalarField):
    """Cellwise Psi and signed mass matrices that realize the suprema at ``w``.

    Returns ``(psi_a, cell_mass, edge_ids, edge_mass)`` where ``cell_mass``
    holds ``int_T sign((w+2u0) w) phi_i phi_j``. With these frozen, the
    perturbed minorant is a concave quadratic in ``w`` that touches the
    radius minorant at the current ``w`` and lies below it elsewhere.
    """
    m = s.mesh
    a = w.gradient() + 2.0 * u0.gradient()
    b = w.gradient()
    sym = 0.5 * (np.einsum("ti,tj->tij", a, b) + np.einsum("ti,tj->tij", b, a))
    lam, vec = np.linalg.eigh(sym)
    sign = np.where(lam < 0, -1.0, 1.0)
    psi = np.einsum("tik,tk,tjk->tij", vec, sign, vec)
    p = w.values + 2.0 * u0.values
    q = w.values
    cmass = signed_cell_mass(p[m.triangles], q[m.triangles], m.areas)
    ids = m.edges_with_tag(3)
    emass = signed_edge_mass(p[m.edges[ids]], q[m.edges[ids]], m.edge_lengths[ids])
    return psi, cmass, ids, emass


def frozen_operators(s: Scenario, u0: ScalarField, w: ScalarField, k0: sp.csr_matrix | None = None):
    """Matrices ``(B, P)`` of the frozen model ``-w.Bw + 2 w.P u0``, full nodal space.

    ``B = K0 - P`` with ``P = d1 K_Psi + d2 M_s + d3 R_s``.
    """
    m = s.mesh
    d1, d2, d3 = s.delta
    psi, cmass, ids, emass = frozen_perturbation(s, u0, w)
    local = d1 * fem.stiffness_local(m, psi) + d2 * cmass
    pert = fem.cell_matrix(m, local) + fem.edge_matrix(m, ids, d3 * emass)
    if k0 is None:
        k0 = fem.operator_matrix(m, s.mean)
    return k0 - pert, pert


def frozen_value(s: Scenario, u0: ScalarField, signs_at: ScalarField, w: ScalarField) -> float:
    """Frozen quadratic model built at ``signs_at`` and evaluated at ``w``."""
    b, pert = frozen_operators(s, u0, signs_at)
    x = w.values
    return float(-x @ (b @ x) + 2.0 * x @ (pert @ u0.values))


def _ascend(s: Scenario, u0: ScalarField, start: np.ndarray, opts: MinorantOptions,
            prolong: sp.csr_matrix, coarse_free: np.ndarray):
    """Sign-freezing ascent from ``start``; returns (best value, best w, history)."""
    m = s.mesh
    w = ScalarField(m, start)
    best = minorant_radius(s, u0, w)
    history = [best.total]
    pf = prolong[:, coarse_free].tocsc()
    pt = pf.T.tocsr()
    k0 = fem.operator_matrix(m, s.mean)
    xc = None
    for _ in range(opts.max_iter):
        b, pert = frozen_operators(s, u0, w, k0)
        rhs = pt @ (pert @ u0.values)
        bc = (pt @ b @ pf).tocsr()
        try:
            xc = fem.solve_spd(bc, rhs, rtol=opts.solver_rtol, x0=xc)
        except fem.SolverError as exc:
            logger.warning("frozen subproblem failed: %s", exc)
            break
        vals = pf @ xc
        vals[m.dirichlet_nodes] = 0.0
        w = ScalarField(m, vals)
        cur = minorant_radius(s, u0, w)
        history.append(cur.total)
        prev = best.total
        if cur.total > best.total:
            best = cur
        if abs(cur.total - prev) <= opts.rtol * max(abs(prev), 1e-300):
            break
    return best, history


def maximize_minorant(s: Scenario, u0: ScalarField, opts: MinorantOptions | None = None) -> MinorantValue:
    """Maximize the radius minorant over a P1 subspace of V0.

    Candidates: ``lambda* u0``, ``opts.restarts`` random fields and
    ``opts.initial``. Each is improved by sign freezing; the best value found
    is returned. Any result is a valid lower bound, and the analytic
    candidate guarantees ``bound >= c_lower * r^2`` from :func:`lambda_bound`.
    """
    opts = opts or MinorantOptions()
    m = s.mesh
    prolong, coarse = prolongation_matrix(m, opts.coarse_levels)
    coarse_free = coarse.free_nodes

    _, lam = lambda_bound(s, u0)
    scale = float(np.abs(u0.values).max())
    starts = [("lambda", lam * u0.values)]
    rng = np.random.default_rng(opts.seed)
    for k in range(opts.restarts):
        vals = prolong @ (scale * rng.uniform(-1.0, 1.0, coarse.num_nodes))
        vals[m.dirichlet_nodes] = 0.0
        starts.append((f"random:{k}", vals))
    if opts.initial is not None:
        vals = np.array(opts.initial, dtype=float)
        vals[m.dirichlet_nodes] = 0.0
        starts.append(("initial", vals))

    def run(item):
        label, vals = item
        value, hist = _ascend(s, u0, vals, opts, prolong, coarse_free)
        return label, value, hist

    if opts.threads > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(item) for item in starts]

    label, best, hist = results[0]
    for lab, val, h in results[1:]:
        if val.total > best.total:
            label, best, hist = lab, val, h
    info = {"start": label, "iterations": len(hist) - 1,
            "starts": {lab: val.total for lab, val, _ in results}}
    return MinorantValue(best.total, best.parts, best.witness, c_lower(s) * best.total,
                         tuple(hist), info)
