"""Functional error majorant and the closed-form upper bound of the radius.

For fixed coefficients (A, rho, alpha), any v in V0 and any P1 flux y,

    |||u - v|||^2 <= kappa * (g1 D + g2 ||(1-mu1) r1||^2 + g3 ||(1-mu2) r2||^2_G3
                               + g4 ||F - y.nu||^2_G2)
                     + ||mu1 r1 / sqrt(rho)||^2 + ||mu2 r2 / sqrt(alpha)||^2_G3,

    kappa = 1/g1 + s1^2/g2 + s3^2/g3 + s2^2/g4,

with ``D = int A^-1 |A grad v - y|^2``, ``r1 = f - rho v + div y`` and
``r2 = G - alpha v - y.nu``. A multiplier equal to ``inf`` marks a term whose
residual vanishes; it is removed from ``kappa`` and from the sum.

Every integral here involves piecewise polynomials of degree <= 2 and is
evaluated exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import FluxField, ScalarField
from .problem import Coefficients, Scenario, sigma_constants
from .quadrature import edge_mass, gauss_triangle, local_mass

logger = logging.getLogger(__name__)

INF = math.inf


class MajorantError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Residuals:
    """Vertex values of the residuals; each is linear on its cell or edge.

    ``r1`` (T, 3) on cells, ``r2`` (E3, 2) on the Robin edges ``edges3``,
    ``rN`` (E2, 2) on the Neumann edges ``edges2``.
    """

    r1: np.ndarray
    r2: np.ndarray
    rN: np.ndarray
    edges2: np.ndarray
    edges3: np.ndarray


@dataclass(frozen=True, eq=False)
class MajorantValue:
    """``parts = (D, ||(1-mu1) r1||^2, ||(1-mu2) r2||^2, ||rN||^2,
    ||mu1 r1/sqrt(rho)||^2, ||mu2 r2/sqrt(alpha)||^2)``."""

    total: float
    parts: tuple[float, ...]
    gamma: tuple[float, float, float, float]
    kappa: float
    mu1: np.ndarray
    mu2: np.ndarray
    flux: FluxField
    sigma: tuple[float, float, float]
    history: tuple[float, ...] = ()
    info: dict = field(default_factory=dict)


def coefficient_sigma(s: Scenario, coeffs: Coefficients, convention: str | None = None):
    """Embedding multipliers valid for ``coeffs``.

    The Friedrichs and trace inequalities are converted to the energy norm
    with the smallest eigenvalue of the diffusion matrix, so perturbed
    matrices softer than ``beta_lower1`` get proportionally larger sigmas.
    """
    return sigma_constants(s, convention, ellipticity=min(s.beta_lower[0], coeffs.min_eig_a()))


# ------------------------------------------------------------- residuals

def residuals(s: Scenario, coeffs: Coefficients, v: ScalarField, y: FluxField) -> Residuals:
    m = s.mesh
    if v.mesh is not m or y.mesh is not m:
        raise fem.FEMError("fields do not live on the scenario mesh")
    div = fem.flux_divergence(y)
    r1 = s.f[:, None] - coeffs.rho[:, None] * v.values[m.triangles] + div[:, None]
    e3 = m.edges_with_tag(3)
    e2 = m.edges_with_tag(2)
    r2 = s.G[e3, None] - coeffs.alpha[e3, None] * v.values[m.edges[e3]] - fem.normal_trace(y, 3)
    rN = s.F[e2, None] - fem.normal_trace(y, 2)
    return Residuals(r1, r2, rN, e2, e3)


def _cell_sq(m, vals, weight=None):
    q = np.einsum("ti,ij,tj->t", vals, local_mass(), vals) * m.areas
    return float(np.sum(q if weight is None else q * weight))


def _edge_sq(m, ids, vals, weight=None):
    q = np.einsum("ei,ij,ej->e", vals, edge_mass(), vals) * m.edge_lengths[ids]
    return float(np.sum(q if weight is None else q * weight))


def d_term(coeffs: Coefficients, v: ScalarField, y: FluxField) -> float:
    """int A^-1 (A grad v - y).(A grad v - y), exact for P1 flux."""
    m = v.mesh
    if y.mesh is not m:
        raise fem.FEMError("fields live on different meshes")
    flux = np.einsum("tde,te->td", coeffs.a, v.gradient())
    z = flux[:, None, :] - y.values[m.triangles]
    ainv = np.linalg.inv(coeffs.a)
    val = np.einsum("t,ij,tid,tde,tje->", m.areas, local_mass(), z, ainv, z)
    return float(max(val, 0.0))


def _mu_arrays(s: Scenario, mu1, mu2):
    m = s.mesh
    e3 = m.edges_with_tag(3)
    mu1 = np.broadcast_to(np.asarray(mu1, dtype=float), (m.num_triangles,)).copy()
    mu2 = np.broadcast_to(np.asarray(mu2, dtype=float), (e3.size,)).copy()
    for name, arr in (("mu1", mu1), ("mu2", mu2)):
        if np.any(arr < 0) or np.any(arr > 1):
            raise MajorantError(f"{name} must lie in [0, 1]")
    return mu1, mu2


def _lower_order(vals_sq_fn, mu, coef, name):
    if np.any((mu > 0) & (coef <= 0)):
        raise MajorantError(f"{name} > 0 where the corresponding coefficient vanishes")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(mu > 0, mu * mu / np.where(coef > 0, coef, 1.0), 0.0)
    return vals_sq_fn(w)


def majorant_parts(s: Scenario, coeffs: Coefficients, v: ScalarField, y: FluxField,
                   mu1=0.0, mu2=0.0) -> tuple[float, ...]:
    m = s.mesh
    mu1, mu2 = _mu_arrays(s, mu1, mu2)
    res = residuals(s, coeffs, v, y)
    d = d_term(coeffs, v, y)
    p1 = _cell_sq(m, res.r1, (1 - mu1) ** 2)
    p2 = _edge_sq(m, res.edges3, res.r2, (1 - mu2) ** 2)
    p3 = _edge_sq(m, res.edges2, res.rN)
    l1 = _lower_order(lambda w: _cell_sq(m, res.r1, w), mu1, coeffs.rho, "mu1")
    l2 = _lower_order(lambda w: _edge_sq(m, res.edges3, res.r2, w), mu2,
                      coeffs.alpha[res.edges3], "mu2")
    return (d, p1, p2, p3, l1, l2)


def majorant_sqform(s: Scenario, coeffs: Coefficients, v: ScalarField, y: FluxField,
                    mu1=0.0, mu2=0.0, sigma=None) -> float:
    """(D^1/2 + s1 ||(1-mu1) r1|| + s3 ||(1-mu2) r2|| + s2 ||rN||)^2 + lower-order terms."""
    s1, s2, s3 = sigma or coefficient_sigma(s, coeffs)
    d, p1, p2, p3, l1, l2 = majorant_parts(s, coeffs, v, y, mu1, mu2)
    lead = math.sqrt(d) + s1 * math.sqrt(p1) + s3 * math.sqrt(p2) + s2 * math.sqrt(p3)
    return lead * lead + l1 + l2


def kappa_of(gamma, sigma) -> float:
    g1, g2, g3, g4 = gamma
    s1, s2, s3 = sigma
    if any(not g > 0 for g in gamma):
        raise MajorantError(f"multipliers must be > 0, got {gamma}")
    return sum(c / g for c, g in ((1.0, g1), (s1 * s1, g2), (s3 * s3, g3), (s2 * s2, g4))
               if g != INF)


def _weighted_sum(gamma, parts4) -> float:
    total = 0.0
    for g, p in zip(gamma, parts4):
        if g == INF:
            if p != 0.0:
                return INF
            continue  # absent term
        total += g * p
    return total


def combine(parts, gamma, sigma) -> tuple[float, float]:
    """Total of the quadratic form and kappa for given parts and multipliers."""
    kappa = kappa_of(gamma, sigma)
    return kappa * _weighted_sum(gamma, parts[:4]) + parts[4] + parts[5], kappa


def gamma_opt(parts, sigma) -> tuple[float, float, float, float]:
    """Multipliers for which the quadratic form equals the squared-sum form."""
    d, p1, p2, p3 = parts[:4]
    s1, s2, s3 = sigma

    def ratio(c, sq):
        return INF if sq == 0.0 else c / math.sqrt(sq)

    return (ratio(1.0, d), ratio(s1, p1), ratio(s3, p2), ratio(s2, p3))


def mu_opt(s: Scenario, coeffs: Coefficients, kappa: float, gamma2: float, gamma3: float):
    """Pointwise minimizers of kappa g (1-mu)^2 + mu^2/c, i.e. kappa g c / (kappa g c + 1)."""
    e3 = s.mesh.edges_with_tag(3)

    def one(gamma, c):
        c = np.asarray(c, dtype=float)
        if gamma == INF:
            # the unweighted residual vanishes, so every admissible mu is optimal
            return np.where(c > 0, 1.0, 0.0)
        t = kappa * gamma * np.maximum(c, 0.0)
        return t / (t + 1.0)

    return one(gamma2, coeffs.rho), one(gamma3, coeffs.alpha[e3])


def majorant(s: Scenario, coeffs: Coefficients, v: ScalarField, y: FluxField,
             gamma, mu1=0.0, mu2=0.0, sigma=None) -> MajorantValue:
    sigma = tuple(sigma or coefficient_sigma(s, coeffs))
    gamma = tuple(float(g) for g in gamma)
    mu1a, mu2a = _mu_arrays(s, mu1, mu2)
    parts = majorant_parts(s, coeffs, v, y, mu1a, mu2a)
    total, kappa = combine(parts, gamma, sigma)
    return MajorantValue(total, parts, gamma, kappa, mu1a, mu2a, y, sigma)


# ----------------------------------------------- independent special forms

def _plain_norms(s, coeffs, v, y):
    m = s.mesh
    res = residuals(s, coeffs, v, y)
    return (res, d_term(coeffs, v, y), _cell_sq(m, res.r1),
            _edge_sq(m, res.edges3, res.r2), _edge_sq(m, res.edges2, res.rN))


def majorant_no_weights(s, coeffs, v, y, gamma, sigma=None) -> float:
    """The form with mu1 = mu2 = 0 (stable for small rho and alpha)."""
    s1, s2, s3 = sigma or coefficient_sigma(s, coeffs)
    g1, g2, g3, g4 = gamma
    _, d, n1, n2, n3 = _plain_norms(s, coeffs, v, y)
    kappa = 1 / g1 + s1 ** 2 / g2 + s3 ** 2 / g3 + s2 ** 2 / g4
    return kappa * (g1 * d + g2 * n1 + g3 * n2 + g4 * n3)


def majorant_full_weights(s, coeffs, v, y, gamma1, gamma4, sigma=None) -> float:
    """The form with mu1 = mu2 = 1; only D and the Neumann residual remain in kappa."""
    s1, s2, s3 = sigma or coefficient_sigma(s, coeffs)
    m = s.mesh
    res, d, _, _, n3 = _plain_norms(s, coeffs, v, y)
    low = _cell_sq(m, res.r1, 1.0 / coeffs.rho) + \
        _edge_sq(m, res.edges3, res.r2, 1.0 / coeffs.alpha[res.edges3])
    lead = (1 / gamma1 + (s2 ** 2 / gamma4 if gamma4 != INF else 0.0))
    neu = 0.0 if gamma4 == INF else gamma4 * n3
    return lead * (gamma1 * d + neu) + low


def majorant_optimal_weights(s, coeffs, v, y, gamma, sigma=None) -> float:
    """The form with mu = mu_opt substituted: r1 enters with weight 1/(1 + kappa g2 rho)."""
    s1, s2, s3 = sigma or coefficient_sigma(s, coeffs)
    g1, g2, g3, g4 = gamma
    m = s.mesh
    res, d, _, _, n3 = _plain_norms(s, coeffs, v, y)
    kappa = 1 / g1 + s1 ** 2 / g2 + s3 ** 2 / g3 + s2 ** 2 / g4
    a3 = coeffs.alpha[res.edges3]
    n1 = _cell_sq(m, res.r1, 1.0 / (kappa * g2 * coeffs.rho + 1.0))
    n2 = _edge_sq(m, res.edges3, res.r2, 1.0 / (kappa * g3 * a3 + 1.0))
    return kappa * (g1 * d + g2 * n1 + g3 * n2 + g4 * n3)


# ------------------------------------------------------------ minimization

@dataclass
class MajorantOptions:
    max_sweeps: int = 10
    rtol: float = 1e-6
    solver_rtol: float = 1e-10
    gamma_cap: float = 1e6


def _flux_system(s: Scenario, coeffs: Coefficients, v: ScalarField, gamma, kappa, mu1, mu2,
                 cap: float):
    """Matrix H and vector b with J(Y) = Y.HY - 2 b.Y + const, Y interleaved (x, y) per node."""
    m = s.mesh
    n2 = 2 * m.num_nodes
    finite = [g for g in gamma if g != INF]
    top = cap * max(finite + [1.0])
    g1, g2, g3, g4 = (min(g, top) for g in gamma)
    tri = m.triangles
    dof = np.stack([2 * tri, 2 * tri + 1], axis=2).reshape(-1, 6)  # (T, 6): node-major

    # D term: kappa g1 sum_ij M_ij Y_i.A^-1 Y_j
    ainv = np.linalg.inv(coeffs.a)
    mass = local_mass()[None] * m.areas[:, None, None]
    h_d = kappa * g1 * np.einsum("tij,tde->tidje", mass, ainv).reshape(-1, 6, 6)
    grad_v = v.gradient()
    b_d = kappa * g1 * np.repeat((m.areas / 3.0)[:, None] * grad_v, 3, axis=0).reshape(-1, 6)

    # equilibrium residual: w1 int (g + div y)^2, g = f - rho v
    with np.errstate(divide="ignore", invalid="ignore"):
        low1 = np.where(mu1 > 0, mu1 ** 2 / np.where(coeffs.rho > 0, coeffs.rho, 1.0), 0.0)
    w1 = kappa * g2 * (1 - mu1) ** 2 + low1
    bdiv = m.gradients.reshape(-1, 6)
    h_r = (w1 * m.areas)[:, None, None] * np.einsum("ti,tj->tij", bdiv, bdiv)
    g_int = m.areas * (s.f - coeffs.rho * v.values[tri].mean(axis=1))
    b_r = -(w1 * g_int)[:, None] * bdiv

    rows = np.repeat(dof[:, :, None], 6, axis=2)
    cols = np.repeat(dof[:, None, :], 6, axis=1)
    h = sp.coo_matrix(((h_d + h_r).ravel(), (rows.ravel(), cols.ravel())), shape=(n2, n2))
    b = np.zeros(n2)
    np.add.at(b, dof.ravel(), (b_d + b_r).ravel())

    mats = [h]
    for tag, weight in ((3, None), (2, kappa * g4)):
        ids = m.edges_with_tag(tag)
        if ids.size == 0:
            continue
        nu = m.edge_normals[ids]
        emass = edge_mass()[None] * m.edge_lengths[ids][:, None, None]
        if tag == 3:
            alpha = coeffs.alpha[ids]
            with np.errstate(divide="ignore", invalid="ignore"):
                low2 = np.where(mu2 > 0, mu2 ** 2 / np.where(alpha > 0, alpha, 1.0), 0.0)
            w = kappa * g3 * (1 - mu2) ** 2 + low2
            data = s.G[ids, None] - alpha[:, None] * v.values[m.edges[ids]]
        else:
            w = np.full(ids.size, weight)
            data = np.repeat(s.F[ids, None], 2, axis=1)
        edof = np.stack([2 * m.edges[ids], 2 * m.edges[ids] + 1], axis=2).reshape(-1, 4)
        loc = w[:, None, None, None, None] * np.einsum("eij,ed,ef->eidjf", emass, nu, nu)
        loc = loc.reshape(-1, 4, 4)
        er = np.repeat(edof[:, :, None], 4, axis=2)
        ec = np.repeat(edof[:, None, :], 4, axis=1)
        mats.append(sp.coo_matrix((loc.ravel(), (er.ravel(), ec.ravel())), shape=(n2, n2)))
        rhs = w[:, None, None] * np.einsum("eij,ej,ed->eid", emass, data, nu)
        np.add.at(b, edof.ravel(), rhs.reshape(-1, 4).ravel())
    return sum(mats[1:], mats[0]).tocsr(), b


def minimize_majorant(s: Scenario, coeffs: Coefficients, v: ScalarField,
                      opts: MajorantOptions | None = None, sigma=None,
                      y0: FluxField | None = None) -> MajorantValue:
    """Alternate flux, multiplier and weight updates; the total never increases.

    Starts from the P1 interpolant of ``A grad v`` (or ``y0``) with zero
    weights. Each sweep minimizes the quadratic form over all P1 fluxes for
    fixed multipliers and weights, then sets the multipliers to the values
    that reproduce the squared-sum form, then sets the optimal weights.
    """
    opts = opts or MajorantOptions()
    sigma = tuple(sigma or coefficient_sigma(s, coeffs))
    m = s.mesh
    y = y0 if y0 is not None else fem.flux_of(coeffs, v)

    def refresh(y, mu1, mu2):
        gamma = gamma_opt(majorant_parts(s, coeffs, v, y, mu1, mu2), sigma)
        kappa = kappa_of(gamma, sigma)
        mu1n, mu2n = mu_opt(s, coeffs, kappa, gamma[1], gamma[2])
        parts = majorant_parts(s, coeffs, v, y, mu1n, mu2n)
        total, kappa = combine(parts, gamma, sigma)
        return MajorantValue(total, parts, gamma, kappa, mu1n, mu2n, y, sigma)

    e3 = m.edges_with_tag(3)
    best = refresh(y, np.zeros(m.num_triangles), np.zeros(e3.size))
    history = [best.total]
    status = "max_sweeps"
    for _ in range(opts.max_sweeps):
        if best.total == 0.0:
            status = "exact"
            break
        h, b = _flux_system(s, coeffs, v, best.gamma, best.kappa, best.mu1, best.mu2,
                            opts.gamma_cap)
        try:
            yvec = fem.solve_spd(h, b, rtol=opts.solver_rtol, x0=best.flux.values.ravel())
        except fem.SolverError as exc:
            logger.warning("flux subproblem failed, keeping best flux: %s", exc)
            status = "solver_failure"
            break
        cand = refresh(FluxField(m, yvec.reshape(-1, 2)), best.mu1, best.mu2)
        history.append(cand.total)
        prev = best.total
        if cand.total <= prev:
            best = cand
        if prev - cand.total <= opts.rtol * prev:
            status = "stagnated"
            break
    info = {"sweeps": len(history) - 1, "status": status}
    return MajorantValue(best.total, best.parts, best.gamma, best.kappa, best.mu1, best.mu2,
                         best.flux, sigma, tuple(history), info)


# ------------------------------------------------------- radius upper bound

def radius_upper(s: Scenario, u0: ScalarField) -> float:
    """sum_i d_i^2 / (beta_lower_i - d_i) times ||grad u0||^2, ||u0||^2, ||u0||^2_G3.

    Obtained from the majorant at ``v = u0``, ``y = A0 grad u0``, unit weights,
    after bounding the supremum over the box term by term and removing the
    residual multipliers (their limit is taken algebraically).
    """
    norms = (fem.grad_sq(u0), fem.l2_sq(u0), fem.boundary_sq(u0, 3))
    return float(sum(d * d / (bl - d) * n for d, bl, n in zip(s.delta, s.beta_lower, norms)))


def normalized_radius_upper(s: Scenario) -> float:
    return max(d * d / (bl * (bl - d)) for d, bl in zip(s.delta, s.beta_lower))


# ---------------------------------------------------- suprema over the box

def box_supremum_check(s: Scenario, coeffs: Coefficients, u0: ScalarField, y: FluxField,
                       order: int = 4) -> dict:
    """Left- and right-hand sides of the three term-wise suprema over the box.

    For the coefficient triple ``coeffs`` (a member of the box), returns
    ``{"D": (lhs, rhs), "r1": (lhs, rhs), "r2": (lhs, rhs)}``, where the
    left sides are the perturbed D, ||r1||^2 and ||r2||^2_G3 and the right
    sides their bounds in terms of mean data only. Both sides use the same
    quadrature points, so the pointwise inequalities carry over exactly.
    """
    m = s.mesh
    d1, d2, d3 = s.delta
    pts, wts = gauss_triangle(order)
    grad = u0.gradient()
    # flux and u0 at the quadrature points
    yq = np.einsum("qk,tkd->tqd", pts, y.values[m.triangles])
    uq = np.einsum("qk,tk->tq", pts, u0.values[m.triangles])
    wa = m.areas[:, None] * wts[None, :]

    ainv = np.linalg.inv(coeffs.a)
    z = np.einsum("tde,te->td", coeffs.a, grad)[:, None, :] - yq
    lhs_d = float(np.sum(wa * np.einsum("tqd,tde,tqe->tq", z, ainv, z)))
    z0 = np.einsum("tde,te->td", s.a0, grad)[:, None, :] - yq
    gnorm = np.linalg.norm(grad, axis=1)[:, None]
    rhs_d = (np.sum(wa * np.einsum("tqd,tqd->tq", z0, z0))
             + 2 * d1 * np.sum(wa * gnorm * np.linalg.norm(z0, axis=2))
             + d1 * d1 * np.sum(wa * gnorm ** 2)) / (s.beta_lower[0] - d1)

    div = fem.flux_divergence(y)[:, None]
    r1 = s.f[:, None] - coeffs.rho[:, None] * uq + div
    g0 = s.f[:, None] - s.rho0[:, None] * uq + div
    lhs_r1 = float(np.sum(wa * r1 ** 2))
    rhs_r1 = float(np.sum(wa * (g0 ** 2 + 2 * d2 * np.abs(g0) * np.abs(uq) + d2 * d2 * uq ** 2)))

    ids = m.edges_with_tag(3)
    x, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (x + 1.0)
    phi = np.column_stack([1 - t, t])
    we = m.edge_lengths[ids][:, None] * (0.5 * w)[None, :]
    ue = np.einsum("qk,ek->eq", phi, u0.values[m.edges[ids]])
    yn = np.einsum("qk,ek->eq", phi, fem.normal_trace(y, 3))
    r2 = s.G[ids, None] - coeffs.alpha[ids, None] * ue - yn
    h0 = s.G[ids, None] - s.alpha0[ids, None] * ue - yn
    lhs_r2 = float(np.sum(we * r2 ** 2))
    rhs_r2 = float(np.sum(we * (h0 ** 2 + 2 * d3 * np.abs(h0) * np.abs(ue) + d3 * d3 * ue ** 2)))
    return {"D": (lhs_d, float(rhs_d)), "r1": (lhs_r1, rhs_r1), "r2": (lhs_r2, rhs_r2)}
