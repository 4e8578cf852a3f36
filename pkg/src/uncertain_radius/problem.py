"""Problem data, norm-equivalence constants and admissible perturbations.

The mean problem is

    -div(A0 grad u) + rho0 u = f   in Omega,
    u = 0 on G1,   n.A0 grad u = F on G2,   alpha0 u + n.A0 grad u = G on G3,

and the admissible coefficients are ``A0 + d1 Psi``, ``rho0 + d2 psi_rho``,
``alpha0 + d3 psi_alpha`` with ``|Psi| <= 1`` (spectral norm) and
``|psi_rho|, |psi_alpha| <= 1`` pointwise. All coefficients are piecewise
constant: per cell for ``A`` and ``rho``, per boundary edge for ``alpha``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, refine

SIGMA_CONVENTIONS = ("derived", "combined")

# Sharp embedding constants of the unit square with G1 = left side,
# G2 = top + bottom, G3 = right side.
#   C1: first eigenvalue of -Laplace (Dirichlet left, Neumann elsewhere) is (pi/2)^2.
#   C2: smallest Steklov-type eigenvalue on top+bottom is (pi/2) tanh(pi/4).
#   C3: w(1,y)^2 <= int_0^1 |d_x w|^2 dx by Cauchy-Schwarz, equality for w = x.
UNIT_SQUARE_EMBEDDING = (
    4.0 / math.pi ** 2,
    2.0 / (math.pi * math.tanh(math.pi / 4.0)),
    1.0,
)


class ScenarioError(ValueError):
    """Invalid problem data."""


@dataclass(frozen=True)
class Coefficients:
    """A coefficient triple: ``a`` (T, 2, 2), ``rho`` (T,), ``alpha`` (E,).

    ``alpha`` is indexed like ``mesh.edges``; entries on edges not tagged 3
    are ignored.
    """

    a: np.ndarray
    rho: np.ndarray
    alpha: np.ndarray

    def min_eig_a(self) -> float:
        return float(np.linalg.eigvalsh(self.a)[:, 0].min())


@dataclass(frozen=True)
class UncertaintyBudget:
    delta: tuple[float, float, float]

    def __post_init__(self):
        if any(d < 0 for d in self.delta):
            raise ScenarioError(f"uncertainty magnitudes must be >= 0, got {self.delta}")


@dataclass(frozen=True, eq=False)
class Scenario:
    mesh: Mesh
    a0: np.ndarray
    rho0: np.ndarray
    alpha0: np.ndarray
    f: np.ndarray
    F: np.ndarray
    G: np.ndarray
    budget: UncertaintyBudget
    beta_lower: tuple[float, float, float]
    beta_upper: tuple[float, float, float]
    embedding: tuple[float, float, float] = UNIT_SQUARE_EMBEDDING
    sigma_convention: str = "derived"
    config: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        m = self.mesh
        nt, ne = m.num_triangles, len(m.edges)
        shapes = {"a0": (nt, 2, 2), "rho0": (nt,), "alpha0": (ne,),
                  "f": (nt,), "F": (ne,), "G": (ne,)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ScenarioError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
        bl, bu = self.beta_lower, self.beta_upper
        delta = self.budget.delta
        for i in range(3):
            if not bl[i] > 0:
                raise ScenarioError(f"beta_lower{i + 1} must be > 0")
            if bu[i] < bl[i]:
                raise ScenarioError(f"beta_upper{i + 1} < beta_lower{i + 1}")
            if not delta[i] < bl[i]:
                raise ScenarioError(
                    f"delta{i + 1} = {delta[i]} must be < beta_lower{i + 1} = {bl[i]}")
        if not np.allclose(self.a0, np.swapaxes(self.a0, 1, 2), rtol=0, atol=1e-14):
            raise ScenarioError("a0 is not symmetric")
        tol = 1e-12
        eig = np.linalg.eigvalsh(self.a0)
        bad = np.flatnonzero((eig[:, 0] < bl[0] * (1 - tol)) | (eig[:, 1] > bu[0] * (1 + tol)))
        if bad.size:
            raise ScenarioError(f"a0 eigenvalues on cell {bad[0]} outside [beta_lower1, beta_upper1]")
        bad = np.flatnonzero((self.rho0 < bl[1] * (1 - tol)) | (self.rho0 > bu[1] * (1 + tol)))
        if bad.size:
            raise ScenarioError(f"rho0 on cell {bad[0]} outside [beta_lower2, beta_upper2]")
        robin = m.edge_tags == 3
        a3 = self.alpha0[robin]
        bad = np.flatnonzero((a3 < bl[2] * (1 - tol)) | (a3 > bu[2] * (1 + tol)))
        if bad.size:
            raise ScenarioError(f"alpha0 on Robin edge {bad[0]} outside [beta_lower3, beta_upper3]")
        if not np.any(self.f != 0):
            raise ScenarioError("source f is identically zero")
        if any(not c > 0 for c in self.embedding):
            raise ScenarioError(f"embedding constants must be > 0, got {self.embedding}")
        if self.sigma_convention not in SIGMA_CONVENTIONS:
            raise ScenarioError(f"sigma_convention must be one of {SIGMA_CONVENTIONS}")

    @property
    def delta(self) -> tuple[float, float, float]:
        return self.budget.delta

    @property
    def mean(self) -> Coefficients:
        return Coefficients(self.a0, self.rho0, self.alpha0)

    def replace(self, **changes) -> "Scenario":
        fields = dict(mesh=self.mesh, a0=self.a0, rho0=self.rho0, alpha0=self.alpha0,
                      f=self.f, F=self.F, G=self.G, budget=self.budget,
                      beta_lower=self.beta_lower, beta_upper=self.beta_upper,
                      embedding=self.embedding, sigma_convention=self.sigma_convention,
                      config=self.config)
        if "delta" in changes:
            changes["budget"] = UncertaintyBudget(tuple(float(d) for d in changes.pop("delta")))
        fields.update(changes)
        return Scenario(**fields)


def constant_scenario(mesh: Mesh, *, a0=1.0, rho0=1.0, alpha0=1.0, f=1.0, F=0.0, G=0.0,
                      delta=(0.0, 0.0, 0.0), beta_lower=None, beta_upper=None,
                      embedding=UNIT_SQUARE_EMBEDDING, sigma_convention="derived") -> Scenario:
    """Scenario with spatially constant data.

    ``a0`` may be a scalar (multiple of the identity) or a 2x2 matrix. Bounds
    default to the tightest ones admitted by the data.
    """
    nt, ne = mesh.num_triangles, len(mesh.edges)
    a = np.asarray(a0, dtype=float)
    a = a * np.eye(2) if a.ndim == 0 else a.reshape(2, 2)
    eig = np.linalg.eigvalsh(a)
    if beta_lower is None:
        beta_lower = (float(eig[0]), float(rho0), float(alpha0))
    if beta_upper is None:
        beta_upper = (float(eig[1]), float(rho0), float(alpha0))
    return Scenario(
        mesh=mesh,
        a0=np.broadcast_to(a, (nt, 2, 2)).copy(),
        rho0=np.full(nt, float(rho0)),
        alpha0=np.full(ne, float(alpha0)),
        f=np.full(nt, float(f)),
        F=np.full(ne, float(F)),
        G=np.full(ne, float(G)),
        budget=UncertaintyBudget(tuple(float(d) for d in delta)),
        beta_lower=tuple(float(b) for b in beta_lower),
        beta_upper=tuple(float(b) for b in beta_upper),
        embedding=tuple(float(c) for c in embedding),
        sigma_convention=sigma_convention,
    )


def cell_parents(fine: Mesh) -> np.ndarray:
    """Coarse cell index of every cell of a mesh produced by ``refine``."""
    return np.arange(fine.num_triangles) % fine.coarse.num_triangles


def edge_parents(fine: Mesh) -> np.ndarray:
    return np.arange(len(fine.edges)) // 2


def refine_scenario(s: Scenario, levels: int = 1) -> Scenario:
    """The same continuous problem on a uniformly refined mesh."""
    for _ in range(levels):
        fine = refine(s.mesh)
        c, e = cell_parents(fine), edge_parents(fine)
        s = s.replace(mesh=fine, a0=s.a0[c], rho0=s.rho0[c], alpha0=s.alpha0[e],
                      f=s.f[c], F=s.F[e], G=s.G[e])
    return s


def refine_coefficients(fine: Mesh, coeffs: Coefficients) -> Coefficients:
    c, e = cell_parents(fine), edge_parents(fine)
    return Coefficients(coeffs.a[c], coeffs.rho[c], coeffs.alpha[e])


def c_upper(s: Scenario) -> float:
    """max_i beta_upper_i / (beta_lower_i - delta_i)."""
    return max(bu / (bl - d) for bu, bl, d in zip(s.beta_upper, s.beta_lower, s.delta))


def c_lower(s: Scenario) -> float:
    """min_i beta_lower_i / (beta_upper_i + delta_i)."""
    return min(bl / (bu + d) for bu, bl, d in zip(s.beta_upper, s.beta_lower, s.delta))


def theta(s: Scenario) -> float:
    return min(d / bu for d, bu in zip(s.delta, s.beta_upper))


def sigma_constants(s: Scenario, convention: str | None = None,
                    ellipticity: float | None = None) -> tuple[float, float, float]:
    """Multipliers of the Friedrichs/trace residual terms of the majorant.

    ``sigma_k = sqrt(C_k / beta)`` with ``beta = beta_lower1`` unless an
    explicit lower ellipticity bound of the diffusion matrix is given. The
    ``"combined"`` convention multiplies C2 and C3 by C1.
    """
    convention = convention or s.sigma_convention
    if convention not in SIGMA_CONVENTIONS:
        raise ScenarioError(f"unknown sigma convention {convention!r}")
    beta = s.beta_lower[0] if ellipticity is None else ellipticity
    c1, c2, c3 = s.embedding
    if convention == "combined":
        c2, c3 = c1 * c2, c1 * c3
    return (math.sqrt(c1 / beta), math.sqrt(c2 / beta), math.sqrt(c3 / beta))


@dataclass(frozen=True)
class Perturbation:
    """Unit-bounded perturbation fields, shapes like the coefficient triple."""

    psi_a: np.ndarray
    psi_rho: np.ndarray
    psi_alpha: np.ndarray
    label: str = ""

    def validate(self, tol: float = 1e-12):
        if not np.allclose(self.psi_a, np.swapaxes(self.psi_a, 1, 2), rtol=0, atol=1e-14):
            raise ScenarioError("Psi is not symmetric")
        norms = np.abs(np.linalg.eigvalsh(self.psi_a)).max(axis=1)
        bad = np.flatnonzero(norms > 1 + tol)
        if bad.size:
            raise ScenarioError(f"|Psi| = {norms[bad[0]]} > 1 on cell {bad[0]}")
        bad = np.flatnonzero(np.abs(self.psi_rho) > 1 + tol)
        if bad.size:
            raise ScenarioError(f"|psi_rho| > 1 on cell {bad[0]}")
        bad = np.flatnonzero(np.abs(self.psi_alpha) > 1 + tol)
        if bad.size:
            raise ScenarioError(f"|psi_alpha| > 1 on edge {bad[0]}")


def perturb(s: Scenario, p: Perturbation) -> Coefficients:
    p.validate()
    d1, d2, d3 = s.delta
    return Coefficients(
        a=s.a0 + d1 * p.psi_a,
        rho=s.rho0 + d2 * p.psi_rho,
        alpha=s.alpha0 + d3 * p.psi_alpha,
    )


def constant_perturbation(s: Scenario, psi_a, psi_rho: float, psi_alpha: float,
                          label: str = "") -> Perturbation:
    nt, ne = s.mesh.num_triangles, len(s.mesh.edges)
    pa = np.asarray(psi_a, dtype=float)
    pa = pa * np.eye(2) if pa.ndim == 0 else pa.reshape(2, 2)
    return Perturbation(np.broadcast_to(pa, (nt, 2, 2)).copy(), np.full(nt, float(psi_rho)),
                        np.full(ne, float(psi_alpha)), label)


def refine_perturbation(fine: Mesh, p: Perturbation) -> Perturbation:
    c, e = cell_parents(fine), edge_parents(fine)
    return Perturbation(p.psi_a[c], p.psi_rho[c], p.psi_alpha[e], p.label)


def extreme_perturbations(s: Scenario) -> list[Perturbation]:
    """The 8 constant sign combinations of (Psi = +-I, psi_rho = +-1, psi_alpha = +-1).

    The first entry is (-I, -1, -1), which softens all three coefficients.
    """
    out = []
    for k, (sa, sr, sal) in enumerate(itertools.product((-1.0, 1.0), repeat=3)):
        out.append(constant_perturbation(s, sa, sr, sal, label=f"extreme:{k}"))
    return out


def random_perturbation(s: Scenario, rng: np.random.Generator, label: str = "") -> Perturbation:
    """Per-cell random admissible perturbation.

    Psi: symmetric matrix of i.i.d. uniform entries rescaled to a spectral
    norm drawn uniformly from [0, 1]. Scalars: i.i.d. uniform in [-1, 1].
    """
    nt, ne = s.mesh.num_triangles, len(s.mesh.edges)
    raw = rng.uniform(-1.0, 1.0, size=(nt, 2, 2))
    sym = 0.5 * (raw + np.swapaxes(raw, 1, 2))
    norm = np.abs(np.linalg.eigvalsh(sym)).max(axis=1)
    norm[norm == 0] = 1.0
    target = rng.uniform(0.0, 1.0, size=nt)
    psi_a = sym * (target / norm)[:, None, None]
    psi_rho = rng.uniform(-1.0, 1.0, size=nt)
    psi_alpha = rng.uniform(-1.0, 1.0, size=ne)
    return Perturbation(psi_a, psi_rho, psi_alpha, label)


def flux_aligned_perturbation(s: Scenario, grad_u0: np.ndarray, label: str = "flux_aligned") -> Perturbation:
    """Psi = -(g g^T)/|g|^2 per cell (softening along the mean gradient), psi = -1."""
    nt, ne = s.mesh.num_triangles, len(s.mesh.edges)
    g2 = np.einsum("ti,ti->t", grad_u0, grad_u0)
    outer = np.einsum("ti,tj->tij", grad_u0, grad_u0)
    psi_a = np.where(g2[:, None, None] > 0, -outer / np.where(g2 > 0, g2, 1.0)[:, None, None],
                     -np.eye(2))
    return Perturbation(psi_a, np.full(nt, -1.0), np.full(ne, -1.0), label)
