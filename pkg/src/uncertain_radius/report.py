"""Two-sided radius bounds, the sampling oracle, and the JSON report."""
from __future__ import annotations

import copy
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fem, majorant as mj, minorant as mn
from .fem import ScalarField
from .mesh import prolongate
from .problem import (Perturbation, Scenario, c_lower, c_upper, extreme_perturbations,
                      flux_aligned_perturbation, perturb, random_perturbation,
                      refine_perturbation, refine_scenario, sigma_constants, theta)

logger = logging.getLogger(__name__)

# absolute allowance (normalized units) for solver round-off in the sandwich check
ROUNDOFF = 1e-9


@dataclass
class BoundsReport:
    """Nested dict with the stable key names used in the JSON report."""

    data: dict
    u0: ScalarField | None = None
    flux: fem.FluxField | None = None
    witness: ScalarField | None = None

    def __getitem__(self, key):
        return self.data[key]

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.data), indent=2, sort_keys=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def from_json(x):
    """Inverse of the infinity encoding used in reports."""
    return math.inf if x == "inf" else (-math.inf if x == "-inf" else x)


def scenario_echo(s: Scenario) -> dict:
    m = s.mesh
    return {
        "source": copy.deepcopy(s.config),
        "nodes": m.num_nodes,
        "triangles": m.num_triangles,
        "delta": list(s.delta),
        "beta_lower": list(s.beta_lower),
        "beta_upper": list(s.beta_upper),
        "embedding": list(s.embedding),
        "sigma_convention": s.sigma_convention,
    }


def ordering_ratio(s: Scenario) -> float:
    """C_upper * normalized upper / (C_lower * normalized lower); +inf when theta = 0."""
    lo = c_lower(s) * mn.normalized_lambda_bound(s)
    up = c_upper(s) * mj.normalized_radius_upper(s)
    if lo == 0.0:
        return math.inf
    return up / lo


def strong_ordering_bound(s: Scenario) -> float | None:
    """(bu1/bl1) (bu1 + d1)/(bl1 - d1), asserted when index 1 attains every extremum."""
    bl, bu, d = s.beta_lower, s.beta_upper, s.delta
    if d[0] <= 0:
        return None
    cu = [bu[i] / (bl[i] - d[i]) for i in range(3)]
    cl = [bl[i] / (bu[i] + d[i]) for i in range(3)]
    th = [d[i] / bu[i] for i in range(3)]
    up = [d[i] ** 2 / (bl[i] * (bl[i] - d[i])) for i in range(3)]
    if cu[0] == max(cu) and cl[0] == min(cl) and th[0] == min(th) and up[0] == max(up):
        return (bu[0] / bl[0]) * (bu[0] + d[0]) / (bl[0] - d[0])
    return None


def verify_ordering(s: Scenario) -> tuple[float, bool]:
    ratio = ordering_ratio(s)
    if math.isinf(ratio):
        return ratio, True
    ok = ratio >= 1.0
    strong = strong_ordering_bound(s)
    if strong is not None:
        ok = ok and ratio >= strong * (1 - 1e-12)
    return ratio, ok


def compute_bounds(s: Scenario, minorant_opts: mn.MinorantOptions | None = None,
                   majorant_opts: mj.MajorantOptions | None = None,
                   rtol: float = 1e-11) -> BoundsReport:
    """Solve the mean problem and evaluate every bound; the oracle section stays empty."""
    u0 = fem.solve_scenario(s, rtol=rtol)
    e0 = fem.bilinear(s.mean, u0, u0)
    cu, cl, th = c_upper(s), c_lower(s), theta(s)

    r2_low, lam = mn.lambda_bound(s, u0)
    best = mn.maximize_minorant(s, u0, minorant_opts)
    r2_up = mj.radius_upper(s, u0)
    lower_norm = cl * mn.normalized_lambda_bound(s)
    upper_norm = cu * mj.normalized_radius_upper(s)

    maj = mj.minimize_majorant(s, s.mean, u0, majorant_opts)

    if all(d == 0.0 for d in s.delta):
        ratio, passed = 1.0, True
    else:
        ratio, passed = verify_ordering(s)

    data = {
        "scenario": scenario_echo(s),
        "constants": {
            "c_upper": cu, "c_lower": cl, "theta": th,
            "sigma": list(sigma_constants(s)),
            "sigma_derived": list(sigma_constants(s, "derived")),
            "sigma_combined": list(sigma_constants(s, "combined")),
        },
        "mean": {"energy_norm": math.sqrt(e0), "energy_sq": e0,
                 "delta_norm_sq": fem.delta_norm(s, u0), "h": s.mesh.h},
        "lower": {
            "analytic": cl * r2_low,
            "optimized": max(best.bound, cl * r2_low),
            "normalized": lower_norm,
            "lambda_star": lam,
            "minorant_parts": list(best.parts),
            "optimizer": {"start": best.info.get("start"), "iterations": best.info.get("iterations")},
        },
        "upper": {"value": cu * r2_up, "normalized": upper_norm},
        "majorant": {
            "total": maj.total,
            "parts": list(maj.parts),
            "gamma": list(maj.gamma),
            "kappa": maj.kappa,
            "sweeps": maj.info["sweeps"],
            "flux_file": None,
        },
        "oracle": None,
        "ordering": {"ratio": ratio, "pass": passed},
    }
    return BoundsReport(data, u0=u0, flux=maj.flux, witness=best.witness)


# ------------------------------------------------------------------- oracle

@dataclass(frozen=True)
class Sample:
    label: str
    radius_sq: float


def _sample_value(s: Scenario, u0: ScalarField, p: Perturbation, rtol: float) -> float:
    u = fem.solve_scenario(s, perturb(s, p), rtol=rtol)
    diff = u0 - u
    return fem.bilinear(s.mean, diff, diff)


def candidates(s: Scenario, u0: ScalarField, num_random: int, seed: int) -> list[Perturbation]:
    """Extremes, the flux-aligned candidate, then ``num_random`` random draws."""
    out = list(extreme_perturbations(s))
    out.append(flux_aligned_perturbation(s, u0.gradient()))
    rng = np.random.default_rng(seed)
    out += [random_perturbation(s, rng, label=f"random:{k}") for k in range(num_random)]
    return out


def sample_radius(s: Scenario, num_random: int = 0, seed: int = 0, threads: int = 1,
                  u0: ScalarField | None = None, rtol: float = 1e-11,
                  slack: bool = True) -> dict:
    """Brute-force estimate of the discrete radius over a candidate set.

    The slack term repeats the mean solve and the worst sample on the once
    refined mesh and takes three times the larger of (a) the change of the
    worst normalized radius and (b) that radius times the relative squared
    change of the mean solution. ``slack_energy`` is 3 |||u0_h - u0_h/2|||^2 / |||u0|||^2.
    """
    if num_random < 0:
        raise ValueError("num_random must be >= 0")
    u0 = u0 if u0 is not None else fem.solve_scenario(s, rtol=rtol)
    e0 = fem.bilinear(s.mean, u0, u0)
    cands = candidates(s, u0, num_random, seed)

    def run(p):
        try:
            return Sample(p.label, _sample_value(s, u0, p, rtol))
        except fem.SolverError as exc:
            logger.warning("sample %s skipped: %s", p.label, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, cands))
    else:
        results = [run(p) for p in cands]
    done = [(i, r) for i, r in enumerate(results) if r is not None]
    if not done:
        raise fem.SolverError("every oracle sample failed", math.nan)
    idx, worst = done[0]
    for i, r in done[1:]:
        if r.radius_sq > worst.radius_sq:
            idx, worst = i, r
    out = {
        "samples": len(done),
        "skipped": len(cands) - len(done),
        "empirical": worst.radius_sq,
        "empirical_normalized": worst.radius_sq / e0 if e0 > 0 else 0.0,
        "worst_id": worst.label,
        "slack": None,
        "slack_energy": None,
        "values": {r.label: r.radius_sq for _, r in done},
    }
    if slack:
        fine = refine_scenario(s)
        u0f = fem.solve_scenario(fine, rtol=rtol)
        e0f = fem.bilinear(fine.mean, u0f, u0f)
        coarse_on_fine = ScalarField(fine.mesh, prolongate(u0.values, fine.mesh))
        d = u0f - coarse_on_fine
        rel = fem.bilinear(fine.mean, d, d) / e0f if e0f > 0 else 0.0
        pf = refine_perturbation(fine.mesh, cands[idx])
        worst_fine = _sample_value(fine, u0f, pf, rtol) / e0f if e0f > 0 else 0.0
        change = abs(worst_fine - out["empirical_normalized"])
        out["slack"] = 3.0 * max(change, out["empirical_normalized"] * rel) + ROUNDOFF
        out["slack_energy"] = 3.0 * rel
        out["worst_fine_normalized"] = worst_fine
    return out


def sandwich(report: dict) -> tuple[bool, float, float, float]:
    """lower.normalized - slack <= oracle.empirical_normalized <= upper.normalized + slack."""
    o = report["oracle"]
    lo, up = report["lower"]["normalized"], report["upper"]["normalized"]
    val, sl = o["empirical_normalized"], o["slack"] or ROUNDOFF
    return (lo - sl <= val <= up + sl), lo, val, up


def sweep(values, build, num_random: int = 0, seed: int = 0,
          threads: int = 1) -> list[dict]:
    """Rows with delta, lower_norm, upper_norm, empirical_norm, ratio.

    ``build(value)`` returns the scenario for one parameter value.
    """
    rows = []
    for v in values:
        sv = build(v)
        o = sample_radius(sv, num_random, seed, threads, slack=False)
        ratio = 1.0 if all(d == 0 for d in sv.delta) else ordering_ratio(sv)
        rows.append({"delta": v,
                     "lower_norm": c_lower(sv) * mn.normalized_lambda_bound(sv),
                     "upper_norm": c_upper(sv) * mj.normalized_radius_upper(sv),
                     "empirical_norm": o["empirical_normalized"],
                     "ratio": ratio})
    return rows


# ------------------------------------------------------------ verify suite

@dataclass(frozen=True)
class Check:
    name: str
    line: str
    ok: bool


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _check(name, value, op, ref, ok, extra=""):
    tail = f" {extra}" if extra else ""
    return Check(name, f"{name}: {_fmt(value)} {op} {_fmt(ref)} {'PASS' if ok else 'FAIL'}{tail}", ok)


def verify_suite(s: Scenario, num_random: int = 10, seed: int = 0, threads: int = 1,
                 minorant_opts: mn.MinorantOptions | None = None) -> list[Check]:
    """Run the invariant checks on one scenario; one :class:`Check` per property."""
    rng = np.random.default_rng(seed)
    m = s.mesh
    checks = []
    cu, cl = c_upper(s), c_lower(s)
    checks.append(Check("constants", f"constants: c_lower {_fmt(cl)} <= 1 <= c_upper {_fmt(cu)} "
                        f"{'PASS' if cl <= 1 <= cu else 'FAIL'}", cl <= 1 <= cu))

    system = fem.assemble(s, s.mean)
    u0 = fem.solve(system, rtol=1e-11)
    e0 = fem.bilinear(s.mean, u0, u0)
    resid = system.matrix @ u0.values - system.rhs
    resid[m.dirichlet_nodes] = 0.0
    galerkin = float(np.abs(resid).max())
    ref = 1e-9 * float(np.linalg.norm(system.rhs))
    checks.append(_check("galerkin", galerkin, "<=", ref, galerkin <= ref))

    bad = 0
    triples = [perturb(s, p) for p in extreme_perturbations(s)]
    for _ in range(20):
        v = ScalarField(m, rng.standard_normal(m.num_nodes))
        n0 = fem.bilinear(s.mean, v, v)
        for c in triples:
            nv = fem.bilinear(c, v, v)
            tol = 1e-12 * n0
            bad += not (cl * nv <= n0 + tol and n0 <= cu * nv + tol)
    checks.append(_check("norm_equivalence_violations", bad, "==", 0, bad == 0))

    worst = 0.0
    for _ in range(5):
        vals = rng.standard_normal(m.num_nodes)
        vals[m.dirichlet_nodes] = 0.0
        v = ScalarField(m, vals)
        w = u0 - v
        exact = fem.bilinear(s.mean, w, w)
        worst = max(worst, abs(mn.minorant_fixed(s.mean, v, w, s) - exact) / exact)
    checks.append(_check("minorant_equality", worst, "<=", 1e-10, worst <= 1e-10))

    r2_low, lam = mn.lambda_bound(s, u0)
    at_lam = mn.minorant_radius(s, u0, lam * u0).total
    err = abs(at_lam - r2_low) / max(r2_low, 1e-300) if r2_low > 0 else abs(at_lam)
    checks.append(_check("lambda_consistency", err, "<=", 1e-10, err <= 1e-10))

    best = mn.maximize_minorant(s, u0, minorant_opts)
    checks.append(_check("optimized_vs_analytic", best.bound, ">=", cl * r2_low,
                         best.bound >= cl * r2_low - 1e-12 * max(1.0, abs(cl * r2_low))))

    worst = 0.0
    for _ in range(3):
        y = fem.FluxField(m, rng.standard_normal((m.num_nodes, 2)))
        vals = rng.standard_normal(m.num_nodes)
        vals[m.dirichlet_nodes] = 0.0
        v = ScalarField(m, vals)
        mu1 = rng.uniform(0, 1, m.num_triangles)
        mu2 = rng.uniform(0, 1, m.edges_with_tag(3).size)
        parts = mj.majorant_parts(s, s.mean, v, y, mu1, mu2)
        sig = mj.coefficient_sigma(s, s.mean)
        g = mj.gamma_opt(parts, sig)
        a = mj.majorant(s, s.mean, v, y, g, mu1, mu2, sig).total
        b = mj.majorant_sqform(s, s.mean, v, y, mu1, mu2, sig)
        worst = max(worst, abs(a - b) / b)
    checks.append(_check("gamma_identity", worst, "<=", 1e-12, worst <= 1e-12))

    y0 = fem.flux_of(s.mean, u0)
    worst = -math.inf
    for p in extreme_perturbations(s):
        sup = mj.box_supremum_check(s, perturb(s, p), u0, y0)
        for lhs, rhs in sup.values():
            worst = max(worst, (lhs - rhs) / max(rhs, 1e-300))
    checks.append(_check("box_suprema_excess", worst, "<=", 1e-10, worst <= 1e-10))

    data = {"lower": {"normalized": cl * mn.normalized_lambda_bound(s)},
            "upper": {"normalized": cu * mj.normalized_radius_upper(s)},
            "oracle": sample_radius(s, num_random, seed, threads, u0=u0)}
    ok, lo, val, up = sandwich(data)
    sl = data["oracle"]["slack"]
    checks.append(Check("sandwich", f"sandwich: {_fmt(lo)} <= {_fmt(val)} <= {_fmt(up)} "
                        f"(slack {_fmt(sl)}) {'PASS' if ok else 'FAIL'}", ok))

    ratio, ok = verify_ordering(s)
    shown = "inf" if math.isinf(ratio) else f"{ratio:.4f}"
    checks.append(Check("ordering", f"ordering: {shown} >= 1 {'PASS' if ok else 'FAIL'} "
                        f"(ratio {_fmt(ratio)})", ok))
    return checks
