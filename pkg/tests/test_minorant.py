import numpy as np
import pytest

from conftest import reference_scenario
from uncertain_radius import fem
from uncertain_radius import minorant as mn
from uncertain_radius.fem import ScalarField
from uncertain_radius.mesh import refine, unit_square_mesh
from uncertain_radius.problem import c_lower, constant_scenario, theta


def _random_v0(m, rng, scale=1.0):
    vals = scale * rng.standard_normal(m.num_nodes)
    vals[m.dirichlet_nodes] = 0.0
    return ScalarField(m, vals)


def test_minorant_fixed_examples(reference16):
    s, uh = reference16
    rng = np.random.default_rng(0)
    v = _random_v0(s.mesh, rng)
    assert mn.minorant_fixed(s.mean, v, fem.zero_field(s.mesh), s) == 0.0
    w = uh - v
    assert mn.minorant_fixed(s.mean, v, w, s) == pytest.approx(fem.bilinear(s.mean, w, w),
                                                                rel=1e-10)
    for _ in range(5):
        w = _random_v0(s.mesh, rng)
        assert mn.minorant_fixed(s.mean, uh, w, s) <= 1e-12


def test_minorant_rejects_non_v0(reference16):
    s, uh = reference16
    with pytest.raises(fem.FEMError):
        mn.minorant_radius(s, uh, fem.constant_field(s.mesh, 1.0))


def test_minorant_radius_examples(reference16):
    s, u0 = reference16
    zero = mn.minorant_radius(s, u0, fem.zero_field(s.mesh))
    assert zero.total == 0.0 and all(p == 0.0 for p in zero.parts)
    free = s.replace(budget=type(s.budget)((0.0, 0.0, 0.0)))
    w = _random_v0(s.mesh, np.random.default_rng(1))
    val = mn.minorant_radius(free, u0, w)
    assert val.total == pytest.approx(-fem.bilinear(s.mean, w, w), rel=1e-14) and val.total <= 0
    r2, lam = mn.lambda_bound(s, u0)
    assert mn.minorant_radius(s, u0, u0 * lam).total == pytest.approx(r2, rel=1e-10)


def test_minorant_bounds_perturbed_error(reference16):
    """c_lower * M(u0, w) stays below the radius realized by the worst extreme."""
    s, u0 = reference16
    best = mn.maximize_minorant(s, u0, mn.MinorantOptions(restarts=1))
    from uncertain_radius.report import sample_radius
    o = sample_radius(s, 0, u0=u0, slack=False)
    assert best.bound <= o["empirical"] * (1 + 1e-9)


def test_lambda_bound_closed_form(reference16):
    s, u0 = reference16
    r2, lam = mn.lambda_bound(s, u0)
    e0, ed = fem.bilinear(s.mean, u0, u0), fem.delta_norm(s, u0)
    assert lam == pytest.approx(ed / (e0 - ed), rel=1e-14)
    assert r2 == pytest.approx(ed * ed / (e0 - ed), rel=1e-14)
    th = theta(s)
    assert r2 >= th * th / (1 - th) * e0 * (1 - 1e-12)
    free = s.replace(budget=type(s.budget)((0.0, 0.0, 0.0)))
    assert mn.lambda_bound(free, u0) == (0.0, 0.0)


def test_lambda_bound_hand_example():
    # |||u0|||_0^2 = 2 and the delta norm 1 give lambda* = 1, r^2 = 1
    m = unit_square_mesh(4)
    s = constant_scenario(m, delta=(0.5, 0.5, 0.5))
    u = fem.solve_scenario(s)
    u = u * (1.0 / np.sqrt(fem.delta_norm(s, u)))
    e0 = fem.bilinear(s.mean, u, u)
    # every component norm is weighted by 0.5 in the delta norm and 1 in the energy norm
    assert e0 == pytest.approx(2.0, rel=1e-12)
    r2, lam = mn.lambda_bound(s, u)
    assert (r2, lam) == pytest.approx((1.0, 1.0), rel=1e-12)


@pytest.mark.parametrize("th, expect", [(0.1, 0.1 ** 2 / 0.9), (0.0, 0.0), (0.5, 0.5)])
def test_normalized_lambda_bound(th, expect):
    s = constant_scenario(unit_square_mesh(1), delta=(th,) * 3)
    assert mn.normalized_lambda_bound(s) == pytest.approx(expect, rel=1e-14, abs=0)


def test_maximize_delta_free():
    s = constant_scenario(unit_square_mesh(4))
    u0 = fem.solve_scenario(s)
    best = mn.maximize_minorant(s, u0, mn.MinorantOptions(restarts=2))
    assert best.total == pytest.approx(0.0, abs=1e-14)
    assert np.abs(best.witness.values).max() == pytest.approx(0.0, abs=1e-12)


def test_maximize_dominates_analytic_and_is_monotone():
    s = constant_scenario(unit_square_mesh(8), a0=1.3, rho0=0.8, alpha0=1.2,
                          delta=(0.4, 0.5, 0.2), beta_lower=(1, 0.6, 1), beta_upper=(1.5, 1, 1.5))
    u0 = fem.solve_scenario(s)
    analytic = c_lower(s) * mn.lambda_bound(s, u0)[0]
    short = mn.maximize_minorant(s, u0, mn.MinorantOptions(max_iter=3, restarts=2))
    long = mn.maximize_minorant(s, u0, mn.MinorantOptions(max_iter=6, restarts=2))
    assert short.bound >= analytic * (1 - 1e-12)
    assert long.bound >= short.bound * (1 - 1e-12)
    # minorize-maximize ascent: each frozen step can only gain, up to the inner solver tolerance
    hist = np.array(long.history)
    assert np.all(np.diff(hist) >= -1e-6 * np.abs(hist[1:]))


def test_frozen_model_touches_and_minorizes():
    s = constant_scenario(unit_square_mesh(6), delta=(0.3, 0.3, 0.3))
    u0 = fem.solve_scenario(s)
    rng = np.random.default_rng(2)
    w = _random_v0(s.mesh, rng, 0.1)
    assert mn.frozen_value(s, u0, w, w) == pytest.approx(mn.minorant_radius(s, u0, w).total,
                                                         rel=1e-10)
    for _ in range(5):
        z = _random_v0(s.mesh, rng, 0.1)
        assert mn.frozen_value(s, u0, w, z) <= mn.minorant_radius(s, u0, z).total + 1e-13


def test_coarse_subspace():
    m = refine(unit_square_mesh(4))
    s = constant_scenario(m, delta=(0.2, 0.2, 0.2))
    u0 = fem.solve_scenario(s)
    best = mn.maximize_minorant(s, u0, mn.MinorantOptions(coarse_levels=1, restarts=1))
    assert best.bound >= c_lower(s) * mn.lambda_bound(s, u0)[0] * (1 - 1e-12)
    with pytest.raises(fem.FEMError):
        mn.prolongation_matrix(unit_square_mesh(4), 1)


def test_lambda_scan_peaks_at_lambda_star(reference16):
    s, u0 = reference16
    r2, lam = mn.lambda_bound(s, u0)
    grid = np.linspace(0.0, 3 * lam, 61)
    vals = [mn.minorant_radius(s, u0, u0 * t).total for t in grid]
    k = int(np.argmax(vals))
    assert abs(grid[k] - lam) <= grid[1] - grid[0]
    assert max(vals) <= r2 * (1 + 1e-12)
