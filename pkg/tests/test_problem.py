import math

import numpy as np
import pytest

from uncertain_radius.mesh import refine, unit_square_mesh
from uncertain_radius.problem import (UNIT_SQUARE_EMBEDDING, ScenarioError, c_lower, c_upper,
                                      constant_perturbation, constant_scenario,
                                      extreme_perturbations, flux_aligned_perturbation, perturb,
                                      random_perturbation, refine_scenario, sigma_constants, theta)

M = unit_square_mesh(2)


def scen(delta, bl=(1, 1, 1), bu=(1, 1, 1), **kw):
    return constant_scenario(M, delta=delta, beta_lower=bl, beta_upper=bu, **kw)


@pytest.mark.parametrize("kw, cu, cl", [
    (dict(delta=(0.1, 0.1, 0.1)), 1 / 0.9, 1 / 1.1),
    (dict(delta=(0, 0, 0)), 1.0, 1.0),
    (dict(delta=(0.5, 0, 0), bu=(2, 1, 1)), 4.0, 0.4),
])
def test_equivalence_constants(kw, cu, cl):
    s = scen(**kw)
    assert c_upper(s) == pytest.approx(cu, rel=1e-15)
    assert c_lower(s) == pytest.approx(cl, rel=1e-15)


@pytest.mark.parametrize("delta, bu, th", [
    ((0.1, 0.1, 0.1), (1, 1, 1), 0.1),
    ((0, 0.1, 0.1), (1, 1, 1), 0.0),
    ((0.2, 0.3, 0.4), (2, 3, 4), 0.1),
])
def test_theta(delta, bu, th):
    s = constant_scenario(M, a0=bu[0], rho0=bu[1], alpha0=bu[2], delta=delta,
                          beta_lower=(1, 1, 1), beta_upper=bu)
    assert theta(s) == pytest.approx(th, rel=1e-15)


@pytest.mark.parametrize("emb, bl1, expect", [
    ((1, 1, 1), 1.0, (1, 1, 1)),
    ((0.25, 1, 1), 1.0, (0.5, 1, 1)),
    ((1, 1, 1), 4.0, (0.5, 0.5, 0.5)),
])
def test_sigma(emb, bl1, expect):
    s = constant_scenario(M, a0=bl1, delta=(0, 0, 0), embedding=emb,
                          beta_lower=(bl1, 1, 1), beta_upper=(bl1, 1, 1))
    assert sigma_constants(s) == pytest.approx(expect, rel=1e-15)


def test_sigma_combined_convention():
    s = constant_scenario(M, embedding=(0.25, 1, 4), sigma_convention="combined")
    assert sigma_constants(s) == pytest.approx((0.5, 0.5, 1.0))
    with pytest.raises(ScenarioError):
        sigma_constants(s, "other")


def test_unit_square_embedding_values():
    c1, c2, c3 = UNIT_SQUARE_EMBEDDING
    assert c1 == pytest.approx(4 / math.pi ** 2)
    assert c2 == pytest.approx(2 / (math.pi * math.tanh(math.pi / 4)))
    assert c3 == 1.0


def test_perturb_examples():
    s = scen((0.1, 0.1, 0.1))
    zero = constant_perturbation(s, 0.0, 0.0, 0.0)
    c = perturb(s, zero)
    np.testing.assert_array_equal(c.a, s.a0)
    np.testing.assert_array_equal(c.rho, s.rho0)
    soft = perturb(s, constant_perturbation(s, -1.0, 1.0, 0.0))
    np.testing.assert_allclose(soft.a, 0.9 * np.broadcast_to(np.eye(2), s.a0.shape))
    np.testing.assert_allclose(soft.rho, 1.1)


def test_extremes():
    s = scen((0.1, 0.2, 0.3))
    ext = extreme_perturbations(s)
    assert len(ext) == 8
    first = perturb(s, ext[0])
    for p in ext:
        c = perturb(s, p)
        assert np.all(c.rho >= first.rho) and np.all(c.alpha >= first.alpha)
        assert np.all(np.linalg.eigvalsh(c.a) >= np.linalg.eigvalsh(first.a) - 1e-15)
    free = scen((0, 0, 0))
    coeffs = [perturb(free, p) for p in extreme_perturbations(free)]
    for c in coeffs[1:]:
        np.testing.assert_array_equal(c.a, coeffs[0].a)
        np.testing.assert_array_equal(c.rho, coeffs[0].rho)


def test_random_and_flux_aligned_admissible():
    s = scen((0.1, 0.1, 0.1))
    rng = np.random.default_rng(0)
    for _ in range(5):
        random_perturbation(s, rng).validate()
    g = rng.standard_normal((M.num_triangles, 2))
    g[0] = 0.0
    p = flux_aligned_perturbation(s, g)
    p.validate()
    np.testing.assert_allclose(np.einsum("tij,tj->ti", p.psi_a, g)[1:], -g[1:])


def test_invalid_perturbation_rejected():
    s = scen((0.1, 0.1, 0.1))
    with pytest.raises(ScenarioError):
        perturb(s, constant_perturbation(s, -1.5, 0.0, 0.0))


@pytest.mark.parametrize("kw", [
    dict(delta=(1.0, 0, 0)),
    dict(delta=(-0.1, 0, 0)),
    dict(delta=(0, 0, 0), bl=(1, 1, 1), bu=(0.5, 1, 1)),
])
def test_invalid_budget(kw):
    with pytest.raises(ScenarioError):
        scen(**kw)


def test_refine_scenario_keeps_data():
    s = constant_scenario(M, f=2.0, G=0.5, delta=(0.1, 0.1, 0.1))
    f = refine_scenario(s)
    assert f.mesh.num_triangles == 4 * M.num_triangles
    assert np.all(f.f == 2.0) and np.all(f.G == 0.5)
    assert f.delta == s.delta
