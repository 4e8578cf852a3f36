import numpy as np
import pytest

from uncertain_radius import fem
from uncertain_radius.fem import FluxField, ScalarField
from uncertain_radius.mesh import unit_square_mesh
from uncertain_radius.problem import Coefficients, constant_scenario


def scen(n=4, **kw):
    return constant_scenario(unit_square_mesh(n), **kw)


def test_smallest_system():
    s = scen(1)
    system = fem.assemble(s, s.mean)
    assert system.matrix.shape == (4, 4)
    assert s.mesh.free_nodes.size == 2
    assert np.all(s.mesh.nodes[s.mesh.free_nodes, 0] == 1.0)


def test_load_vector_linear():
    # scenarios require f != 0, so the homogeneous case uses boundary data only
    zero_f = fem.load_vector(scen(f=1e-300, F=0.0, G=0.0))
    assert np.abs(zero_f).max() < 1e-299
    np.testing.assert_array_equal(fem.load_vector(scen(f=2.0, G=0.3, F=-1)),
                                  2 * fem.load_vector(scen(f=1.0, G=0.15, F=-0.5)))


def test_zero_load_zero_solution():
    s = scen()
    system = fem.assemble(s, s.mean)
    zero = fem.LinearSystem(system.matrix, np.zeros_like(system.rhs), system.constrained, s.mesh)
    assert not np.any(fem.solve(zero).values)


def test_galerkin_orthogonality():
    s = scen(8, f=1.0, F=0.3, G=-0.2, rho0=2.0, a0=[[2.0, 0.5], [0.5, 1.0]],
             beta_lower=(0.5, 2, 1), beta_upper=(3, 2, 1))
    system = fem.assemble(s, s.mean)
    u = fem.solve(system, rtol=1e-12)
    resid = system.matrix @ u.values - system.rhs
    resid[s.mesh.dirichlet_nodes] = 0
    assert np.abs(resid).max() <= 1e-9 * np.linalg.norm(system.rhs)
    assert u.in_v0()


def test_strip_parabola():
    # -u'' = 1, u(0) = 0, u(1) + u'(1) = 0: u = -x^2/2 + 3x/4; no y-dependence
    s = scen(16, rho0=1e-12, alpha0=1.0, f=1.0,
             beta_lower=(1, 1e-12, 1), beta_upper=(1, 1e-12, 1))
    u = fem.solve_scenario(s, rtol=1e-12)
    x = s.mesh.nodes[:, 0]
    exact = -0.5 * x ** 2 + 0.75 * x
    assert np.abs(u.values - exact).max() <= s.mesh.h ** 2


def test_bilinear_examples():
    s = scen(4)
    rng = np.random.default_rng(0)
    u = ScalarField(s.mesh, rng.standard_normal(s.mesh.num_nodes))
    w = ScalarField(s.mesh, rng.standard_normal(s.mesh.num_nodes))
    assert fem.bilinear(s.mean, u, w) == pytest.approx(fem.bilinear(s.mean, w, u), rel=1e-14)
    assert fem.energy_norm(s.mean, u) ** 2 == pytest.approx(fem.bilinear(s.mean, u, u), rel=1e-14)
    assert fem.bilinear(s.mean, fem.constant_field(s.mesh, 1.0),
                        fem.constant_field(s.mesh, 1.0)) == pytest.approx(2.0, rel=1e-14)
    assert fem.energy_norm(s.mean, u * 2.0) ** 2 == pytest.approx(
        4 * fem.energy_norm(s.mean, u) ** 2, rel=1e-14)
    assert fem.energy_norm(s.mean, fem.zero_field(s.mesh)) == 0.0


def test_load_examples():
    one = fem.constant_field(unit_square_mesh(3), 1.0)
    assert fem.load(constant_scenario(one.mesh), fem.zero_field(one.mesh)) == 0.0
    assert fem.load(constant_scenario(one.mesh, f=1.0), one) == pytest.approx(1.0, rel=1e-14)
    assert fem.load(constant_scenario(one.mesh, f=1.0, G=1.0), one) - 1.0 == pytest.approx(1.0, rel=1e-14)


def test_delta_norm_examples():
    m = unit_square_mesh(3)
    one = fem.constant_field(m, 1.0)
    assert fem.delta_norm(constant_scenario(m), one) == 0.0
    s = constant_scenario(m, delta=(0.1, 0.1, 0.1))
    assert fem.delta_norm(s, one) == pytest.approx(0.2, rel=1e-14)
    u = fem.solve_scenario(s)
    assert fem.delta_norm(s, u) < fem.bilinear(s.mean, u, u)


def test_divergence_and_normal_trace():
    m = unit_square_mesh(3)
    x, y = m.nodes[:, 0], m.nodes[:, 1]
    const = FluxField(m, np.tile([1.0, -2.0], (m.num_nodes, 1)))
    np.testing.assert_allclose(fem.flux_divergence(const), 0.0, atol=1e-13)
    np.testing.assert_allclose(fem.flux_divergence(FluxField(m, np.column_stack([x, 0 * x]))), 1.0)
    np.testing.assert_allclose(fem.flux_divergence(FluxField(m, np.column_stack([x, y]))), 2.0)
    ex = FluxField(m, np.tile([1.0, 0.0], (m.num_nodes, 1)))
    ey = FluxField(m, np.tile([0.0, 1.0], (m.num_nodes, 1)))
    np.testing.assert_allclose(fem.normal_trace(ex, 3), 1.0)
    np.testing.assert_allclose(fem.normal_trace(ey, 3), 0.0, atol=1e-15)
    np.testing.assert_allclose(fem.normal_trace(FluxField(m, np.zeros((m.num_nodes, 2))), 2), 0.0)
    with pytest.raises(fem.FEMError):
        fem.normal_trace(ex, 1)


def test_field_file_round_trip():
    m = unit_square_mesh(2)
    v = ScalarField(m, np.linspace(0, 1, m.num_nodes) ** 3)
    assert np.array_equal(fem.load_field(fem.dump_field(v), m).values, v.values)
    y = FluxField(m, np.random.default_rng(1).standard_normal((m.num_nodes, 2)))
    assert np.array_equal(fem.load_flux(fem.dump_flux(y), m).values, y.values)


def test_invalid_coefficients():
    s = scen(2)
    bad = Coefficients(a=-s.a0, rho=s.rho0, alpha=s.alpha0)
    with pytest.raises(fem.FEMError):
        fem.assemble(s, bad)


def test_solver_error_reported():
    s = scen(8)
    system = fem.assemble(s, s.mean)
    with pytest.raises(fem.SolverError):
        fem.solve(system, rtol=1e-12, maxiter=2)


def test_integration_by_parts():
    """int (div y w + y . grad w) - int_{G2 u G3} (y . nu) w = 0 for w in V0."""
    m = unit_square_mesh(5)
    rng = np.random.default_rng(9)
    from uncertain_radius.quadrature import edge_mass, local_mass
    for _ in range(5):
        y = FluxField(m, rng.standard_normal((m.num_nodes, 2)))
        vals = rng.standard_normal(m.num_nodes)
        vals[m.dirichlet_nodes] = 0.0
        w = ScalarField(m, vals)
        div = fem.flux_divergence(y)
        vol = np.sum(div * m.areas * vals[m.triangles].mean(axis=1))
        ybar = np.einsum("tkd->td", y.values[m.triangles]) / 3.0
        vol += np.sum(m.areas * np.einsum("td,td->t", ybar, w.gradient()))
        bnd = 0.0
        for tag in (2, 3):
            ids = m.edges_with_tag(tag)
            yn = fem.normal_trace(y, tag)
            bnd += np.einsum("ei,ij,ej,e->", yn, edge_mass(), vals[m.edges[ids]],
                             m.edge_lengths[ids])
        assert abs(vol - bnd) <= 1e-12 * (abs(vol) + abs(bnd))


def test_norm_equivalence_extremes():
    from uncertain_radius.problem import c_lower, c_upper, extreme_perturbations, perturb
    s = scen(4, delta=(0.3, 0.2, 0.4), a0=1.5, beta_lower=(1, 1, 1), beta_upper=(2, 1, 1))
    rng = np.random.default_rng(10)
    triples = [perturb(s, p) for p in extreme_perturbations(s)]
    for _ in range(200):
        v = ScalarField(s.mesh, rng.standard_normal(s.mesh.num_nodes))
        n0 = fem.bilinear(s.mean, v, v)
        for c in triples:
            nv = fem.bilinear(c, v, v)
            assert c_lower(s) * nv <= n0 * (1 + 1e-13) and n0 <= c_upper(s) * nv * (1 + 1e-13)


def test_energy_convergence_rate():
    from uncertain_radius.mesh import prolongate, refine
    from uncertain_radius.problem import refine_scenario
    s = scen(4, delta=(0.1, 0.1, 0.1))
    diffs = []
    for _ in range(3):
        f = refine_scenario(s)
        uc, uf = fem.solve_scenario(s, rtol=1e-12), fem.solve_scenario(f, rtol=1e-12)
        d = uf - ScalarField(f.mesh, prolongate(uc.values, f.mesh))
        diffs.append(fem.energy_norm(f.mean, d))
        s = f
    rates = np.log2(np.array(diffs[:-1]) / np.array(diffs[1:]))
    assert np.all(rates > 0.8)
