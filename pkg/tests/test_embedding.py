import pytest

from uncertain_radius.embedding import estimate_constants
from uncertain_radius.mesh import unit_square_mesh
from uncertain_radius.problem import UNIT_SQUARE_EMBEDDING


def test_discrete_constants_approach_from_below():
    prev = (0.0, 0.0, 0.0)
    for n in (4, 8, 16):
        est = estimate_constants(unit_square_mesh(n))
        for e, exact, p in zip(est, UNIT_SQUARE_EMBEDDING, prev):
            assert p - 1e-12 <= e <= exact + 1e-12
        prev = est
    c1, c2, c3 = prev
    assert c1 == pytest.approx(UNIT_SQUARE_EMBEDDING[0], rel=2e-3)
    assert c2 == pytest.approx(UNIT_SQUARE_EMBEDDING[1], rel=2e-3)
    # attained by w = x, which is piecewise linear
    assert c3 == pytest.approx(1.0, rel=1e-10)


def test_large_mesh_uses_sparse_solver():
    est = estimate_constants(unit_square_mesh(24))
    assert est[0] == pytest.approx(UNIT_SQUARE_EMBEDDING[0], rel=1e-3)
