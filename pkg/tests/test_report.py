import json
import math

import numpy as np
import pytest

from conftest import reference_scenario
from uncertain_radius import minorant as mn
from uncertain_radius.fem import solve_scenario
from uncertain_radius.report import (BoundsReport, candidates, compute_bounds, from_json,
                                     sample_radius, sandwich, sweep, verify_ordering, verify_suite)

FAST = mn.MinorantOptions(restarts=1, max_iter=10)


@pytest.fixture(scope="module")
def bounds8():
    return compute_bounds(reference_scenario(8), FAST)


def test_reference_bounds(bounds8):
    d = bounds8.data
    assert d["lower"]["normalized"] == pytest.approx(1 / 99, rel=1e-12)
    assert d["upper"]["normalized"] == pytest.approx(1 / 81, rel=1e-12)
    assert d["lower"]["optimized"] >= d["lower"]["analytic"]
    assert d["lower"]["analytic"] <= d["upper"]["value"]
    assert d["oracle"] is None
    assert d["ordering"]["pass"] and d["ordering"]["ratio"] == pytest.approx(1.1 / 0.9)


def test_json_round_trip(bounds8):
    text = bounds8.to_json()
    back = json.loads(text)
    assert back["upper"]["normalized"] == bounds8["upper"]["normalized"]
    # the reference mesh has a Neumann part, so every multiplier is finite
    assert all(isinstance(g, float) for g in back["majorant"]["gamma"])
    rep = BoundsReport({"x": math.inf, "y": [np.float64(2.5), np.int64(3)]})
    assert json.loads(rep.to_json()) == {"x": "inf", "y": [2.5, 3]}
    assert from_json("inf") == math.inf and from_json(1.5) == 1.5


def test_delta_free_reports_zero():
    d = compute_bounds(reference_scenario(4, delta=(0, 0, 0)), FAST).data
    for key in ("analytic", "optimized", "normalized"):
        assert d["lower"][key] == 0.0
    assert d["upper"]["value"] == 0.0 and d["upper"]["normalized"] == 0.0
    assert d["ordering"] == {"ratio": 1.0, "pass": True}


def test_scaling_f():
    s = reference_scenario(4)
    a = compute_bounds(s, FAST).data
    b = compute_bounds(s.replace(f=2 * s.f), FAST).data
    assert b["lower"]["analytic"] == pytest.approx(4 * a["lower"]["analytic"], rel=1e-9)
    assert b["upper"]["value"] == pytest.approx(4 * a["upper"]["value"], rel=1e-9)
    assert b["lower"]["normalized"] == a["lower"]["normalized"]
    assert b["upper"]["normalized"] == a["upper"]["normalized"]


def test_sample_delta_free_is_zero():
    o = sample_radius(reference_scenario(4, delta=(0, 0, 0)), 0)
    assert o["empirical"] == 0.0 and o["samples"] == 9


def test_sample_extremes_inside_bounds(reference16):
    s, u0 = reference16
    o = sample_radius(s, 0, u0=u0)
    tol = o["slack_energy"]
    assert 1 / 99 - tol <= o["empirical_normalized"] <= 1 / 81 + tol
    assert o["worst_id"].startswith(("extreme", "flux"))


def test_sample_running_max():
    s = reference_scenario(4)
    values = [sample_radius(s, k, seed=3, slack=False)["empirical"] for k in (0, 2, 5)]
    assert values == sorted(values)
    labels = [p.label for p in candidates(s, solve_scenario(s), 2, 0)]
    assert labels[:8] == [f"extreme:{k}" for k in range(8)]
    assert labels[8:] == ["flux_aligned", "random:0", "random:1"]


def test_sample_rejects_negative():
    with pytest.raises(ValueError):
        sample_radius(reference_scenario(2), -1)


def test_sandwich_helper():
    rep = {"lower": {"normalized": 1.0}, "upper": {"normalized": 2.0},
           "oracle": {"empirical_normalized": 2.05, "slack": 0.1}}
    assert sandwich(rep)[0]
    rep["oracle"]["slack"] = 0.01
    assert not sandwich(rep)[0]


def test_verify_ordering_examples():
    ratio, ok = verify_ordering(reference_scenario(1))
    assert ok and ratio == pytest.approx(1.1 / 0.9, rel=1e-14)
    ratio, ok = verify_ordering(reference_scenario(1, delta=(0.5, 0.5, 0.5)))
    assert ok and ratio == pytest.approx(1.5 / 0.5, rel=1e-14)
    ratio, ok = verify_ordering(reference_scenario(1, delta=(0, 0, 0)))
    assert ok and ratio == math.inf


def test_sweep_rows():
    rows = sweep([0.0, 0.1, 0.3], lambda d: reference_scenario(4, delta=(d, d, d)))
    assert [r["delta"] for r in rows] == [0.0, 0.1, 0.3]
    assert rows[0]["empirical_norm"] == 0.0 and rows[0]["ratio"] == 1.0
    for r in rows[1:]:
        assert r["lower_norm"] <= r["empirical_norm"] + 1e-9 <= r["upper_norm"] + 2e-9
    assert rows[1]["ratio"] == pytest.approx(1.1 / 0.9)


def test_verify_suite_passes():
    checks = verify_suite(reference_scenario(8), num_random=3, minorant_opts=FAST)
    names = [c.name for c in checks]
    assert names[-1] == "ordering" and "sandwich" in names
    assert all(c.ok for c in checks), [c.line for c in checks if not c.ok]
    assert checks[-1].line.startswith("ordering: 1.2222 >= 1 PASS")


def test_report_is_deterministic():
    s = reference_scenario(4)
    a = compute_bounds(s, mn.MinorantOptions(restarts=2, seed=5, threads=2))
    b = compute_bounds(s, mn.MinorantOptions(restarts=2, seed=5, threads=1))
    assert a.to_json() == b.to_json()
    assert sample_radius(s, 4, seed=2, threads=2) == sample_radius(s, 4, seed=2)
