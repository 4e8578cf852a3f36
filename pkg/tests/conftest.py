from pathlib import Path

import pytest

from uncertain_radius import fem
from uncertain_radius.mesh import unit_square_mesh
from uncertain_radius.problem import constant_scenario

ROOT = Path(__file__).resolve().parent.parent
REFERENCE_SCN = ROOT / "scenarios" / "reference.scn"

_ACCEPTANCE: dict[str, str] = {}


def reference_scenario(n: int = 32, **changes):
    kw = dict(delta=(0.1, 0.1, 0.1), beta_lower=(1, 1, 1), beta_upper=(1, 1, 1))
    kw.update(changes)
    return constant_scenario(unit_square_mesh(n), **kw)


@pytest.fixture(scope="session")
def reference():
    s = reference_scenario()
    return s, fem.solve_scenario(s, rtol=1e-11)


@pytest.fixture(scope="session")
def reference16():
    s = reference_scenario(16)
    return s, fem.solve_scenario(s, rtol=1e-11)


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(key, ok, detail)``."""
    def record(key: str, ok: bool, detail: str):
        line = f"acceptance {key}: {'PASS' if ok else 'FAIL'} {detail}"
        _ACCEPTANCE[key] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(_ACCEPTANCE[key])
