"""Scenario files (TOML) and ``key=value`` overrides.

::

    [domain]
    mesh = "unit_square n=32"        # or a path to a mesh file
    [coefficients]
    a0 = 1.0                         # scalar, [[a11, a12], [a21, a22]] or a per-cell file
    rho0 = 1.0
    alpha0 = 1.0
    [loads]
    f = 1.0
    F = 0.0
    G = 0.0
    [uncertainty]
    delta1 = 0.1
    delta2 = 0.1
    delta3 = 0.1
    [bounds]                         # optional; defaults are the tightest bounds of the data
    beta_lower1 = 1.0
    beta_upper1 = 1.0
    [embedding]                      # optional for the unit square
    c1 = 0.405284735
    sigma_convention = "derived"

Per-entity files hold a header ``cells <T>`` or ``edges <E>`` followed by one
value per line (four values ``a11 a12 a21 a22`` for ``a0``). Edge files follow
the edge order of the mesh file.
"""
from __future__ import annotations

import copy
import re
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .mesh import Mesh, load_mesh, unit_square_mesh
from .problem import UNIT_SQUARE_EMBEDDING, Scenario, ScenarioError, UncertaintyBudget

SCHEMA = {
    "domain": {"mesh": "unit_square n=32"},
    "coefficients": {"a0": 1.0, "rho0": 1.0, "alpha0": 1.0},
    "loads": {"f": 1.0, "F": 0.0, "G": 0.0},
    "uncertainty": {"delta1": 0.0, "delta2": 0.0, "delta3": 0.0},
    "bounds": {f"beta_{side}{i}": None for side in ("lower", "upper") for i in (1, 2, 3)},
    "embedding": {"c1": None, "c2": None, "c3": None, "sigma_convention": "derived"},
}
# bare key -> section
KEYS = {key: section for section, body in SCHEMA.items() for key in body}
ALIASES = {"delta": ("delta1", "delta2", "delta3")}

_UNIT_SQUARE = re.compile(r"^\s*unit_square\s+n\s*=\s*(\d+)\s*$")


class UsageError(ValueError):
    """Bad scenario keys or override syntax (reported before any computation)."""


def defaults() -> dict:
    return copy.deepcopy(SCHEMA)


def parse_text(text: str) -> dict:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"scenario file: {exc}") from exc
    cfg = defaults()
    for section, body in raw.items():
        if section not in SCHEMA or not isinstance(body, dict):
            raise UsageError(f"unknown section [{section}]")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise UsageError(f"unknown key '{key}' in [{section}]")
            cfg[section][key] = value
    return cfg


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text.strip()


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``key=value`` strings; keys are bare (``delta1``) or ``section.key``."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override '{item}' is not of the form key=value")
        key, value = (t.strip() for t in item.split("=", 1))
        for section, name in _resolve(key):
            cfg[section][name] = _parse_value(value)
    return cfg


def _resolve(key: str):
    if key in ALIASES:
        return [(KEYS[k], k) for k in ALIASES[key]]
    if "." in key:
        section, name = key.split(".", 1)
        if section in SCHEMA and name in SCHEMA[section]:
            return [(section, name)]
    elif key in KEYS:
        return [(KEYS[key], key)]
    raise UsageError(f"unknown override key '{key}'")


def check_keys(keys):
    """Reject unknown override or sweep parameter names."""
    for key in keys:
        _resolve(key)


# ----------------------------------------------------------------- building

def _read_entity_file(path: Path, kind: str, count: int, width: int) -> np.ndarray:
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc.strerror}") from exc
    rows = []
    header = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if header is None:
            if len(tok) != 2 or tok[0] != kind:
                raise ScenarioError(f"{path}:{lineno}: expected header '{kind} <N>'")
            header = int(tok[1])
            continue
        if len(tok) != width:
            raise ScenarioError(f"{path}:{lineno}: expected {width} values, got {len(tok)}")
        rows.append([float(t) for t in tok])
    if header is None or header != count or len(rows) != count:
        raise ScenarioError(f"{path}: expected {count} {kind} rows")
    return np.array(rows)


def _cell_matrix(value, mesh: Mesh, base: Path) -> np.ndarray:
    nt = mesh.num_triangles
    if isinstance(value, str):
        return _read_entity_file(base / value, "cells", nt, 4).reshape(nt, 2, 2)
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        a = a * np.eye(2)
    if a.shape != (2, 2):
        raise ScenarioError("a0 must be a scalar, a 2x2 matrix or a per-cell file")
    return np.broadcast_to(a, (nt, 2, 2)).copy()


def _entity_scalar(value, mesh: Mesh, base: Path, kind: str, name: str) -> np.ndarray:
    count = mesh.num_triangles if kind == "cells" else len(mesh.edges)
    if isinstance(value, str):
        return _read_entity_file(base / value, kind, count, 1).ravel()
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ScenarioError(f"{name} must be a number or a per-{kind[:-1]} file")
    return np.full(count, float(value))


def build_mesh_from(source: str, base: Path) -> Mesh:
    match = _UNIT_SQUARE.match(str(source))
    if match:
        return unit_square_mesh(int(match.group(1)))
    path = base / str(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read mesh file {path}: {exc.strerror}") from exc
    return load_mesh(text)


def build_scenario(cfg: dict, base: Path | str = ".") -> Scenario:
    base = Path(base)
    mesh_source = cfg["domain"]["mesh"]
    m = build_mesh_from(mesh_source, base)
    co, lo = cfg["coefficients"], cfg["loads"]
    a0 = _cell_matrix(co["a0"], m, base)
    rho0 = _entity_scalar(co["rho0"], m, base, "cells", "rho0")
    alpha0 = _entity_scalar(co["alpha0"], m, base, "edges", "alpha0")
    f = _entity_scalar(lo["f"], m, base, "cells", "f")
    F = _entity_scalar(lo["F"], m, base, "edges", "F")
    G = _entity_scalar(lo["G"], m, base, "edges", "G")

    eig = np.linalg.eigvalsh(0.5 * (a0 + np.swapaxes(a0, 1, 2)))
    robin = m.edge_tags == 3
    a3 = alpha0[robin] if robin.any() else np.array([1.0])
    tight_lower = (float(eig[:, 0].min()), float(rho0.min()), float(a3.min()))
    tight_upper = (float(eig[:, 1].max()), float(rho0.max()), float(a3.max()))
    b = cfg["bounds"]
    beta_lower = tuple(float(b[f"beta_lower{i + 1}"]) if b[f"beta_lower{i + 1}"] is not None
                       else tight_lower[i] for i in range(3))
    beta_upper = tuple(float(b[f"beta_upper{i + 1}"]) if b[f"beta_upper{i + 1}"] is not None
                       else tight_upper[i] for i in range(3))

    e = cfg["embedding"]
    given = [e["c1"], e["c2"], e["c3"]]
    if _UNIT_SQUARE.match(str(mesh_source)):
        emb = tuple(float(g) if g is not None else d for g, d in zip(given, UNIT_SQUARE_EMBEDDING))
    elif any(g is None for g in given):
        raise ScenarioError("embedding constants c1, c2, c3 are required for a mesh file")
    else:
        emb = tuple(float(g) for g in given)

    u = cfg["uncertainty"]
    try:
        delta = tuple(float(u[f"delta{i}"]) for i in (1, 2, 3))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"uncertainty magnitudes must be numbers: {exc}") from exc
    return Scenario(mesh=m, a0=a0, rho0=rho0, alpha0=alpha0, f=f, F=F, G=G,
                    budget=UncertaintyBudget(delta), beta_lower=beta_lower,
                    beta_upper=beta_upper, embedding=emb,
                    sigma_convention=str(e["sigma_convention"]), config=copy.deepcopy(cfg))


def load_scenario(path: str | Path, overrides=()) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read scenario file {path}: {exc.strerror}") from exc
    cfg = apply_overrides(parse_text(text), overrides)
    return build_scenario(cfg, path.parent)
