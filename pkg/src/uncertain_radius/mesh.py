"""Conforming triangulations of polygonal domains with tagged boundary parts.

Boundary edges carry a tag in {1, 2, 3}:

* 1 -- Dirichlet part (homogeneous, ``u = 0``),
* 2 -- Neumann part (``n . A grad u = F``),
* 3 -- Robin part (``alpha u + n . A grad u = G``).

Boundary edges are stored oriented counter-clockwise with respect to the
owning triangle, so the outward normal of edge ``(i, j)`` is the tangent
rotated clockwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

TAGS = (1, 2, 3)


class MeshError(ValueError):
    """Raised for malformed mesh data or mesh files."""


def _signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (nodes[triangles[:, k]] for k in range(3))
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable P1 triangulation.

    ``parents`` and ``coarse`` are set on meshes produced by :func:`refine`:
    row ``k`` of ``parents`` holds the two nodes of ``coarse`` whose midpoint
    is fine node ``k`` (equal entries for inherited nodes). Child cell ``c``
    lies in coarse cell ``c % T_coarse`` and child edge ``e`` on coarse edge
    ``e // 2``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    warnings: tuple[str, ...] = ()
    parents: np.ndarray | None = None
    coarse: "Mesh | None" = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("nodes", "triangles", "edges", "edge_tags"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            a = _signed_areas(self.nodes, self.triangles)
            a.setflags(write=False)
            self._cache["areas"] = a
        return self._cache["areas"]

    @property
    def gradients(self) -> np.ndarray:
        """Gradients of the barycentric basis functions, shape (T, 3, 2)."""
        if "grads" not in self._cache:
            p = self.nodes[self.triangles]
            area2 = 2.0 * self.areas
            g = np.empty((self.num_triangles, 3, 2))
            for k in range(3):
                a = p[:, (k + 1) % 3]
                b = p[:, (k + 2) % 3]
                # gradient of lambda_k is the rotated opposite edge over 2|T|
                g[:, k, 0] = (a[:, 1] - b[:, 1]) / area2
                g[:, k, 1] = (b[:, 0] - a[:, 0]) / area2
            g.setflags(write=False)
            self._cache["grads"] = g
        return self._cache["grads"]

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        if "dirichlet" not in self._cache:
            d = np.unique(self.edges[self.edge_tags == 1].ravel())
            d.setflags(write=False)
            self._cache["dirichlet"] = d
        return self._cache["dirichlet"]

    @property
    def free_nodes(self) -> np.ndarray:
        if "free" not in self._cache:
            mask = np.ones(self.num_nodes, dtype=bool)
            mask[self.dirichlet_nodes] = False
            f = np.flatnonzero(mask)
            f.setflags(write=False)
            self._cache["free"] = f
        return self._cache["free"]

    def edges_with_tag(self, tag: int) -> np.ndarray:
        """Indices into ``edges`` of the boundary edges carrying ``tag``."""
        return np.flatnonzero(self.edge_tags == tag)

    @property
    def edge_lengths(self) -> np.ndarray:
        if "lengths" not in self._cache:
            d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
            lengths = np.hypot(d[:, 0], d[:, 1])
            lengths.setflags(write=False)
            self._cache["lengths"] = lengths
        return self._cache["lengths"]

    @property
    def edge_normals(self) -> np.ndarray:
        """Outward unit normals of the boundary edges, shape (E, 2)."""
        if "normals" not in self._cache:
            d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
            nrm = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.edge_lengths[:, None]
            nrm.setflags(write=False)
            self._cache["normals"] = nrm
        return self._cache["normals"]

    @property
    def h(self) -> float:
        """Largest triangle edge length."""
        p = self.nodes[self.triangles]
        lengths = [np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3)]
        return float(np.max(lengths))

    def boundary_loop_area(self) -> float:
        """Area enclosed by the boundary edges (shoelace formula)."""
        a = self.nodes[self.edges[:, 0]]
        b = self.nodes[self.edges[:, 1]]
        return 0.5 * float(np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))


def boundary_measure(mesh: Mesh, tag: int) -> float:
    """Total length of the boundary edges carrying ``tag``."""
    if tag not in TAGS:
        raise MeshError(f"unknown boundary tag {tag}")
    return float(np.sum(mesh.edge_lengths[mesh.edge_tags == tag]))


def build_mesh(nodes, triangles, edges, parents=None, coarse=None) -> Mesh:
    """Validate raw arrays and return a :class:`Mesh`.

    ``edges`` is an (E, 3) integer array of rows ``(i, j, tag)``. Negatively
    oriented triangles are repaired by swapping two vertices; the repair is
    recorded in ``Mesh.warnings``.
    """
    nodes = np.array(nodes, dtype=float).reshape(-1, 2)
    triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    edges = np.array(edges, dtype=np.int64).reshape(-1, 3)
    n = nodes.shape[0]
    warnings = []

    if triangles.size == 0:
        raise MeshError("mesh has no triangles")
    bad = np.flatnonzero((triangles < 0).any(axis=1) | (triangles >= n).any(axis=1))
    if bad.size:
        raise MeshError(f"triangle {bad[0]} references a node out of range")
    bad = np.flatnonzero((edges[:, :2] < 0).any(axis=1) | (edges[:, :2] >= n).any(axis=1))
    if bad.size:
        raise MeshError(f"edge {bad[0]} references a node out of range")
    bad = np.flatnonzero(~np.isin(edges[:, 2], TAGS))
    if bad.size:
        raise MeshError(f"edge {bad[0]} has tag {edges[bad[0], 2]}, expected 1, 2 or 3")

    area = _signed_areas(nodes, triangles)
    scale = max(np.ptp(nodes, axis=0).max(), 1.0) ** 2
    degenerate = np.flatnonzero(np.abs(area) <= 1e-14 * scale)
    if degenerate.size:
        raise MeshError(f"triangle {degenerate[0]} is degenerate")
    flipped = np.flatnonzero(area < 0)
    if flipped.size:
        triangles = triangles.copy()
        triangles[flipped, 1], triangles[flipped, 2] = (
            triangles[flipped, 2].copy(), triangles[flipped, 1].copy())
        msg = f"repaired orientation of {flipped.size} triangle(s), first {flipped[0]}"
        logger.warning(msg)
        warnings.append(msg)

    # Boundary = edges used by exactly one triangle; record the CCW orientation.
    local = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(local, axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if counts.max() > 2:
        raise MeshError("non-manifold mesh: an edge is shared by more than two triangles")
    boundary_keys = {tuple(uniq[k]) for k in np.flatnonzero(counts == 1)}
    oriented = {}
    for row, k in enumerate(inverse):
        if counts[k] == 1:
            oriented[tuple(uniq[k])] = tuple(local[row])

    seen = set()
    out_edges = np.empty((edges.shape[0], 2), dtype=np.int64)
    for idx, (i, j, _tag) in enumerate(edges):
        k = (min(i, j), max(i, j))
        if k not in boundary_keys:
            raise MeshError(f"edge {idx} ({i}, {j}) is not a boundary edge of exactly one triangle")
        if k in seen:
            raise MeshError(f"edge {idx} ({i}, {j}) is tagged more than once")
        seen.add(k)
        out_edges[idx] = oriented[k]
    missing = boundary_keys - seen
    if missing:
        raise MeshError(f"boundary edge {sorted(missing)[0]} carries no tag")
    if not np.any(edges[:, 2] == 1):
        raise MeshError("Γ₁ empty: at least one boundary edge must carry tag 1")

    return Mesh(nodes=nodes, triangles=triangles, edges=out_edges,
                edge_tags=edges[:, 2].copy(), warnings=tuple(warnings),
                parents=None if parents is None else np.asarray(parents, dtype=np.int64),
                coarse=coarse)


def unit_square_mesh(n: int) -> Mesh:
    """Uniform right-triangle mesh of [0, 1]^2 with ``2 n^2`` triangles.

    Left edge tag 1, bottom and top tag 2, right edge tag 3. Each grid square
    is split along its lower-left to upper-right diagonal.
    """
    if n < 1:
        raise MeshError(f"subdivision count must be >= 1, got {n}")
    t = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(t, t)
    nodes = np.column_stack([x.ravel(), y.ravel()])

    def idx(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    edges = []
    for j in range(n):
        edges.append((idx(0, j + 1), idx(0, j), 1))
    for i in range(n):
        edges.append((idx(i, 0), idx(i + 1, 0), 2))
        edges.append((idx(i + 1, n), idx(i, n), 2))
    for j in range(n):
        edges.append((idx(n, j), idx(n, j + 1), 3))
    return build_mesh(nodes, tris, edges)


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement: every triangle is split into four.

    The returned mesh records ``parents`` so coarse P1 fields can be
    prolongated exactly (see :func:`prolongate`).
    """
    tris = mesh.triangles
    local = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(local, axis=1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    n0 = mesh.num_nodes
    mid_nodes = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    nodes = np.vstack([mesh.nodes, mid_nodes])
    nt = mesh.num_triangles
    m01 = n0 + inverse[:nt]
    m12 = n0 + inverse[nt:2 * nt]
    m20 = n0 + inverse[2 * nt:]
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    children = np.concatenate([
        np.column_stack([v0, m01, m20]),
        np.column_stack([m01, v1, m12]),
        np.column_stack([m20, m12, v2]),
        np.column_stack([m01, m12, m20]),
    ])
    lookup = {tuple(k): n0 + r for r, k in enumerate(uniq)}
    new_edges = []
    for (i, j), tag in zip(mesh.edges, mesh.edge_tags):
        m = lookup[(min(i, j), max(i, j))]
        new_edges.append((i, m, tag))
        new_edges.append((m, j, tag))
    parents = np.vstack([np.column_stack([np.arange(n0), np.arange(n0)]), uniq])
    return build_mesh(nodes, children, new_edges, parents=parents, coarse=mesh)


def prolongate(values: np.ndarray, fine: Mesh) -> np.ndarray:
    """Interpolate coarse nodal values onto a mesh produced by :func:`refine`."""
    if fine.parents is None:
        raise MeshError("fine mesh carries no parent information")
    values = np.asarray(values)
    return 0.5 * (values[fine.parents[:, 0]] + values[fine.parents[:, 1]])


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def load_mesh(text: str) -> Mesh:
    """Parse the line-oriented mesh format.

    ::

        nodes N
        x y            (N lines)
        triangles T
        i j k          (T lines, 0-based)
        edges E
        i j tag        (E lines)
    """
    lines = list(_data_lines(text))
    pos = 0
    sections = {}
    for name, width, conv in (("nodes", 2, float), ("triangles", 3, int), ("edges", 3, int)):
        if pos >= len(lines):
            raise MeshError(f"line {lines[-1][0] if lines else 1}: missing '{name}' header")
        lineno, tok = lines[pos]
        if len(tok) != 2 or tok[0] != name:
            raise MeshError(f"line {lineno}: expected '{name} <count>', got {' '.join(tok)!r}")
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshError(f"line {lineno}: bad count {tok[1]!r}") from None
        pos += 1
        rows = []
        for _ in range(count):
            if pos >= len(lines):
                raise MeshError(f"line {lineno}: section '{name}' ended after {len(rows)} of {count} rows")
            lineno, tok = lines[pos]
            if len(tok) != width:
                raise MeshError(f"line {lineno}: expected {width} values, got {len(tok)}")
            try:
                rows.append([conv(t) for t in tok])
            except ValueError:
                raise MeshError(f"line {lineno}: cannot parse {' '.join(tok)!r}") from None
            pos += 1
        sections[name] = rows
    if pos < len(lines):
        raise MeshError(f"line {lines[pos][0]}: unexpected trailing data")
    return build_mesh(sections["nodes"], sections["triangles"], sections["edges"])


def dump_mesh(mesh: Mesh) -> str:
    out = [f"nodes {mesh.num_nodes}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    out.append(f"triangles {mesh.num_triangles}")
    out += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    out.append(f"edges {len(mesh.edges)}")
    out += [f"{i} {j} {t}" for (i, j), t in zip(mesh.edges.tolist(), mesh.edge_tags.tolist())]
    return "\n".join(out) + "\n"
