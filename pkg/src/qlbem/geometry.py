"""Skeleton meshes of composite piecewise-homogeneous geometries.

A skeleton mesh triangulates the union of all material interfaces once.
Every triangle carries an ordered pair of adjacent domain indices
(domain_plus, domain_minus); the right-hand-rule normal of the stored
vertex order points from domain_minus into domain_plus.  Domain 0 is the
unbounded exterior.

File format (UTF-8 text)::

    composite-mesh v1 <nv> <nt> <ndom>
    x y z                    # nv vertex lines, meters
    v1 v2 v3 dplus dminus    # nt triangle lines, 0-based indices

The writer emits 17 significant digits so that write/load round-trips are
bit identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np


class MeshFormatError(Exception):
    """Raised when a mesh file cannot be parsed."""


class MeshTopologyError(Exception):
    """Raised when a mesh violates a structural invariant."""


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SkeletonMesh:
    vertices: np.ndarray        # (nv, 3) float
    triangles: np.ndarray       # (nt, 3) int
    adjacency: np.ndarray       # (nt, 2) int, (domain_plus, domain_minus)
    domain_count: int

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, float))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, int))
        object.__setattr__(self, "adjacency", np.asarray(self.adjacency, int))
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        self.adjacency.setflags(write=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def edges(self) -> np.ndarray:
        """All skeleton edges as (ne, 2) sorted vertex pairs, lexicographic."""
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)

    def junction_edges(self) -> np.ndarray:
        """Edges adjacent to three or more skeleton triangles."""
        t = self.triangles
        pairs = np.sort(np.concatenate(
            [t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        return uniq[counts >= 3]

    def interface_of(self, tri_index: int) -> Tuple[int, int]:
        """Unordered domain pair of a triangle's interface."""
        d = self.adjacency[tri_index]
        return (min(d), max(d))


@dataclass(frozen=True)
class OrientedSurfaceMesh:
    """Triangulated oriented surface, vertex indices into a shared array.

    For a closed boundary of a bounded domain the stored orientation gives
    outward normals (positive signed volume).  `parent_triangles` maps each
    surface triangle back to its skeleton triangle, when applicable.
    """
    vertices: np.ndarray            # (nv, 3), may contain unused vertices
    triangles: np.ndarray           # (nt, 3)
    domain: Optional[int] = None
    parent_triangles: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, float))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, int))

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def triangle_vertices(self) -> np.ndarray:
        """(nt, 3, 3) coordinates of the triangle corners."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        p = self.triangle_vertices()
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(n, axis=1)

    def normals(self) -> np.ndarray:
        """Unit normals following the stored vertex order."""
        p = self.triangle_vertices()
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def centroids(self) -> np.ndarray:
        return self.triangle_vertices().mean(axis=1)

    def signed_volume(self) -> float:
        p = self.triangle_vertices()
        return float(np.einsum("ti,ti->", p[:, 0],
                               np.cross(p[:, 1], p[:, 2])) / 6.0)

    def total_area(self) -> float:
        return float(self.areas().sum())


@dataclass(frozen=True)
class EdgeSet:
    """Deterministic enumeration of the edges of an oriented surface.

    Edges are oriented from the lower to the higher global vertex index and
    ordered lexicographically by that pair.  `tri_plus[e]` is the adjacent
    triangle in whose cyclic vertex order the edge appears reversed, i.e.
    as (destination -> origin); `tri_minus[e]` the one traversing it
    forwards (-1 on boundary edges).
    """
    edges: np.ndarray           # (ne, 2) int, origin < destination
    interior: np.ndarray        # (ne,) bool
    tri_plus: np.ndarray        # (ne,) int
    tri_minus: np.ndarray       # (ne,) int

    @property
    def num_edges(self):
        return self.edges.shape[0]

    def interior_index(self) -> np.ndarray:
        """Indices of interior edges, in enumeration order."""
        return np.flatnonzero(self.interior)

    def lookup(self) -> Dict[Tuple[int, int], int]:
        return {(int(o), int(d)): i for i, (o, d) in enumerate(self.edges)}


@dataclass(frozen=True)
class BarycentricRefinement:
    fine: OrientedSurfaceMesh
    parent: np.ndarray              # (6n,) coarse triangle per fine triangle
    local_position: np.ndarray      # (6n,) 0..5 within the parent
    edge_midpoint: Dict[Tuple[int, int], int]   # coarse edge -> fine vertex
    barycenter: np.ndarray          # (n,) fine vertex per coarse triangle


@dataclass(frozen=True)
class ReducedGeometry:
    """Single-sided reduction: each skeleton edge owned by one domain."""
    mesh: SkeletonMesh
    surfaces: Tuple[OrientedSurfaceMesh, ...]   # reduced surface per domain
    owner: Dict[Tuple[int, int], int]           # skeleton edge -> domain
    interface_owner: Dict[Tuple[int, int], int]  # interface pair -> domain


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def load_mesh(path) -> SkeletonMesh:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise MeshFormatError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 5 or header[0] != "composite-mesh" or header[1] != "v1":
        raise MeshFormatError(f"{path}:1: bad header {lines[0]!r}")
    try:
        nv, nt, ndom = (int(x) for x in header[2:])
    except ValueError as exc:
        raise MeshFormatError(f"{path}:1: non-integer counts") from exc
    if len(lines) < 1 + nv + nt:
        raise MeshFormatError(f"{path}: expected {1 + nv + nt} lines, "
                              f"got {len(lines)}")
    try:
        vertices = np.array([[float(x) for x in lines[1 + i].split()]
                             for i in range(nv)])
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad vertex line") from exc
    if nv and vertices.shape != (nv, 3):
        raise MeshFormatError(f"{path}: vertex lines must have 3 numbers")
    tri = np.zeros((nt, 3), int)
    adj = np.zeros((nt, 2), int)
    for i in range(nt):
        ln = 1 + nv + i
        parts = lines[ln].split()
        if len(parts) != 5:
            raise MeshFormatError(f"{path}:{ln + 1}: triangle line needs "
                                  f"5 integers")
        try:
            vals = [int(x) for x in parts]
        except ValueError as exc:
            raise MeshFormatError(f"{path}:{ln + 1}: non-integer entry") from exc
        tri[i] = vals[:3]
        adj[i] = vals[3:]
        for v in vals[:3]:
            if not 0 <= v < nv:
                raise MeshFormatError(
                    f"{path}:{ln + 1}: triangle {i} references vertex {v} "
                    f"outside range 0..{nv - 1}")
    inferred = int(adj.max()) + 1 if nt else ndom
    if inferred != ndom:
        ndom = max(ndom, inferred)
    mesh = SkeletonMesh(vertices, tri, adj, ndom)
    validate_skeleton(mesh)
    return mesh


def write_mesh(mesh: SkeletonMesh, path) -> None:
    path = Path(path)
    out = [f"composite-mesh v1 {mesh.num_vertices} {mesh.num_triangles} "
           f"{mesh.domain_count}"]
    for v in mesh.vertices:
        out.append(" ".join(f"{x:.17g}" for x in v))
    for t, d in zip(mesh.triangles, mesh.adjacency):
        out.append(f"{t[0]} {t[1]} {t[2]} {d[0]} {d[1]}")
    path.write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_skeleton(mesh: SkeletonMesh) -> None:
    if mesh.num_triangles == 0:
        raise MeshTopologyError("mesh has no triangles")
    p = mesh.vertices[mesh.triangles]
    areas = 0.5 * np.linalg.norm(
        np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    bad = np.flatnonzero(areas < 1e-14)
    if bad.size:
        raise MeshTopologyError(f"degenerate (zero-area) triangles: "
                                f"{bad.tolist()}")
    same = np.flatnonzero(mesh.adjacency[:, 0] == mesh.adjacency[:, 1])
    if same.size:
        raise MeshTopologyError(
            f"triangles with identical adjacent domains: {same.tolist()}")
    if mesh.adjacency.min() < 0 or mesh.adjacency.max() >= mesh.domain_count:
        raise MeshTopologyError("domain tag outside 0..domain_count-1")
    for dom in range(mesh.domain_count):
        surf = build_domain_boundary(mesh, dom, validate=False)
        if surf.num_triangles == 0:
            raise MeshTopologyError(f"domain {dom} has no boundary triangles")
        _check_watertight(surf, dom)


def _check_watertight(surf: OrientedSurfaceMesh, dom: int) -> None:
    t = surf.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    keys = np.sort(directed, axis=1)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                      return_counts=True)
    if counts.max() > 2 or counts.min() < 2:
        bad = uniq[(counts != 2)]
        raise MeshTopologyError(
            f"boundary of domain {dom} is not watertight; offending edges "
            f"{bad[:5].tolist()}")
    # each undirected edge must appear once in each direction
    flipped = directed[:, 0] > directed[:, 1]
    direction = np.where(flipped, -1, 1)
    balance = np.zeros(uniq.shape[0], int)
    np.add.at(balance, inverse, direction)
    if np.any(balance != 0):
        bad = uniq[balance != 0]
        raise MeshTopologyError(
            f"boundary of domain {dom} has inconsistent orientation at edges "
            f"{bad[:5].tolist()}")


# ---------------------------------------------------------------------------
# Derived structures
# ---------------------------------------------------------------------------

def build_domain_boundary(mesh: SkeletonMesh, dom: int,
                          validate: bool = True) -> OrientedSurfaceMesh:
    """Oriented boundary of domain `dom`, normals pointing out of it."""
    if not 0 <= dom < mesh.domain_count:
        raise ValueError(f"domain index {dom} out of range "
                         f"0..{mesh.domain_count - 1}")
    mask = (mesh.adjacency[:, 0] == dom) | (mesh.adjacency[:, 1] == dom)
    idx = np.flatnonzero(mask)
    tris = mesh.triangles[idx].copy()
    # stored normal points from domain_minus into domain_plus; flip the
    # triangles where `dom` is the plus side so normals leave the domain
    flip = mesh.adjacency[idx, 0] == dom
    tris[flip] = tris[flip][:, ::-1]
    surf = OrientedSurfaceMesh(mesh.vertices, tris, domain=dom,
                               parent_triangles=idx)
    if validate:
        _check_watertight(surf, dom)
        if dom >= 1 and surf.signed_volume() <= 0:
            raise MeshTopologyError(
                f"boundary of bounded domain {dom} has negative volume")
    return surf


def edge_enumeration(surface: OrientedSurfaceMesh) -> EdgeSet:
    t = surface.triangles
    if t.shape[0] == 0:
        empty = np.zeros(0, int)
        return EdgeSet(np.zeros((0, 2), int), np.zeros(0, bool), empty, empty)
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    tri_of = np.tile(np.arange(t.shape[0]), 3)
    keys = np.sort(directed, axis=1)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                      return_counts=True)
    if counts.max() > 2:
        bad = uniq[counts > 2]
        raise MeshTopologyError(f"non-manifold edges: {bad[:5].tolist()}")
    tri_plus = np.full(uniq.shape[0], -1, int)
    tri_minus = np.full(uniq.shape[0], -1, int)
    # the plus triangle traverses the oriented edge (lo, hi) backwards; this
    # pairs with the basis-function convention that the normal flux of an
    # edge function crosses from the plus into the minus triangle while its
    # tangential line integral along (lo, hi) is +1
    forward = directed[:, 0] < directed[:, 1]
    for k in range(directed.shape[0]):
        e = inverse[k]
        if forward[k]:
            tri_minus[e] = tri_of[k]
        else:
            tri_plus[e] = tri_of[k]
    interior = (tri_plus >= 0) & (tri_minus >= 0)
    return EdgeSet(uniq, interior, tri_plus, tri_minus)


def barycentric_refine(surface: OrientedSurfaceMesh) -> BarycentricRefinement:
    """Split each triangle into 6 through its barycenter and edge midpoints."""
    verts = surface.vertices
    tris = surface.triangles
    nt = tris.shape[0]
    new_vertices = [verts]
    offset = verts.shape[0]
    midpoint: Dict[Tuple[int, int], int] = {}
    mids = []
    for (a, b, c) in tris:
        for (u, v) in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            if key not in midpoint:
                midpoint[key] = offset + len(mids)
                mids.append(0.5 * (verts[u] + verts[v]))
    mid_arr = np.array(mids).reshape(-1, 3)
    bary_offset = offset + len(mids)
    centers = verts[tris].mean(axis=1)
    fine_vertices = np.vstack([verts, mid_arr, centers])
    barycenter = bary_offset + np.arange(nt)

    fine_tris = np.zeros((6 * nt, 3), int)
    parent = np.repeat(np.arange(nt), 6)
    local = np.tile(np.arange(6), nt)
    for i, (a, b, c) in enumerate(tris):
        mab = midpoint[(min(a, b), max(a, b))]
        mbc = midpoint[(min(b, c), max(b, c))]
        mca = midpoint[(min(c, a), max(c, a))]
        g = barycenter[i]
        fine_tris[6 * i:6 * i + 6] = [
            (a, mab, g), (mab, b, g), (b, mbc, g),
            (mbc, c, g), (c, mca, g), (mca, a, g)]
    fine = OrientedSurfaceMesh(fine_vertices, fine_tris,
                               domain=surface.domain)
    return BarycentricRefinement(fine, parent, local, midpoint, barycenter)


def reduce_geometry(mesh: SkeletonMesh,
                    override: Optional[Dict[Tuple[int, int], int]] = None
                    ) -> ReducedGeometry:
    """Assign every interface to one adjacent domain (greedy by ascending
    domain index) and validate that each skeleton edge ends up interior to
    exactly one reduced surface.  `override` maps interface pairs (i, j)
    with i < j to the owning domain."""
    interfaces = sorted({tuple(sorted(d)) for d in map(tuple, mesh.adjacency)})
    interface_owner: Dict[Tuple[int, int], int] = {}
    for pair in interfaces:
        if override and pair in override:
            owner = override[pair]
            if owner not in pair:
                raise ValueError(f"override owner {owner} is not adjacent to "
                                 f"interface {pair}")
            interface_owner[pair] = owner
    for dom in range(mesh.domain_count):
        for pair in interfaces:
            if pair not in interface_owner and dom in pair:
                interface_owner[pair] = dom

    surfaces = []
    for dom in range(mesh.domain_count):
        owned = [p for p, o in interface_owner.items() if o == dom]
        if owned:
            full = build_domain_boundary(mesh, dom, validate=False)
            owned_set = set(owned)
            keep = np.array([tuple(sorted(mesh.adjacency[p])) in owned_set
                             for p in full.parent_triangles])
            surf = OrientedSurfaceMesh(full.vertices, full.triangles[keep],
                                       domain=dom,
                                       parent_triangles=full.parent_triangles[keep])
        else:
            surf = OrientedSurfaceMesh(mesh.vertices,
                                       np.zeros((0, 3), int), domain=dom,
                                       parent_triangles=np.zeros(0, int))
        surfaces.append(surf)

    owner: Dict[Tuple[int, int], int] = {}
    skeleton_edges = {tuple(e) for e in mesh.edges()}
    for dom, surf in enumerate(surfaces):
        if surf.num_triangles == 0:
            continue
        es = edge_enumeration(surf)
        for e in es.edges[es.interior]:
            key = (int(e[0]), int(e[1]))
            if key in owner:
                raise MeshTopologyError(
                    f"edge {key} interior to reduced surfaces of domains "
                    f"{owner[key]} and {dom}; supply an override table")
            owner[key] = dom
    missing = skeleton_edges - set(owner)
    if missing:
        raise MeshTopologyError(
            f"edges interior to no reduced surface: "
            f"{sorted(missing)[:5]}; supply an override table")
    return ReducedGeometry(mesh, tuple(surfaces), owner, interface_owner)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

class _VertexRegistry:
    """Deduplicates vertices by rounded coordinates."""

    def __init__(self, decimals: int = 9):
        self.decimals = decimals
        self._index: Dict[Tuple[float, float, float], int] = {}
        self.points = []

    def add(self, p) -> int:
        key = tuple(np.round(np.asarray(p, float), self.decimals))
        idx = self._index.get(key)
        if idx is None:
            idx = len(self.points)
            self._index[key] = idx
            self.points.append(np.asarray(p, float))
        return idx

    def array(self) -> np.ndarray:
        return np.array(self.points).reshape(-1, 3)


def _grid_face(reg, origin, du, dv, nu, nv, dplus, dminus, tris, adj):
    """Structured rectangle triangulation; normal along du x dv."""
    origin = np.asarray(origin, float)
    du = np.asarray(du, float)
    dv = np.asarray(dv, float)
    ids = np.zeros((nu + 1, nv + 1), int)
    for i in range(nu + 1):
        for j in range(nv + 1):
            ids[i, j] = reg.add(origin + du * (i / nu) + dv * (j / nv))
    for i in range(nu):
        for j in range(nv):
            a, b = ids[i, j], ids[i + 1, j]
            c, d = ids[i + 1, j + 1], ids[i, j + 1]
            tris.append((a, b, c))
            adj.append((dplus, dminus))
            tris.append((a, c, d))
            adj.append((dplus, dminus))


def make_two_cubes(h: float) -> SkeletonMesh:
    """Cube of side 1 m (domain 1) with a 0.5 m cube (domain 2) attached
    flush on the face x = 1, sharing the square [0, 0.5]^2 in (y, z).

    The structured grid quantises the edge length to 0.5/m with
    m = round(0.5/h); the shared face is meshed once and tagged (1|2).
    """
    if not 0 < h <= 0.5:
        raise ValueError(f"mesh size h={h} outside (0, 0.5]")
    m = max(1, int(np.floor(0.5 / h + 0.5)))
    n = 2 * m
    reg = _VertexRegistry()
    tris, adj = [], []
    ex, ey, ez = np.eye(3)

    # big cube [0,1]^3, domain 1; outward normals (tag (0,1): normal into 0)
    _grid_face(reg, (0, 0, 0), ey, ex, n, n, 0, 1, tris, adj)      # z=0, n=-z
    _grid_face(reg, (0, 0, 1), ex, ey, n, n, 0, 1, tris, adj)      # z=1, n=+z
    _grid_face(reg, (0, 0, 0), ex, ez, n, n, 0, 1, tris, adj)      # y=0, n=-y
    _grid_face(reg, (0, 1, 0), ez, ex, n, n, 0, 1, tris, adj)      # y=1, n=+y
    _grid_face(reg, (0, 0, 0), ez, ey, n, n, 0, 1, tris, adj)      # x=0, n=-x
    # x=1 face split: shared square [0,.5]^2 in (y,z) plus two outer strips.
    # The shared face normal (+x) points out of domain 1 into domain 2, so
    # with the (dplus, dminus) convention it is tagged (2,1).
    _grid_face(reg, (1, 0, 0), ey * 0.5, ez * 0.5, m, m, 2, 1, tris, adj)
    _grid_face(reg, (1, 0.5, 0), ey * 0.5, ez * 0.5, m, m, 0, 1, tris, adj)
    _grid_face(reg, (1, 0, 0.5), ey, ez * 0.5, n, m, 0, 1, tris, adj)

    # small cube [1,1.5]x[0,.5]x[0,.5], domain 2, exposed faces tagged (0,2)
    _grid_face(reg, (1, 0, 0), ey * 0.5, ex * 0.5, m, m, 0, 2, tris, adj)     # z=0
    _grid_face(reg, (1, 0, 0.5), ex * 0.5, ey * 0.5, m, m, 0, 2, tris, adj)   # z=.5
    _grid_face(reg, (1, 0, 0), ex * 0.5, ez * 0.5, m, m, 0, 2, tris, adj)     # y=0
    _grid_face(reg, (1, 0.5, 0), ez * 0.5, ex * 0.5, m, m, 0, 2, tris, adj)   # y=.5
    _grid_face(reg, (1.5, 0, 0), ey * 0.5, ez * 0.5, m, m, 0, 2, tris, adj)   # x=1.5

    mesh = SkeletonMesh(reg.array(), np.array(tris), np.array(adj), 3)
    validate_skeleton(mesh)
    return mesh


def _cube_sphere_points(n: int):
    """Structured points on the six faces of [-1,1]^3 projected to the unit
    sphere; n cells per face edge (even n keeps the coordinate planes as
    grid lines)."""
    reg = _VertexRegistry()
    faces = []
    ex, ey, ez = np.eye(3)
    for origin, du, dv in [
            ((1, -1, -1), 2 * ey, 2 * ez),    # +x
            ((-1, -1, -1), 2 * ez, 2 * ey),   # -x
            ((-1, 1, -1), 2 * ex, 2 * ez),    # +y
            ((-1, -1, -1), 2 * ez, 2 * ex),   # -y  (wait orientation fixed below)
            ((-1, -1, 1), 2 * ey, 2 * ex),    # +z
            ((-1, -1, -1), 2 * ex, 2 * ey),   # -z
    ]:
        faces.append((np.asarray(origin, float), np.asarray(du, float),
                      np.asarray(dv, float)))
    tris = []
    for origin, du, dv in faces:
        ids = np.zeros((n + 1, n + 1), int)
        for i in range(n + 1):
            for j in range(n + 1):
                p = origin + du * (i / n) + dv * (j / n)
                ids[i, j] = reg.add(p / np.linalg.norm(p))
        for i in range(n):
            for j in range(n):
                a, b = ids[i, j], ids[i + 1, j]
                c, d = ids[i + 1, j + 1], ids[i, j + 1]
                tris.append((a, b, c))
                tris.append((a, c, d))
    return reg, tris


def _disk_chain(reg, ring, rings, center_id, tris, adj, tag, cyclic):
    """Triangulate a (half) disk from scaled copies of a boundary ring.

    ring: list of vertex ids of the outermost ring (unit circle points);
    rings: list of lists for radii r_{K-1} ... r_1 (outer to inner);
    the innermost ring is fanned to the center vertex."""
    chains = [ring] + rings
    for outer, inner in zip(chains[:-1], chains[1:]):
        p = len(outer)
        rng = range(p) if cyclic else range(p - 1)
        for j in rng:
            a, b = outer[j], outer[(j + 1) % p]
            c, d = inner[(j + 1) % p], inner[j]
            if a != d and b != c:
                tris.append((a, b, c)); adj.append(tag)
                tris.append((a, c, d)); adj.append(tag)
            else:  # degenerate at shared endpoints (cannot happen here)
                tris.append((a, b, c)); adj.append(tag)
    inner = chains[-1]
    p = len(inner)
    rng = range(p) if cyclic else range(p - 1)
    for j in rng:
        a, b = inner[j], inner[(j + 1) % p]
        tris.append((a, b, center_id)); adj.append(tag)


def make_sphere(h: float) -> SkeletonMesh:
    """Unit sphere, single bounded domain."""
    if not 0 < h <= 0.5:
        raise ValueError(f"mesh size h={h} outside (0, 0.5]")
    n = 2 * max(1, int(round(0.8 / h)))
    reg, tris = _cube_sphere_points(n)
    tris = np.array(tris)
    verts = reg.array()
    # outward orientation check per triangle (projected faces may wind
    # either way); flip to outward then tag (0,1)
    p = verts[tris]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    out = np.einsum("ti,ti->t", nrm, p.mean(axis=1)) > 0
    tris[~out] = tris[~out][:, ::-1]
    adj = np.tile([0, 1], (tris.shape[0], 1))
    mesh = SkeletonMesh(verts, tris, adj, 2)
    validate_skeleton(mesh)
    return mesh


def make_split_sphere(h: float, split: str = "half") -> SkeletonMesh:
    """Unit sphere split into two bounded domains by internal walls.

    split="half": equatorial disk at z=0 separating the upper half-ball
    (domain 1) from the lower (domain 2).
    split="quadrant": domain 2 is the quadrant {y<0, z<0}, domain 1 the
    remaining three quadrants; the wall is two half-disks (z=0, y<=0 and
    y=0, z<=0) meeting along the x-axis diameter.
    """
    if not 0 < h <= 0.5:
        raise ValueError(f"mesh size h={h} outside (0, 0.5]")
    if split not in ("half", "quadrant"):
        raise ValueError(f"unknown split {split!r}")
    n = 2 * max(1, int(round(0.8 / h)))
    reg, sphere_tris = _cube_sphere_points(n)
    verts = reg.array()
    tris_arr = np.array(sphere_tris)
    p = verts[tris_arr]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    out = np.einsum("ti,ti->t", nrm, p.mean(axis=1)) > 0
    tris_arr[~out] = tris_arr[~out][:, ::-1]

    cent = verts[tris_arr].mean(axis=1)
    tris, adj = [t for t in map(tuple, tris_arr)], []
    if split == "half":
        for c in cent:
            adj.append((0, 1) if c[2] > 0 else (0, 2))
    else:
        for c in cent:
            adj.append((0, 2) if (c[1] < 0 and c[2] < 0) else (0, 1))

    K = max(1, n // 2)
    radii = [(K - k) / K for k in range(1, K)]

    def scaled_rings(points3d):
        """Vertex ids of scaled copies of unit-circle points, outer first."""
        return [[reg.add(r * q) for q in points3d] for r in radii]

    def circle_points(axis, u_axis, v_axis, keep=None):
        """Vertices on the great circle in the plane axis=0, as (ids, pts)
        ordered by increasing in-plane angle atan2(v, u) in (-pi, pi]."""
        coords = reg.array()
        on_plane = np.abs(coords[:, axis]) < 1e-12
        unit = np.abs(np.linalg.norm(coords, axis=1) - 1.0) < 1e-9
        on = np.flatnonzero(on_plane & unit)
        if keep is not None:
            on = on[keep(coords[on])]
        ang = np.arctan2(coords[on, v_axis], coords[on, u_axis])
        ang[ang > np.pi - 1e-9] -= 2 * np.pi  # half chains run [-pi, 0]
        order = np.argsort(ang)
        ids = [int(i) for i in on[order]]
        return ids, [coords[i] for i in ids]

    center = reg.add((0.0, 0.0, 0.0))
    if split == "half":
        # equatorial disk; ccw seen from +z gives normal +z into domain 1
        ring_ids, ring_pts = circle_points(axis=2, u_axis=0, v_axis=1)
        _disk_chain(reg, ring_ids, scaled_rings(ring_pts), center,
                    tris, adj, (1, 2), cyclic=True)
    else:
        # wall A: z=0, y<=0 half disk; order by increasing atan2(y, x) over
        # [-pi, 0] runs ccw seen from +z, so the normal is +z (into the
        # domain above, which is domain 1): tag (1,2)
        ids, pts = circle_points(axis=2, u_axis=0, v_axis=1,
                                 keep=lambda c: c[:, 1] < 1e-12)
        _disk_chain(reg, ids, scaled_rings(pts), center, tris, adj, (1, 2),
                    cyclic=False)
        # wall B: y=0, z<=0 half disk; increasing atan2(z, x) winds about
        # -y, so the triangle normal is -y, pointing into domain 2 (the
        # quadrant with y<0): tag (2,1)
        ids, pts = circle_points(axis=1, u_axis=0, v_axis=2,
                                 keep=lambda c: c[:, 2] < 1e-12)
        _disk_chain(reg, ids, scaled_rings(pts), center, tris, adj, (2, 1),
                    cyclic=False)

    mesh = SkeletonMesh(reg.array(), np.array(tris), np.array(adj), 3)
    validate_skeleton(mesh)
    return mesh
