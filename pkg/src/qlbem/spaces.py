"""Div-conforming trace spaces on domain boundaries.

Provides lowest-order edge-based (RWG) spaces, their Buffa-Christiansen
duals on the barycentric refinement (with the boundary-adapted variant on
open reduced surfaces), multi-trace collections over all sub-domains, the
single-trace embedding matrix, and Gram matrices of the twisted pairing
<(n x t), u>.

Every basis function is stored as a linear combination of elementary
triangle shape functions phi_{t,l}(r) = (r - v_l) / (2 A_t) with surface
divergence 1/A_t, where v_l is the l-th corner of triangle t of the
representation mesh (the surface itself for RWG, the barycentric
refinement for BC).  The matrix of these coefficients, `local_map`
(dofs x 3*num_triangles), is the only thing downstream Galerkin assembly
needs.

Edge-function sign convention, tied to geometry.EdgeSet: the function of
the oriented edge (o, d), o < d, has unit tangential line integral of
(f x n).t along the edge and carries unit normal flux from the plus into
the minus triangle; its divergence is +1/A on the plus triangle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .geometry import (BarycentricRefinement, EdgeSet, MeshTopologyError,
                       OrientedSurfaceMesh, ReducedGeometry, SkeletonMesh,
                       barycentric_refine, build_domain_boundary,
                       edge_enumeration)
from .quadrature import triangle_rule


class SpaceError(Exception):
    pass


# ---------------------------------------------------------------------------
# Elementary shape-function machinery
# ---------------------------------------------------------------------------

def _edge_local_map(mesh: OrientedSurfaceMesh, edges: EdgeSet) -> sp.csr_matrix:
    """Coefficient matrix of the elementary edge functions.

    Row k (k-th interior edge) holds +1 in the slot of the plus triangle's
    opposite corner and -1 in the minus triangle's, realising the sign
    convention in the module docstring.
    """
    kk = edges.interior_index()
    n = len(kk)
    rows, cols, vals = [], [], []
    tris = mesh.triangles
    for r, k in enumerate(kk):
        o, d = edges.edges[k]
        for t, sign in ((edges.tri_plus[k], 1.0), (edges.tri_minus[k], -1.0)):
            tv = tris[t]
            (slot,) = np.flatnonzero((tv != o) & (tv != d))
            rows.append(r)
            cols.append(3 * t + slot)
            vals.append(sign)
    return sp.csr_matrix((vals, (rows, cols)),
                         shape=(n, 3 * mesh.num_triangles))


@dataclass
class TraceSpace:
    """Scalar div-conforming space on one oriented surface.

    One dof per interior edge of `surface`; `local_map` expresses each dof
    in the elementary shape functions of `mesh` (== `surface` for RWG, the
    barycentric refinement for BC).
    """
    flavour: str                    # "RWG" | "BC"
    surface: OrientedSurfaceMesh
    edges: EdgeSet
    mesh: OrientedSurfaceMesh
    mesh_edges: EdgeSet
    local_map: sp.csr_matrix        # (ndofs, 3 * mesh.num_triangles)
    refinement: Optional[BarycentricRefinement] = None

    @property
    def ndofs(self) -> int:
        return self.local_map.shape[0]


def rwg_space(surface: OrientedSurfaceMesh,
              edges: Optional[EdgeSet] = None) -> TraceSpace:
    """Edge-function space with one dof per interior edge."""
    if edges is None:
        edges = edge_enumeration(surface)
    lm = _edge_local_map(surface, edges)
    return TraceSpace("RWG", surface, edges, surface, edges, lm)


# ---------------------------------------------------------------------------
# Buffa-Christiansen dual space
# ---------------------------------------------------------------------------

def _flux_coefficient(field_value, edge_vec, normal):
    """Flux of a linear field across a fine edge, signed plus -> minus.

    The crossing direction from the plus to the minus triangle is n x t
    with t the unit tangent from the lower- to the higher-numbered vertex;
    the elementary edge function of that edge carries unit such flux, so
    this value is directly its expansion coefficient.
    """
    return float(field_value @ np.cross(normal, edge_vec))


def _half_fan(v: int, mid: int, start: int, fine: OrientedSurfaceMesh,
              fine_edges: EdgeSet, lookup: Dict[Tuple[int, int], int]
              ) -> Dict[int, float]:
    """Unit-divergence half-fan field around vertex `v` of a coarse edge.

    `mid` is the fine vertex at the coarse edge midpoint and `start` the
    fine triangle adjacent to the spoke (v, mid) on its counter-clockwise
    side.  Returns {fine interior edge index: coefficient} for a field
    with uniform divergence summing to 1 over the fan and flux 1/2 leaving
    through each of the two rim edges next to the spoke (v, mid).  On open
    surfaces the fan stops at the surface boundary with zero flux through
    it (the boundary-adapted variant).
    """
    tris = fine.triangles

    def entry_exit(t):
        tv = list(tris[t])
        i = tv.index(v)
        return tv[(i + 1) % 3], tv[(i + 2) % 3]   # ccw entry / exit spoke

    def other_tri(a, b, t):
        k = lookup[(min(a, b), max(a, b))]
        if not fine_edges.interior[k]:
            return None
        tp, tm = fine_edges.tri_plus[k], fine_edges.tri_minus[k]
        return tm if tp == t else tp

    # walk counter-clockwise from `start`
    fan = [start]
    closed = False
    t = start
    while True:
        _, w_out = entry_exit(t)
        nxt = other_tri(v, w_out, t)
        if nxt is None:
            break
        if nxt == start:
            closed = True
            break
        fan.append(nxt)
        t = nxt
    if not closed:   # walk clockwise to the boundary on the other side
        t = start
        head = []
        while True:
            w_in, _ = entry_exit(t)
            prv = other_tri(v, w_in, t)
            if prv is None:
                break
            head.append(prv)
            t = prv
        fan = head[::-1] + fan
    M = len(fan)
    p = fan.index(start)      # spoke (v, mid) sits between fan[p-1], fan[p]
    if closed:
        # cyclic spokes j between fan[j-1], fan[j]; gauge: zero flux on the
        # defining spoke, uniform step 1/M with a 1/2 jump at the ports
        c = {j: j / M - 0.5 for j in range(1, M)}
    else:
        c = {j: j / M for j in range(1, p)}
        c[p] = p / M - 0.5
        c.update({j: j / M - 1.0 for j in range(p + 1, M)})

    verts = fine.vertices
    coeffs: Dict[int, float] = {}

    def add(a, b, flux_from, amount):
        """amount flows out of triangle `flux_from` across fine edge (a,b)."""
        k = lookup[(min(a, b), max(a, b))]
        sign = 1.0 if fine_edges.tri_plus[k] == flux_from else -1.0
        coeffs[k] = coeffs.get(k, 0.0) + sign * amount

    for j, cj in c.items():
        w_in, _ = entry_exit(fan[j])
        add(v, w_in, fan[j - 1], cj)        # cj flows fan[j-1] -> fan[j]
    # ports: the rim edge of each triangle (v, mid, g) flanking the spoke
    # (v, mid) is (mid, g); half the unit divergence leaves through each
    for t in (fan[p - 1], fan[p]):
        tv = [w for w in tris[t] if w != v and w != mid]
        if len(tv) != 1:
            raise SpaceError("fan triangle does not touch the edge midpoint")
        add(mid, tv[0], t, 0.5)
    return coeffs


def bc_space(surface: OrientedSurfaceMesh,
             edges: Optional[EdgeSet] = None,
             refinement: Optional[BarycentricRefinement] = None) -> TraceSpace:
    """Dual space on the barycentric refinement, one dof per interior edge.

    Each dof is the half-difference of two unit-divergence half-fans around
    the edge endpoints; at surface-boundary vertices the fan is open with
    zero flux through the boundary.
    """
    if edges is None:
        edges = edge_enumeration(surface)
    if refinement is None:
        refinement = barycentric_refine(surface)
    fine = refinement.fine
    fine_edges = edge_enumeration(fine)
    lookup = fine_edges.lookup()
    tris = surface.triangles

    rows, cols, vals = [], [], []
    fine_int_pos = -np.ones(fine_edges.num_edges, int)
    fine_int_pos[fine_edges.interior_index()] = \
        np.arange(int(fine_edges.interior.sum()))

    for r, k in enumerate(edges.interior_index()):
        o, d = (int(x) for x in edges.edges[k])
        mid = refinement.edge_midpoint[(o, d)]
        acc: Dict[int, float] = {}
        for v, coarse_tri, fac in ((o, edges.tri_minus[k], 0.5),
                                   (d, edges.tri_plus[k], -0.5)):
            # start child: the coarse triangle traversing (v -> other) in
            # cyclic order contributes the child (v, mid, barycenter),
            # which lies counter-clockwise of the spoke (v, mid)
            local = list(tris[coarse_tri]).index(v)
            start = int(6 * coarse_tri + 2 * local)
            for fe, cval in _half_fan(v, mid, start, fine, fine_edges,
                                      lookup).items():
                acc[fe] = acc.get(fe, 0.0) + fac * cval
        for fe, cval in sorted(acc.items()):
            if abs(cval) < 1e-14:
                continue
            if fine_int_pos[fe] < 0:
                raise SpaceError("dual function carries flux through the "
                                 "surface boundary")
            rows.append(r)
            cols.append(fine_int_pos[fe])
            vals.append(cval)

    n = len(edges.interior_index())
    coeff = sp.csr_matrix((vals, (rows, cols)),
                          shape=(n, int(fine_edges.interior.sum())))
    lm = (coeff @ _edge_local_map(fine, fine_edges)).tocsr()
    return TraceSpace("BC", surface, edges, fine, fine_edges, lm, refinement)


def refine_space(space: TraceSpace,
                 refinement: BarycentricRefinement) -> TraceSpace:
    """Re-express an RWG space on the barycentric refinement of its surface.

    Exact: a piecewise-linear div-conforming field restricted to the fine
    triangles is determined by its fluxes across the fine edges, and the
    flux of a linear field across a straight edge is its midpoint value
    times the edge length (folded into the coefficient rule).
    """
    if space.flavour != "RWG":
        raise SpaceError("only RWG spaces can be refined")
    if refinement.fine.vertices.shape[0] < space.surface.vertices.shape[0]:
        raise SpaceError("refinement does not match the surface")
    fine = refinement.fine
    fine_edges = edge_enumeration(fine)
    lookup = fine_edges.lookup()
    verts = fine.vertices
    normals = space.surface.normals()
    areas = space.surface.areas()
    tris = space.surface.triangles
    edges = space.edges

    fine_int_pos = -np.ones(fine_edges.num_edges, int)
    fine_int_pos[fine_edges.interior_index()] = \
        np.arange(int(fine_edges.interior.sum()))

    rows, cols, vals = [], [], []
    for r, k in enumerate(edges.interior_index()):
        o, d = (int(x) for x in edges.edges[k])
        mid = refinement.edge_midpoint[(o, d)]
        seen: Dict[int, float] = {}
        for t, sign in ((edges.tri_plus[k], 1.0), (edges.tri_minus[k], -1.0)):
            a, b, c = (int(x) for x in tris[t])
            g = int(refinement.barycenter[t])
            (opp,) = [w for w in (a, b, c) if w not in (o, d)]
            mids = [refinement.edge_midpoint[(min(u, w), max(u, w))]
                    for (u, w) in ((a, b), (b, c), (c, a))]
            inner = [(g, a), (g, b), (g, c)] + [(g, m) for m in mids]
            # halves of the defining coarse edge: nonzero flux, shared with
            # the other coarse triangle -- record once (continuity)
            halves = [] if t != edges.tri_plus[k] else [(o, mid), (mid, d)]
            for (u, w) in inner + halves:
                fe = lookup[(min(u, w), max(u, w))]
                if fe in seen or not fine_edges.interior[fe]:
                    continue
                lo, hi = fine_edges.edges[fe]
                mpt = 0.5 * (verts[lo] + verts[hi])
                f = sign * (mpt - space.surface.vertices[opp]) / (2 * areas[t])
                cval = _flux_coefficient(f, verts[hi] - verts[lo], normals[t])
                if abs(cval) > 1e-14:
                    seen[fe] = cval
        for fe, cval in sorted(seen.items()):
            rows.append(r)
            cols.append(fine_int_pos[fe])
            vals.append(cval)

    n = len(edges.interior_index())
    coeff = sp.csr_matrix((vals, (rows, cols)),
                          shape=(n, int(fine_edges.interior.sum())))
    lm = (coeff @ _edge_local_map(fine, fine_edges)).tocsr()
    return TraceSpace(space.flavour, space.surface, edges, fine, fine_edges,
                      lm, refinement)


# ---------------------------------------------------------------------------
# Multi-trace collections
# ---------------------------------------------------------------------------

@dataclass
class MultiTraceSpace:
    """One scalar trace space per domain; electric and magnetic components
    share it.  Global layout: domains ascending, within each domain all
    electric dofs then all magnetic dofs."""
    spaces: Tuple[TraceSpace, ...]
    flavour: str

    @property
    def scalar_dims(self) -> List[int]:
        return [s.ndofs for s in self.spaces]

    @property
    def dim(self) -> int:
        return 2 * sum(self.scalar_dims)

    def domain_offset(self, i: int) -> int:
        return 2 * sum(self.scalar_dims[:i])

    def block(self, i: int, component: str) -> slice:
        """Global index range of domain i's electric or magnetic dofs."""
        off = self.domain_offset(i)
        n = self.spaces[i].ndofs
        if component == "electric":
            return slice(off, off + n)
        if component == "magnetic":
            return slice(off + n, off + 2 * n)
        raise ValueError(f"unknown component {component!r}")


def _make_space(surface: OrientedSurfaceMesh, flavour: str) -> TraceSpace:
    if flavour == "RWG":
        return rwg_space(surface)
    if flavour == "BC":
        return bc_space(surface)
    raise ValueError(f"unknown flavour {flavour!r}")


def multi_trace(mesh: SkeletonMesh, flavour: str = "RWG") -> MultiTraceSpace:
    """Full multi-trace space over every domain boundary (exterior included)."""
    spaces = tuple(_make_space(build_domain_boundary(mesh, i, validate=False),
                               flavour)
                   for i in range(mesh.domain_count))
    return MultiTraceSpace(spaces, flavour)


def reduced_multi_trace(reduced: ReducedGeometry,
                        flavour: str = "RWG") -> MultiTraceSpace:
    """Trace spaces on the single-sided reduced surfaces (possibly open;
    domains owning no interface contribute zero dofs)."""
    return MultiTraceSpace(tuple(_make_space(s, flavour)
                                 for s in reduced.surfaces), flavour)


# ---------------------------------------------------------------------------
# Single-trace embedding
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingMatrix:
    """Sparse map from reduced single-trace dofs into the multi-trace space.

    `scalar` maps scalar reduced dofs to scalar multi-trace dofs (domains
    ascending, edge order within); `matrix` applies it identically to the
    electric and magnetic components in the global interleaved layout.
    """
    matrix: sp.csr_matrix
    scalar: sp.csr_matrix
    column_dims: List[int]          # reduced scalar dofs per domain

    @property
    def dim_reduced(self) -> int:
        return self.matrix.shape[1]


def build_R(reduced: ReducedGeometry,
            domain_edge_sets: Sequence[EdgeSet]) -> EmbeddingMatrix:
    """Embedding of the reduced single-trace space into the multi-trace one.

    A reduced dof on geometric edge e receives a +1 entry in every domain
    whose boundary contains e as an interior edge: with edges uniformly
    oriented from the lower to the higher vertex index and the sign
    convention of this module, the tangential traces of the embedded
    function agree (in the twisted sense) across every interface, so no
    -1 entries occur.
    """
    mesh = reduced.mesh
    # domains incident to each skeleton edge
    incident: Dict[Tuple[int, int], set] = {}
    tris = mesh.triangles
    for t in range(mesh.num_triangles):
        a, b, c = (int(x) for x in tris[t])
        for (u, w) in ((a, b), (b, c), (c, a)):
            key = (min(u, w), max(u, w))
            incident.setdefault(key, set()).update(
                int(x) for x in mesh.adjacency[t])

    lookups = []
    scalar_rows = []
    for es in domain_edge_sets:
        pos = {}
        for r, k in enumerate(es.interior_index()):
            pos[(int(es.edges[k][0]), int(es.edges[k][1]))] = r
        lookups.append(pos)
        scalar_rows.append(len(pos))
    row_offsets = np.concatenate([[0], np.cumsum(scalar_rows)])

    rows, cols, vals = [], [], []
    column_dims = []
    col = 0
    for dom, surf in enumerate(reduced.surfaces):
        es = edge_enumeration(surf)
        ndof = 0
        for k in es.interior_index():
            key = (int(es.edges[k][0]), int(es.edges[k][1]))
            hit = [j for j in sorted(incident[key]) if key in lookups[j]]
            if set(hit) != incident[key]:
                missing = incident[key] - set(hit)
                raise MeshTopologyError(
                    f"reduced edge {key} is not an interior edge of the "
                    f"boundary of domain(s) {sorted(missing)}")
            for j in hit:
                rows.append(row_offsets[j] + lookups[j][key])
                cols.append(col)
                vals.append(1.0)
            col += 1
            ndof += 1
        column_dims.append(ndof)
    scalar = sp.csr_matrix((vals, (rows, cols)),
                           shape=(int(row_offsets[-1]), col))

    # expand to the interleaved electric/magnetic layout
    rows2, cols2, vals2 = [], [], []
    col_offsets = np.concatenate([[0], np.cumsum(column_dims)])
    coo = scalar.tocoo()
    for r, c, v in zip(coo.row, coo.col, coo.data):
        i = int(np.searchsorted(row_offsets, r, side="right") - 1)
        j = int(np.searchsorted(col_offsets, c, side="right") - 1)
        gr = 2 * row_offsets[i] + (r - row_offsets[i])
        gc = 2 * col_offsets[j] + (c - col_offsets[j])
        ne, me = scalar_rows[i], column_dims[j]
        rows2 += [gr, gr + ne]
        cols2 += [gc, gc + me]
        vals2 += [v, v]
    matrix = sp.csr_matrix((vals2, (rows2, cols2)),
                           shape=(2 * int(row_offsets[-1]), 2 * col))
    return EmbeddingMatrix(matrix, scalar, column_dims)


# ---------------------------------------------------------------------------
# Gram matrices of the twisted pairing
# ---------------------------------------------------------------------------

def _local_gram_blocks(mesh: OrientedSurfaceMesh, degree: int = 4):
    """Block-diagonal matrix of int_t (n x phi_l).phi_m over every triangle."""
    bary, w = triangle_rule(degree)
    p = mesh.triangle_vertices()                      # (T, 3, 3)
    areas = mesh.areas()
    normals = mesh.normals()
    x = np.einsum("qk,tkc->tqc", bary, p)             # (T, Q, 3)
    e = (x[:, None, :, :] - p[:, :, None, :]) / (2 * areas)[:, None, None, None]
    nxe = np.cross(np.broadcast_to(normals[:, None, None, :], e.shape), e)
    loc = np.einsum("q,tlqc,tmqc->tlm", w, nxe, e) * areas[:, None, None]
    T = mesh.num_triangles
    base = 3 * np.arange(T)[:, None, None]
    rows = np.broadcast_to(base + np.arange(3)[None, :, None], (T, 3, 3))
    cols = np.broadcast_to(base + np.arange(3)[None, None, :], (T, 3, 3))
    return sp.csr_matrix((loc.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(3 * T, 3 * T))


def _common_mesh(test: TraceSpace, trial: TraceSpace):
    """Local maps of both spaces on a shared representation mesh."""
    if test.mesh is trial.mesh or (
            test.mesh.num_triangles == trial.mesh.num_triangles
            and np.array_equal(test.mesh.triangles, trial.mesh.triangles)):
        return test.local_map, trial.local_map, test.mesh
    for a, b, swap in ((test, trial, False), (trial, test, True)):
        if a.refinement is not None and b.refinement is None:
            br = refine_space(b, a.refinement)
            return ((a.local_map, br.local_map, a.mesh) if not swap
                    else (br.local_map, a.local_map, a.mesh))
    raise SpaceError("test and trial spaces live on unrelated meshes")


def gram_surface(test: TraceSpace, trial: TraceSpace,
                 degree: int = 4) -> sp.csr_matrix:
    """Scalar Gram matrix int (n x test_i).trial_j over one surface."""
    if test.surface.num_triangles != trial.surface.num_triangles or (
            not np.array_equal(test.surface.triangles,
                               trial.surface.triangles)):
        raise SpaceError("gram requires spaces on the same surface")
    pt, pu, mesh = _common_mesh(test, trial)
    blocks = _local_gram_blocks(mesh, degree)
    return (pt @ blocks @ pu.T).tocsr()


def gram_cross(test: MultiTraceSpace, trial: MultiTraceSpace,
               swap: bool = False, degree: int = 4) -> sp.csr_matrix:
    """Twisted-pairing Gram of two multi-trace spaces.

    Block-diagonal per domain; per component identical scalar blocks on
    the (electric, electric) and (magnetic, magnetic) positions, or on the
    anti-diagonal positions when `swap` pairs electric tests with magnetic
    trials and vice versa.
    """
    if len(test.spaces) != len(trial.spaces):
        raise SpaceError("multi-trace spaces have different domain counts")
    blocks = []
    for st, su in zip(test.spaces, trial.spaces):
        g = gram_surface(st, su, degree)
        z = sp.csr_matrix((st.ndofs, su.ndofs))
        blocks.append(sp.bmat([[z, g], [g, z]]) if swap
                      else sp.block_diag([g, g]))
    return sp.block_diag(blocks, format="csr")
