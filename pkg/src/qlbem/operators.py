"""Kernel evaluation and Galerkin assembly of boundary integral operators.

Assembles, on the trace spaces of `spaces`:
  * the single-layer operator matrix (vector part -i*kappa*V plus the scalar
    divergence part -1/(i*kappa)*D obtained by moving the surface gradient
    onto the rotated test function),
  * the principal-value double-layer matrix,
  * the short-range screened regulariser form (sparse, real),
  * the symmetric positive definite energy form with a decaying kernel,
  * plane-wave excitation right-hand sides.

Every Galerkin entry reduces to triangle-pair integrals of the elementary
shape functions phi_l(x) = (x - v_l) / (2A).  Because these are affine, a
pair block is a function of a handful of kernel moments

    n0  = sum w G,   nx = sum w G x,     ny = sum w G y,  nxy = sum w G x.y
    m0  = sum w F,   mx = sum w F x,     my = sum w F y,
    mxy = sum w F (y cross x)

with F = G'(r)/r the gradient factor, via

    V_lm * 4AA' = nxy - nx.w_m - v_l.ny + n0 v_l.w_m
    K_lm * 4AA' = (v_l - w_m).mxy + (my - mx).(v_l cross w_m)
    S0 (plain kernel integral feeding the divergence pairing) = n0

which follows from the triple-product collapse (x-y).(b x a) = (v_l-w_m).(b x a)
for a = x-v_l, b = y-w_m.  Moments are shifted to the pair midpoint before
the final combination to avoid cancellation.  Regular pairs use tensor
products of symmetric triangle rules, touching pairs the relative-coordinate
transforms of `quadrature`, and close-but-disjoint pairs a higher-order
tensor rule.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .geometry import OrientedSurfaceMesh
from .quadrature import (gauss1d, sauter_schwab_coincident,
                         sauter_schwab_edge, sauter_schwab_vertex,
                         sauter_to_bary, triangle_rule)
from .spaces import MultiTraceSpace, TraceSpace

FOUR_PI = 4.0 * np.pi

# slot-level pair matrices larger than this are not materialised; the
# assembly sandwiches them into dof matrices block by block instead
STREAM_BYTES = 1_000_000_000


class OperatorError(Exception):
    pass


# ---------------------------------------------------------------------------
# Materials and kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Material:
    """Homogeneous isotropic material at a fixed angular frequency.

    Wavenumber and impedance are derived from (epsilon, mu, omega).  The
    explicit overrides exist only for analytic continuation (a purely
    imaginary wavenumber with a decaying kernel cannot be reached through
    the principal square root of epsilon*mu).
    """
    epsilon: complex        # permittivity
    mu: complex             # permeability
    omega: float            # angular frequency
    wavenumber: complex = None
    impedance: complex = None

    def __post_init__(self):
        if self.wavenumber is None and (complex(self.epsilon).real <= 0
                                        or complex(self.mu).real <= 0):
            raise OperatorError("material must have Re(epsilon) > 0 and "
                                "Re(mu) > 0")
        if self.omega <= 0:
            raise OperatorError("angular frequency must be positive")

    @property
    def kappa(self) -> complex:
        if self.wavenumber is not None:
            return self.wavenumber
        return self.omega * cmath.sqrt(complex(self.epsilon)
                                       * complex(self.mu))

    @property
    def eta(self) -> complex:
        if self.impedance is not None:
            return self.impedance
        return cmath.sqrt(complex(self.mu) / complex(self.epsilon))

    def at_imaginary_wavenumber(self) -> "Material":
        """Same impedance, wavenumber rotated to -i*kappa (decaying
        kernel branch)."""
        return Material(self.epsilon, self.mu, self.omega,
                        wavenumber=-1j * self.kappa, impedance=self.eta)


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel g(r)/(4 pi r) selector.

    kinds: "helmholtz" with g = exp(-i*kappa*r); "screened" with
    g = exp(-(r/delta)^2) (gaussian) or exp(-r/delta^2) (literal), truncated
    beyond cutoff_factor*delta; "decaying" with g = exp(-kappa0*r).
    """
    kind: str
    kappa: complex = 0.0
    delta: float = 0.0
    cutoff_factor: float = 3.5
    screening: str = "gaussian"
    kappa0: float = 0.0

    @staticmethod
    def helmholtz(kappa: complex) -> "KernelSpec":
        if kappa == 0:
            raise OperatorError("helmholtz kernel requires kappa != 0")
        return KernelSpec("helmholtz", kappa=complex(kappa))

    @staticmethod
    def screened(delta: float, cutoff_factor: float = 3.5,
                 screening: str = "gaussian") -> "KernelSpec":
        if delta <= 0:
            raise OperatorError("screening range delta must be positive")
        if cutoff_factor <= 0:
            raise OperatorError("cutoff_factor must be positive")
        if screening not in ("gaussian", "literal"):
            raise OperatorError(f"unknown screening {screening!r}")
        return KernelSpec("screened", delta=delta,
                          cutoff_factor=cutoff_factor, screening=screening)

    @staticmethod
    def decaying(kappa0: float) -> "KernelSpec":
        if kappa0 <= 0:
            raise OperatorError("kappa0 must be positive")
        return KernelSpec("decaying", kappa0=kappa0)

    @property
    def is_complex(self) -> bool:
        return self.kind == "helmholtz"

    def value(self, r: np.ndarray) -> np.ndarray:
        """Kernel value g(r)/(4 pi r); r must be positive."""
        if self.kind == "helmholtz":
            return np.exp(-1j * self.kappa * r) / (FOUR_PI * r)
        if self.kind == "decaying":
            return np.exp(-self.kappa0 * r) / (FOUR_PI * r)
        if self.screening == "gaussian":
            w = np.exp(-(r / self.delta) ** 2)
        else:
            w = np.exp(-r / self.delta ** 2)
        w = np.where(r > self.cutoff_factor * self.delta, 0.0, w)
        return w / (FOUR_PI * r)

    def grad_factor(self, r: np.ndarray) -> np.ndarray:
        """d/dr of the kernel divided by r: grad_x kernel = factor*(x-y)."""
        if self.kind != "helmholtz":
            raise OperatorError("gradient kernel only used for helmholtz")
        k = self.kappa
        return np.exp(-1j * k * r) * (-1j * k * r - 1.0) / (FOUR_PI * r ** 3)


@dataclass(frozen=True)
class QuadratureConfig:
    far_degree: int = 4
    near_degree: int = 6
    singular_order: int = 5
    near_factor: float = 1.5        # centroid gap threshold in local radii

    def raised(self, step: int = 2) -> "QuadratureConfig":
        return QuadratureConfig(self.far_degree + step,
                                self.near_degree + step,
                                self.singular_order + 1,
                                self.near_factor)


@dataclass
class OperatorMatrix:
    values: object                  # dense ndarray, sparse matrix or blocks
    row_space: object
    col_space: object
    kernel: KernelSpec
    quadrature: QuadratureConfig
    parts: Optional[Dict[str, np.ndarray]] = None

    @property
    def shape(self):
        if isinstance(self.values, list):
            n = 2 * sum(b.shape[0] for b in self.values)
            return (n, n)
        return self.values.shape


# ---------------------------------------------------------------------------
# Triangle-pair bookkeeping
# ---------------------------------------------------------------------------

def _canonical_vertex_ids(mesh: OrientedSurfaceMesh,
                          registry: Dict[tuple, int]) -> np.ndarray:
    """Vertex ids stable across meshes that duplicate the same coordinates
    (refinements of different boundary pieces share triangles but not
    vertex arrays)."""
    used = np.unique(mesh.triangles)
    ids = np.zeros(mesh.vertices.shape[0], int)
    for v in used:
        key = tuple(np.round(mesh.vertices[v], 9))
        ids[v] = registry.setdefault(key, len(registry))
    return ids


def _touching_pairs(tris_t: np.ndarray, tris_u: np.ndarray):
    """All (i, j) pairs of triangles sharing at least one canonical vertex,
    with the shared count, via the vertex incidence product."""
    nv = int(max(tris_t.max(), tris_u.max())) + 1

    def incidence(tris):
        return sp.csr_matrix(
            (np.ones(tris.size), (np.repeat(np.arange(tris.shape[0]), 3),
                                  tris.ravel())),
            shape=(tris.shape[0], nv))

    prod = (incidence(tris_t) @ incidence(tris_u).T).tocoo()
    return {(int(i), int(j)): int(c)
            for i, j, c in zip(prod.row, prod.col, prod.data)}


_SS_RULES = {3: sauter_schwab_coincident, 2: sauter_schwab_edge,
             1: sauter_schwab_vertex}


@dataclass
class _MeshData:
    """Per-mesh quantities reused across pair sweeps."""
    corners: np.ndarray             # (T, 3, 3)
    areas: np.ndarray               # (T,)
    centroids: np.ndarray           # (T, 3)
    radii: np.ndarray               # max corner distance from centroid
    x_far: np.ndarray               # (T, Qf, 3)
    w_far: np.ndarray               # (T, Qf)
    x_near: np.ndarray
    w_near: np.ndarray


def _mesh_data(mesh: OrientedSurfaceMesh, quad: QuadratureConfig):
    corners = mesh.triangle_vertices()
    areas = mesh.areas()
    centroids = mesh.centroids()
    radii = np.linalg.norm(corners - centroids[:, None, :], axis=-1
                           ).max(axis=1)

    def points(degree):
        bary, wq = triangle_rule(degree)
        return (np.einsum("qk,tkc->tqc", bary, corners),
                areas[:, None] * wq[None, :])

    xf, wf = points(quad.far_degree)
    xn, wn = points(quad.near_degree)
    return _MeshData(corners, areas, centroids, radii, xf, wf, xn, wn)


def _chart_perms(tri_t, tri_u, nshared):
    """Local vertex orders putting the shared vertices first, in the same
    order on both sides (shared-edge charts run the edge identically)."""
    shared = [v for v in tri_t if v in set(tri_u)][:nshared]
    order_t = shared + [v for v in tri_t if v not in shared]
    order_u = shared + [v for v in tri_u if v not in shared]
    return ([list(tri_t).index(v) for v in order_t],
            [list(tri_u).index(v) for v in order_u])


# ---------------------------------------------------------------------------
# Moment-based pair forms
# ---------------------------------------------------------------------------

def _forms_from_moments(n0, nx, ny, nxy, kmom, px, ax, py, ay, want_k):
    """Galerkin pair blocks from kernel moments (see module docstring).

    Moments are per-pair arrays (n,) / (n, 3); px, py are (n, 3, 3) corner
    coordinates; shifts to the pair midpoint are applied here.
    """
    c = 0.5 * (px.mean(axis=1) + py.mean(axis=1))
    nxy = nxy - np.einsum("nc,nc->n", c, nx + ny) \
        + n0 * np.einsum("nc,nc->n", c, c)
    nx = nx - n0[:, None] * c
    ny = ny - n0[:, None] * c
    pxs = px - c[:, None, :]
    pys = py - c[:, None, :]
    scale = 1.0 / (4.0 * ax * ay)
    v = (nxy[:, None, None]
         - np.einsum("nc,nmc->nm", nx, pys)[:, None, :]
         - np.einsum("nlc,nc->nl", pxs, ny)[:, :, None]
         + n0[:, None, None] * np.einsum("nlc,nmc->nlm", pxs, pys))
    v *= scale[:, None, None]
    s0 = n0          # plain kernel integral; 1/A factors live in _div_map
    k = None
    if want_k:
        m0, mx, my, mxy = kmom
        mxy = mxy - np.cross(my, c) - np.cross(c, mx)
        mx = mx - m0[:, None] * c
        my = my - m0[:, None] * c
        cross_vw = np.cross(pxs[:, :, None, :], pys[:, None, :, :])
        k = (np.einsum("nlc,nc->nl", pxs, mxy)[:, :, None]
             - np.einsum("nmc,nc->nm", pys, mxy)[:, None, :]
             + np.einsum("nlmc,nc->nlm", cross_vw, my - mx))
        k *= scale[:, None, None]
    return v, s0, k


def _pair_values(kernel, x, y, w, px, ax, py, ay, want_k, paired):
    """Pair blocks from explicit quadrature points.

    paired=True: x, y are matched point lists (n, Q, 3) with joint weight
    w (n, Q) (relative-coordinate rules).  paired=False: independent point
    sets (n, Qx, 3) / (n, Qy, 3) with w = (wx, wy) per-side weights.
    """
    if paired:
        r = np.linalg.norm(x - y, axis=-1)
        gw = kernel.value(r) * w
        n0 = gw.sum(axis=1)
        nx = np.einsum("nq,nqc->nc", gw, x)
        ny = np.einsum("nq,nqc->nc", gw, y)
        nxy = np.einsum("nq,nq->n", gw, np.einsum("nqc,nqc->nq", x, y))
        kmom = None
        if want_k:
            fw = kernel.grad_factor(r) * w
            kmom = (fw.sum(axis=1),
                    np.einsum("nq,nqc->nc", fw, x),
                    np.einsum("nq,nqc->nc", fw, y),
                    np.einsum("nq,nqc->nc", fw, np.cross(y, x)))
    else:
        wx, wy = w
        r = np.linalg.norm(x[:, :, None, :] - y[:, None, :, :], axis=-1)
        ww = wx[:, :, None] * wy[:, None, :]
        gw = kernel.value(r) * ww
        n0 = gw.sum(axis=(1, 2))
        nx = np.einsum("nqp,nqc->nc", gw, x)
        ny = np.einsum("nqp,npc->nc", gw, y)
        nxy = np.einsum("nqp,nqc,npc->n", gw, x, y, optimize=True)
        kmom = None
        if want_k:
            fw = kernel.grad_factor(r) * ww
            yx = np.cross(y[:, None, :, :], x[:, :, None, :])
            kmom = (fw.sum(axis=(1, 2)),
                    np.einsum("nqp,nqc->nc", fw, x),
                    np.einsum("nqp,npc->nc", fw, y),
                    np.einsum("nqp,nqpc->nc", fw, yx, optimize=True))
    return _forms_from_moments(n0, nx, ny, nxy, kmom, px, ax, py, ay,
                               want_k)


def _ss_points(rule_n, nshared, chart_t, chart_u, area_t, area_u):
    """Matched quadrature points on touching pairs from the
    relative-coordinate rule; charts are (n, 3, 3) corner coordinates in
    chart order.  Returns x, y (n, Q, 3) and the combined weight (n, Q)."""
    u, v, w = _SS_RULES[nshared](rule_n)
    x = np.einsum("qk,nkc->nqc", sauter_to_bary(u), chart_t)
    y = np.einsum("qk,nkc->nqc", sauter_to_bary(v), chart_u)
    wt = w[None, :] * (4.0 * area_t * area_u)[:, None]
    return x, y, wt


def _touching_values(kernel, group, nshared, md_t, md_u, tt, tu,
                     order, want_k):
    """Pair blocks for touching pairs (i, j) sharing `nshared` canonical
    vertices; tt/tu are the canonical triangle-vertex arrays.  Processed
    in batches to bound the size of the point arrays."""
    idx = np.array(group)
    n = len(group)
    charts_t = np.zeros((n, 3, 3))
    charts_u = np.zeros((n, 3, 3))
    for m, (i, j) in enumerate(group):
        perm_t, perm_u = _chart_perms(tt[i], tu[j], nshared)
        charts_t[m] = md_t.corners[i][perm_t]
        charts_u[m] = md_u.corners[j][perm_u]
    at = md_t.areas[idx[:, 0]]
    au = md_u.areas[idx[:, 1]]
    npts = _SS_RULES[nshared](order)[2].size
    batch = max(1, int(2 ** 22 // max(1, npts)))
    outs = []
    for lo in range(0, n, batch):
        s = slice(lo, lo + batch)
        x, y, w = _ss_points(order, nshared, charts_t[s], charts_u[s],
                             at[s], au[s])
        outs.append(_pair_values(kernel, x, y, w,
                                 md_t.corners[idx[s, 0]], at[s],
                                 md_u.corners[idx[s, 1]], au[s],
                                 want_k, paired=True))
    v = np.concatenate([o[0] for o in outs])
    s0 = np.concatenate([o[1] for o in outs])
    k = np.concatenate([o[2] for o in outs]) if want_k else None
    return v, s0, k


# ---------------------------------------------------------------------------
# Dense assembly core
# ---------------------------------------------------------------------------

def _div_map(space: TraceSpace) -> sp.csr_matrix:
    """(ndofs x T) matrix of per-triangle divergence densities."""
    t = space.mesh.num_triangles
    agg = sp.csr_matrix(
        (np.repeat(1.0 / space.mesh.areas(), 3),
         (np.arange(3 * t) // 3, np.arange(3 * t))),
        shape=(t, 3 * t))
    return (space.local_map @ agg.T).tocsr()


def _flatten_hits(hits):
    """Ball-query result lists -> flat (i, j) index arrays."""
    lens = [len(h) for h in hits]
    i = np.repeat(np.arange(len(hits)), lens)
    j = (np.concatenate([np.asarray(h, int) for h in hits if len(h)])
         if i.size else np.zeros(0, int))
    return i, j


def _touch_counts(touching, i, j, nu):
    """Shared-vertex count per (i, j) pair, 0 for disjoint pairs."""
    if not touching:
        return np.zeros(i.size, int)
    keys = np.array([a * nu + b for a, b in touching], dtype=np.int64)
    cnts = np.array(list(touching.values()))
    order = np.argsort(keys)
    keys, cnts = keys[order], cnts[order]
    q = i.astype(np.int64) * nu + j
    pos = np.searchsorted(keys, q)
    pos = np.minimum(pos, keys.size - 1)
    out = np.where(keys[pos] == q, cnts[pos], 0)
    return out


def _near_pairs(md_t, md_u, touching, factor):
    """Disjoint pairs with centroid gap below factor*(r_i + r_j)."""
    tree = cKDTree(md_u.centroids)
    search = factor * (md_t.radii + md_u.radii.max())
    i, j = _flatten_hits(tree.query_ball_point(md_t.centroids, r=search))
    if not i.size:
        return []
    gap = np.linalg.norm(md_t.centroids[i] - md_u.centroids[j], axis=1)
    counts = _touch_counts(touching, i, j, md_u.centroids.shape[0])
    keep = (counts == 0) & (gap < factor * (md_t.radii[i] + md_u.radii[j]))
    return list(zip(i[keep].tolist(), j[keep].tolist()))


def _assemble_pair_forms(test: TraceSpace, trial: TraceSpace,
                         kernel: KernelSpec, quad: QuadratureConfig,
                         want_k: bool):
    """Dense slot-level Galerkin forms sandwiched into dof matrices.

    Returns (V, D, K) of shape (ndofs_t, ndofs_u); K is None unless
    requested.  When test and trial live on the same mesh, touching and
    near corrections are computed once per unordered pair and mirrored, so
    the result is exactly (complex-)symmetric up to rounding.
    """
    mesh_t, mesh_u = test.mesh, trial.mesh
    same = mesh_t is mesh_u
    md_t = _mesh_data(mesh_t, quad)
    md_u = md_t if same else _mesh_data(mesh_u, quad)
    nt, nu = mesh_t.num_triangles, mesh_u.num_triangles
    if same:
        tt = tu = mesh_t.triangles
    else:
        reg: Dict[tuple, int] = {}
        tt = _canonical_vertex_ids(mesh_t, reg)[mesh_t.triangles]
        tu = _canonical_vertex_ids(mesh_u, reg)[mesh_u.triangles]
    touching = _touching_pairs(tt, tu)
    near = _near_pairs(md_t, md_u, touching, quad.near_factor)

    dtype = complex if kernel.is_complex else float
    itemsize = 16 if kernel.is_complex else 8
    # the slot-level matrix is (3*nt, 3*nu); when that would be huge
    # (refined-mesh dual spaces), sandwich each far block into the dof
    # matrices on the fly and keep only a sparse slot-level correction
    stream = (not want_k) and 9 * nt * nu * itemsize > STREAM_BYTES
    if stream:
        v_loc = s0 = k_loc = None
        map_tc = test.local_map.tocsc()
        map_ur = trial.local_map.tocsr()
        div_tc = _div_map(test).tocsc()
        div_ur = _div_map(trial).tocsr()
        v_dof = np.zeros((test.ndofs, trial.ndofs), dtype)
        d_dof = np.zeros((test.ndofs, trial.ndofs), dtype)
        corr_idx: List[tuple] = []
        corr_v: List[np.ndarray] = []
        corr_s: List[complex] = []
    else:
        v_loc = np.zeros((3 * nt, 3 * nu), dtype)
        s0 = np.zeros((nt, nu), dtype)
        k_loc = np.zeros((3 * nt, 3 * nu), dtype) if want_k else None

    skip = np.zeros((nt, nu), bool)
    for i, j in touching:
        skip[i, j] = True
    for i, j in near:
        skip[i, j] = True

    # ---- regular pairs: blocked far sweep over test triangles ----
    x_t, w_t = md_t.x_far, md_t.w_far
    x_u, w_u = md_u.x_far, md_u.w_far
    qf = w_t.shape[1]
    block = max(1, int(2 ** 21 // max(1, nu * qf * qf)))
    for lo in range(0, nt, block):
        hi = min(lo + block, nt)
        mask = skip[lo:hi]                               # (B, T')
        diff = x_t[lo:hi, :, None, None, :] - x_u[None, None, :, :, :]
        r = np.linalg.norm(diff, axis=-1)                # (B, Q, T', P)
        r[np.broadcast_to(mask[:, None, :, None], r.shape)] = 1.0
        ww = w_t[lo:hi, :, None, None] * w_u[None, None, :, :]
        ww = ww * ~mask[:, None, :, None]
        gw = kernel.value(r) * ww
        n0 = gw.sum(axis=(1, 3))                         # (B, T')
        nx = np.einsum("bqtp,bqc->btc", gw, x_t[lo:hi], optimize=True)
        ny = np.einsum("bqtp,tpc->btc", gw, x_u, optimize=True)
        nxy = np.einsum("bqtp,bqc,tpc->bt", gw, x_t[lo:hi], x_u,
                        optimize=True)

        def flat(z):
            return z.reshape((hi - lo) * nu, *z.shape[2:])

        kmom = None
        if want_k:
            fw = kernel.grad_factor(r) * ww
            mx = np.einsum("bqtp,bqc->btc", fw, x_t[lo:hi], optimize=True)
            my = np.einsum("bqtp,tpc->btc", fw, x_u, optimize=True)
            a = np.einsum("bqtp,tpa,bqd->btad", fw, x_u, x_t[lo:hi],
                          optimize=True)                 # sum w F y_a x_d
            mxy = np.stack([a[..., 1, 2] - a[..., 2, 1],
                            a[..., 2, 0] - a[..., 0, 2],
                            a[..., 0, 1] - a[..., 1, 0]], axis=-1)
            kmom = tuple(flat(z) for z in (fw.sum(axis=(1, 3)), mx, my,
                                           mxy))
        px = np.repeat(md_t.corners[lo:hi], nu, axis=0)
        py = np.tile(md_u.corners, (hi - lo, 1, 1))
        ax = np.repeat(md_t.areas[lo:hi], nu)
        ay = np.tile(md_u.areas, hi - lo)
        vb, s0b, kb = _forms_from_moments(flat(n0), flat(nx), flat(ny),
                                          flat(nxy), kmom, px, ax, py, ay,
                                          want_k)
        shape4 = (hi - lo, nu, 3, 3)
        vb2 = vb.reshape(shape4).transpose(0, 2, 1, 3).reshape(
            3 * (hi - lo), 3 * nu)
        s0b2 = s0b.reshape(hi - lo, nu)
        if stream:
            v_dof += map_tc[:, 3 * lo:3 * hi] @ np.asarray(
                map_ur @ vb2.T).T
            d_dof += div_tc[:, lo:hi] @ np.asarray(div_ur @ s0b2.T).T
        else:
            v_loc[3 * lo:3 * hi] += vb2
            s0[lo:hi] += s0b2
            if want_k:
                k_loc[3 * lo:3 * hi] += kb.reshape(shape4).transpose(
                    0, 2, 1, 3).reshape(3 * (hi - lo), 3 * nu)

    # ---- corrections: near pairs and touching pairs ----
    def scatter(idx, vp, s0p, kp, mirror):
        for m, (i, j) in enumerate(idx):
            if mirror and i == j:
                # a diagonal pair block is symmetric analytically; enforce
                # it, since gradient-kernel rounding there does not cancel
                vp[m] = 0.5 * (vp[m] + vp[m].T)
                if want_k:
                    kp[m] = 0.5 * (kp[m] + kp[m].T)
            if stream:
                corr_idx.append((i, j))
                corr_v.append(vp[m])
                corr_s.append(s0p[m])
                if mirror and i != j:
                    corr_idx.append((j, i))
                    corr_v.append(vp[m].T)
                    corr_s.append(s0p[m])
                continue
            v_loc[3 * i:3 * i + 3, 3 * j:3 * j + 3] += vp[m]
            s0[i, j] += s0p[m]
            if want_k:
                k_loc[3 * i:3 * i + 3, 3 * j:3 * j + 3] += kp[m]
            if mirror and i != j:
                v_loc[3 * j:3 * j + 3, 3 * i:3 * i + 3] += vp[m].T
                s0[j, i] += s0p[m]
                if want_k:
                    k_loc[3 * j:3 * j + 3, 3 * i:3 * i + 3] += kp[m].T

    near_group = [p for p in near if not (same and p[0] > p[1])]
    if near_group:
        idx = np.array(near_group)
        i, j = idx[:, 0], idx[:, 1]
        vp, s0p, kp = _pair_values(kernel, md_t.x_near[i], md_u.x_near[j],
                                   (md_t.w_near[i], md_u.w_near[j]),
                                   md_t.corners[i], md_t.areas[i],
                                   md_u.corners[j], md_u.areas[j],
                                   want_k, paired=False)
        scatter(idx, vp, s0p, kp, mirror=same)

    for nshared in (3, 2, 1):
        group = [(i, j) for (i, j), c in touching.items()
                 if c == nshared and not (same and i > j)]
        if not group:
            continue
        vp, s0p, kp = _touching_values(kernel, group, nshared, md_t, md_u,
                                       tt, tu, quad.singular_order, want_k)
        scatter(np.array(group), vp, s0p, kp, mirror=same)

    # ---- sandwich into dof matrices ----
    if stream:
        if corr_idx:
            idx = np.array(corr_idx)
            blk = np.array(corr_v)
            off = np.arange(3)
            rows = np.broadcast_to(
                (3 * idx[:, 0])[:, None, None] + off[None, :, None],
                blk.shape).ravel()
            cols = np.broadcast_to(
                (3 * idx[:, 1])[:, None, None] + off[None, None, :],
                blk.shape).ravel()
            cv = sp.coo_matrix((blk.ravel(), (rows, cols)),
                               shape=(3 * nt, 3 * nu)).tocsr()
            v_dof += np.asarray(
                (test.local_map @ cv @ trial.local_map.T).todense())
            cs = sp.coo_matrix((np.array(corr_s),
                                (idx[:, 0], idx[:, 1])),
                               shape=(nt, nu)).tocsr()
            d_dof += np.asarray(
                (_div_map(test) @ cs @ _div_map(trial).T).todense())
        return v_dof, d_dof, None

    def dof_matrix(loc, map_t, map_u):
        half = np.asarray(map_u @ loc.T)                 # (ndofs_u, rows)
        return np.asarray(map_t @ half.T)

    v = dof_matrix(v_loc, test.local_map, trial.local_map)
    d = dof_matrix(s0, _div_map(test), _div_map(trial))
    k = dof_matrix(k_loc, test.local_map, trial.local_map) if want_k \
        else None
    return v, d, k


# ---------------------------------------------------------------------------
# Public assemblers
# ---------------------------------------------------------------------------

def assemble_single_layer(test: TraceSpace, trial: TraceSpace,
                          material: Material,
                          quad: QuadratureConfig = QuadratureConfig(),
                          store_parts: bool = False) -> OperatorMatrix:
    """Galerkin single-layer matrix i*(kappa*V - D/kappa).

    V is the kernel-weighted vector pairing and D the divergence pairing
    (the surface gradient moved onto the div-conforming test function).
    The scaling is such that the block operator [[K, -eta*T], [T/eta, K]]
    together with half the twisted identity annihilates interpolated
    interior Cauchy data; this was verified against interior plane-wave
    traces on the sphere.
    """
    kappa = material.kappa
    kernel = KernelSpec.helmholtz(kappa)
    v, d, _ = _assemble_pair_forms(test, trial, kernel, quad, want_k=False)
    values = 1j * (kappa * v - d / kappa)
    parts = {"vector": v, "scalar": d} if store_parts else None
    return OperatorMatrix(values, test, trial, kernel, quad, parts)


def assemble_double_layer_pv(test: TraceSpace, trial: TraceSpace,
                             material: Material,
                             quad: QuadratureConfig = QuadratureConfig()
                             ) -> OperatorMatrix:
    """Galerkin principal-value double-layer matrix
    K_rs = int int f_r(x) . (grad_x G(x, y) x f_s(y))."""
    kernel = KernelSpec.helmholtz(material.kappa)
    _, _, k = _assemble_pair_forms(test, trial, kernel, quad, want_k=True)
    return OperatorMatrix(k, test, trial, kernel, quad)


def assemble_energy(space: MultiTraceSpace, kappa0: float,
                    quad: QuadratureConfig = QuadratureConfig()
                    ) -> OperatorMatrix:
    """Symmetric positive definite energy form kappa0*V + D/kappa0 with the
    decaying kernel; block-diagonal per domain and per trace component,
    stored as the list of scalar domain blocks."""
    kernel = KernelSpec.decaying(kappa0)
    blocks = []
    for s in space.spaces:
        if s.ndofs == 0:
            blocks.append(np.zeros((0, 0)))
            continue
        v, d, _ = _assemble_pair_forms(s, s, kernel, quad, want_k=False)
        blocks.append(kappa0 * v + d / kappa0)
    return OperatorMatrix(blocks, space, space, kernel, quad)


def energy_norm(op: OperatorMatrix, vec: np.ndarray) -> float:
    """sqrt(u* T u) for a block-diagonal energy matrix."""
    space: MultiTraceSpace = op.row_space
    total = 0.0
    for i, b in enumerate(op.values):
        for comp in ("electric", "magnetic"):
            u = vec[space.block(i, comp)]
            total += float(np.real(np.conj(u) @ b @ u))
    return float(np.sqrt(max(total, 0.0)))


def assemble_screened(test: MultiTraceSpace, trial: MultiTraceSpace,
                      kernel: KernelSpec,
                      quad: QuadratureConfig = QuadratureConfig()
                      ) -> OperatorMatrix:
    """Sparse real matrix of the screened regulariser form.

    Rows run over the (possibly reduced) test space, columns over the full
    trial space.  For every pair of boundary pieces within kernel range,
    the scalar short-range block couples electric-test rows to
    magnetic-trial columns with + and magnetic-test rows to electric-trial
    columns with -, so that on matching spaces the matrix is antisymmetric
    up to quadrature error.
    """
    if kernel.kind != "screened":
        raise OperatorError("assemble_screened requires a screened kernel")
    if test.flavour != "BC" or trial.flavour != "BC":
        raise OperatorError("screened form is assembled on dual-flavour "
                            "spaces")
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    blocks: Dict[tuple, object] = {}
    for i, st in enumerate(test.spaces):
        for j, su in enumerate(trial.spaces):
            if st.ndofs == 0 or su.ndofs == 0:
                continue
            if test is trial and j < i:
                # the scalar short-range form is symmetric in its
                # arguments, so the lower blocks are transposes
                b = blocks.get((j, i))
                b = None if b is None else b.T
            else:
                b = _screened_scalar_block(st, su, kernel, quad)
                blocks[(i, j)] = b
            if b is None:
                continue
            coo = b.tocoo()
            rows.append(test.block(i, "electric").start + coo.row)
            cols.append(trial.block(j, "magnetic").start + coo.col)
            vals.append(coo.data)
            rows.append(test.block(i, "magnetic").start + coo.row)
            cols.append(trial.block(j, "electric").start + coo.col)
            vals.append(-coo.data)
    if rows:
        mat = sp.csr_matrix((np.concatenate(vals),
                             (np.concatenate(rows), np.concatenate(cols))),
                            shape=(test.dim, trial.dim))
    else:
        mat = sp.csr_matrix((test.dim, trial.dim))
    return OperatorMatrix(mat, test, trial, kernel, quad)


def _screened_scalar_block(test: TraceSpace, trial: TraceSpace,
                           kernel: KernelSpec, quad: QuadratureConfig):
    """delta^-1 * V + delta * D over one pair of boundary pieces, truncated
    to triangle pairs within the kernel cutoff.  Returns a sparse matrix or
    None when the pieces are entirely out of range."""
    mesh_t, mesh_u = test.mesh, trial.mesh
    same = mesh_t is mesh_u
    md_t = _mesh_data(mesh_t, quad)
    md_u = md_t if same else _mesh_data(mesh_u, quad)
    nt, nu = mesh_t.num_triangles, mesh_u.num_triangles
    cut = kernel.cutoff_factor * kernel.delta
    tree = cKDTree(md_u.centroids)

    if same:
        tt = tu = mesh_t.triangles
    else:
        reg: Dict[tuple, int] = {}
        tt = _canonical_vertex_ids(mesh_t, reg)[mesh_t.triangles]
        tu = _canonical_vertex_ids(mesh_u, reg)[mesh_u.triangles]
    touching = _touching_pairs(tt, tu)

    map_t = test.local_map.tocsr()
    map_u_t = trial.local_map.T.tocsr()
    div_t = _div_map(test)
    div_u_t = _div_map(trial).T.tocsr()
    off = np.arange(3)
    # in-range pairs can number tens of millions on refined meshes at
    # large delta; process them in chunks and keep only the sandwiched
    # dof-level sparse partial sums
    parts: List[sp.csr_matrix] = []

    def push(idx, vp, s0p):
        rows3 = 3 * idx[:, 0][:, None, None] + off[None, :, None]
        cols3 = 3 * idx[:, 1][:, None, None] + off[None, None, :]
        rows3, cols3 = np.broadcast_arrays(rows3, cols3)
        v_loc = sp.csr_matrix(
            (vp.ravel(), (rows3.ravel(), cols3.ravel())),
            shape=(3 * nt, 3 * nu))
        s_loc = sp.csr_matrix((s0p, (idx[:, 0], idx[:, 1])),
                              shape=(nt, nu))
        parts.append(sp.csr_matrix(
            (map_t @ v_loc @ map_u_t) / kernel.delta
            + kernel.delta * (div_t @ s_loc @ div_u_t)))

    def tree_sum(mats):
        while len(mats) > 1:
            mats = [mats[k] + mats[k + 1] if k + 1 < len(mats)
                    else mats[k] for k in range(0, len(mats), 2)]
        return mats

    def run_product(iarr, jarr, x_t, w_t, x_u, w_u, batch=4096):
        for lo in range(0, iarr.size, batch):
            i = iarr[lo:lo + batch]
            j = jarr[lo:lo + batch]
            vp, s0p, _ = _pair_values(kernel, x_t[i], x_u[j],
                                      (w_t[i], w_u[j]), md_t.corners[i],
                                      md_t.areas[i], md_u.corners[j],
                                      md_u.areas[j], False, paired=False)
            push(np.column_stack([i, j]), vp, s0p)

    for t0 in range(0, nt, 512):
        t1 = min(t0 + 512, nt)
        hits = tree.query_ball_point(
            md_t.centroids[t0:t1],
            r=cut + md_t.radii[t0:t1] + md_u.radii.max())
        ci, cj = _flatten_hits(hits)
        del hits
        if not ci.size:
            continue
        ci = ci + t0
        gap = np.linalg.norm(md_t.centroids[ci] - md_u.centroids[cj],
                             axis=1)
        keep = gap - md_t.radii[ci] - md_u.radii[cj] <= cut
        ci, cj, gap = ci[keep], cj[keep], gap[keep]
        if not ci.size:
            continue
        counts = _touch_counts(touching, ci, cj, nu)
        near = (counts == 0) & (gap < quad.near_factor
                                * (md_t.radii[ci] + md_u.radii[cj]))
        far = (counts == 0) & ~near
        run_product(ci[far], cj[far], md_t.x_far, md_t.w_far,
                    md_u.x_far, md_u.w_far)
        run_product(ci[near], cj[near], md_t.x_near, md_t.w_near,
                    md_u.x_near, md_u.w_near)
        for nshared in (3, 2, 1):
            sel = counts == nshared
            if not sel.any():
                continue
            group = np.column_stack([ci[sel], cj[sel]])
            vp, s0p, _ = _touching_values(kernel, group, nshared, md_t,
                                          md_u, tt, tu,
                                          quad.singular_order, False)
            push(group, vp, s0p)
        if len(parts) > 128:
            parts = tree_sum(parts)
    if not parts:
        return None
    block = tree_sum(parts)[0]
    block.eliminate_zeros()
    return block if block.nnz else None


# ---------------------------------------------------------------------------
# Excitations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlaneWave:
    """e(x) = p exp(-i kappa d.x), h(x) = (1/eta) d x e(x)."""
    kappa: complex
    eta: complex
    direction: np.ndarray
    polarization: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        p = np.asarray(self.polarization, float)
        if abs(np.linalg.norm(d) - 1) > 1e-12 or \
                abs(np.linalg.norm(p) - 1) > 1e-12:
            raise OperatorError("direction and polarization must be unit "
                                "vectors")
        if abs(d @ p) > 1e-12:
            raise OperatorError("polarization must be orthogonal to the "
                                "propagation direction")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "polarization", p)

    def electric(self, x: np.ndarray) -> np.ndarray:
        phase = np.exp(-1j * self.kappa * (x @ self.direction))
        return self.polarization[None, :] * phase[:, None]

    def magnetic(self, x: np.ndarray) -> np.ndarray:
        return np.cross(self.direction, self.electric(x)) / self.eta


def project_twisted(space: TraceSpace, func, degree: int = 4) -> np.ndarray:
    """Functional vector b_r = int_surface (n x f_r) . F.

    func maps flattened quadrature points (N, 3) -> (N, 3) field values;
    points are passed in triangle-major order.
    """
    mesh = space.mesh
    bary, wq = triangle_rule(degree)
    p = mesh.triangle_vertices()
    areas = mesh.areas()
    normals = mesh.normals()
    x = np.einsum("qk,tkc->tqc", bary, p)
    fv = np.asarray(func(x.reshape(-1, 3))).reshape(x.shape)
    b = (x[:, None, :, :] - p[:, :, None, :]) / (2 * areas)[:, None, None,
                                                            None]
    nxb = np.cross(np.broadcast_to(normals[:, None, None, :], b.shape), b)
    loc = np.einsum("q,tlqc,tqc->tl", wq, nxb, fv) * areas[:, None]
    return np.asarray(space.local_map @ loc.reshape(-1))


def interpolate_flux(space: TraceSpace, func, order: int = 4) -> np.ndarray:
    """Dof coefficients of a tangential field by edge-flux interpolation:
    coefficient r = edge integral of F . (n x t), the flux in the
    plus-to-minus direction that the basis normalisation fixes to one."""
    xq, wq = gauss1d(order)
    es = space.edges
    verts = space.surface.vertices
    normals = space.surface.normals()
    out = np.zeros(space.ndofs, complex)
    for r, k in enumerate(es.interior_index()):
        o, d = es.edges[k]
        tvec = verts[d] - verts[o]
        nu = np.cross(normals[es.tri_plus[k]], tvec)   # includes |edge|
        pts = verts[o][None, :] + xq[:, None] * tvec[None, :]
        out[r] = wq @ (np.asarray(func(pts)) @ nu)
    return out


def interpolate_twisted(space: TraceSpace, func, order: int = 4
                        ) -> np.ndarray:
    """Dof coefficients of the twisted trace n x F of an ambient field F.

    Equivalent to interpolate_flux applied to n x F with n taken from
    each edge's plus triangle, which is the normal the flux normalisation
    refers to; correct on creased surfaces where the nearest-face normal
    is ambiguous along edges."""
    xq, wq = gauss1d(order)
    es = space.edges
    verts = space.surface.vertices
    normals = space.surface.normals()
    out = np.zeros(space.ndofs, complex)
    for r, k in enumerate(es.interior_index()):
        o, d = es.edges[k]
        tvec = verts[d] - verts[o]
        n = normals[es.tri_plus[k]]
        nu = np.cross(n, tvec)
        pts = verts[o][None, :] + xq[:, None] * tvec[None, :]
        out[r] = wq @ (np.cross(n[None, :], np.asarray(func(pts))) @ nu)
    return out


def interpolate_cauchy(space: MultiTraceSpace, e_field, h_field,
                       order: int = 4) -> np.ndarray:
    """Multi-trace coefficient vector of the twisted Cauchy traces
    (n x E, n x H) of ambient fields, domain block by domain block."""
    out = np.zeros(space.dim, complex)
    for i, s in enumerate(space.spaces):
        if s.ndofs == 0:
            continue
        out[space.block(i, "electric")] = interpolate_twisted(s, e_field,
                                                              order)
        out[space.block(i, "magnetic")] = interpolate_twisted(s, h_field,
                                                              order)
    return out


def planewave_rhs(space: MultiTraceSpace, materials: Sequence[Material],
                  direction=(0.0, 0.0, 1.0), polarization=(1.0, 0.0, 0.0),
                  degree: int = 4) -> np.ndarray:
    """Excitation vector: the exterior traces (e x n, h x n) of a plane
    wave in the exterior material, tested in the twisted pairing against
    the exterior-domain test functions; all interior blocks are zero.

    The sign convention is fixed so that for valid total-field Cauchy data
    u the residual (-A - G/2)u - rhs vanishes in the continuous limit
    (calibrated on the equal-materials sphere)."""
    ext = materials[0]
    pw = PlaneWave(ext.kappa, ext.eta, np.asarray(direction, float),
                   np.asarray(polarization, float))
    rhs = np.zeros(space.dim, complex)
    s0 = space.spaces[0]
    nq = triangle_rule(degree)[0].shape[0]
    normals = np.repeat(s0.mesh.normals(), nq, axis=0)

    def e_trace(x):
        return np.cross(pw.electric(x), normals)

    def h_trace(x):
        return np.cross(pw.magnetic(x), normals)

    rhs[space.block(0, "electric")] = project_twisted(s0, e_trace, degree)
    rhs[space.block(0, "magnetic")] = project_twisted(s0, h_trace, degree)
    return rhs
