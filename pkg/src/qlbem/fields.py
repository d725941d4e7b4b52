"""Post-processing: Mie series, far fields, near-field reconstruction.

Conventions follow the operator module: time factor exp(+i*omega*t),
radiating kernel exp(-i*kappa*r)/(4*pi*r), trace coefficients are the
twisted traces (n x E, n x H) with n outward of the owning domain.  The
radiating representation in a domain is then

    E = -curl S[n x E] + i (eta/kappa) (grad div + kappa^2) S[n x H]
    H = -curl S[n x H] - i / (eta kappa) (grad div + kappa^2) S[n x E]

and the far-field amplitude of the exterior domain follows from the
stationary-phase limit of the same potentials.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .geometry import OrientedSurfaceMesh
from .operators import (Material, OperatorError, PlaneWave,
                        QuadratureConfig, assemble_energy)
from .operators import energy_norm as _energy_norm_matrix
from .quadrature import triangle_rule
from .spaces import MultiTraceSpace, TraceSpace

FOUR_PI = 4.0 * np.pi


class FieldError(Exception):
    pass


# ---------------------------------------------------------------------------
# Far-field containers
# ---------------------------------------------------------------------------

@dataclass
class FarFieldPattern:
    """Far-field amplitudes F on a set of unit directions: the scattered
    field behaves as exp(-i*kappa*r)/r * F; rcs = 4*pi*|F|^2 for a unit
    incident amplitude."""
    directions: np.ndarray
    amplitude: np.ndarray

    @property
    def rcs(self) -> np.ndarray:
        return FOUR_PI * np.sum(np.abs(self.amplitude) ** 2, axis=-1)

    @property
    def rcs_db(self) -> np.ndarray:
        return 10.0 * np.log10(np.maximum(self.rcs, 1e-300))


def eplane_directions(num: int = 181) -> np.ndarray:
    """Unit directions sweeping the plane of incidence polarisation
    (x-z plane) from forward (+z) through theta = pi."""
    theta = np.linspace(0.0, np.pi, num)
    return np.column_stack([np.sin(theta), np.zeros(num), np.cos(theta)])


# ---------------------------------------------------------------------------
# Mie series for the homogeneous dielectric sphere
# ---------------------------------------------------------------------------

def _riccati(n_max: int, x: complex):
    """psi_n(x) = x j_n(x), xi_n(x) = x (j_n - i y_n)(x) and their
    derivatives, for n = 1..n_max."""
    n = np.arange(1, n_max + 1)
    if np.iscomplexobj(np.asarray(x)) and np.imag(x) != 0:
        raise FieldError("complex Mie arguments are not supported")
    xr = float(np.real(x))
    jn = spherical_jn(n, xr)
    jnp = spherical_jn(n, xr, derivative=True)
    yn = spherical_yn(n, xr)
    ynp = spherical_yn(n, xr, derivative=True)
    psi = xr * jn
    psi_d = jn + xr * jnp
    hn = jn - 1j * yn
    hn_d = jnp - 1j * ynp
    xi = xr * hn
    xi_d = hn + xr * hn_d
    return psi, psi_d, xi, xi_d


def mie_coefficients(radius: float, material: Material,
                     background: Material, n_max: int):
    """Scattering coefficients (a_n, b_n), n = 1..n_max, for a
    homogeneous sphere (permeability contrast supported)."""
    k0 = background.kappa
    m = material.kappa / k0
    mu_r = material.mu / background.mu
    x = k0 * radius
    psi_x, psi_x_d, xi_x, xi_x_d = _riccati(n_max, np.real(x))
    psi_m, psi_m_d, _, _ = _riccati(n_max, np.real(m * x))
    a = (m * psi_m * psi_x_d - mu_r * psi_x * psi_m_d) / \
        (m * psi_m * xi_x_d - mu_r * xi_x * psi_m_d)
    b = (mu_r * psi_m * psi_x_d - m * psi_x * psi_m_d) / \
        (mu_r * psi_m * xi_x_d - m * xi_x * psi_m_d)
    return a, b


def mie_rcs(radius: float, material: Material, background: Material,
            directions: np.ndarray, tail_tol: float = 1e-12
            ) -> FarFieldPattern:
    """Bistatic far field of a homogeneous sphere centred at the origin
    under the x-polarised plane wave travelling along +z.

    Truncation N = ceil(x + 4 x^(1/3) + 2) with an explicit tail check;
    a series whose last terms are not negligible raises."""
    x = float(np.real(background.kappa)) * radius
    n_max = int(np.ceil(x + 4.0 * x ** (1.0 / 3.0) + 2.0))
    a, b = mie_coefficients(radius, material, background, n_max)
    tail = abs(a[-1]) + abs(b[-1])
    head = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    if tail > 1e-6 * head and tail > tail_tol:
        raise FieldError(
            f"Mie series not converged at N = {n_max}: tail {tail:.2e}")
    directions = np.asarray(directions, float)
    ct = np.clip(directions[:, 2], -1.0, 1.0)
    st = np.sqrt(np.maximum(1.0 - ct ** 2, 0.0))
    phi = np.arctan2(directions[:, 1], directions[:, 0])
    s1, s2 = _mie_amplitudes(a, b, ct)
    k0 = float(np.real(background.kappa))
    # E_far = exp(-ikr)/r * F with F resolved on (theta_hat, phi_hat)
    f_theta = np.cos(phi) * s2 / k0
    f_phi = -np.sin(phi) * s1 / k0
    theta_hat = np.column_stack([ct * np.cos(phi), ct * np.sin(phi), -st])
    phi_hat = np.column_stack([-np.sin(phi), np.cos(phi),
                               np.zeros_like(phi)])
    amp = f_theta[:, None] * theta_hat + f_phi[:, None] * phi_hat
    return FarFieldPattern(directions, amp)


def _mie_amplitudes(a: np.ndarray, b: np.ndarray, cos_theta: np.ndarray):
    """Angular amplitudes S1, S2 via the pi/tau recurrences."""
    n_max = len(a)
    s1 = np.zeros(len(cos_theta), complex)
    s2 = np.zeros(len(cos_theta), complex)
    pi_prev = np.zeros_like(cos_theta)
    pi_cur = np.ones_like(cos_theta)
    for n in range(1, n_max + 1):
        tau = n * cos_theta * pi_cur - (n + 1) * pi_prev
        w = (2 * n + 1) / (n * (n + 1))
        s1 += w * (a[n - 1] * pi_cur + b[n - 1] * tau)
        s2 += w * (a[n - 1] * tau + b[n - 1] * pi_cur)
        pi_next = ((2 * n + 1) * cos_theta * pi_cur
                   - (n + 1) * pi_prev) / n
        pi_prev, pi_cur = pi_cur, pi_next
    return s1, s2


# ---------------------------------------------------------------------------
# Potentials from trace coefficient vectors
# ---------------------------------------------------------------------------

def _expansion_data(space: TraceSpace, coeffs: np.ndarray, degree: int):
    """Quadrature points with expanded field values and divergence."""
    mesh = space.mesh
    bary, wq = triangle_rule(degree)
    p = mesh.triangle_vertices()
    areas = mesh.areas()
    slot = np.asarray(space.local_map.T @ coeffs).reshape(-1, 3)
    x = np.einsum("qk,tkc->tqc", bary, p)            # (T, Q, 3)
    basis = (x[:, :, None, :] - p[:, None, :, :]) / \
        (2 * areas)[:, None, None, None]
    val = np.einsum("tl,tqlc->tqc", slot, basis)
    div = slot.sum(axis=1) / areas                   # constant per triangle
    w = np.broadcast_to(wq[None, :] * areas[:, None], x.shape[:2])
    return (x.reshape(-1, 3), val.reshape(-1, 3),
            np.repeat(div, len(wq)), w.reshape(-1))


def far_field(space: TraceSpace, electric: np.ndarray,
              magnetic: np.ndarray, background: Material,
              directions: np.ndarray, degree: int = 4) -> FarFieldPattern:
    """Far-field amplitude radiated by exterior-domain twisted traces.

    For total-field traces the incident part radiates nothing outward, so
    the result is the scattered far field."""
    kappa = background.kappa
    eta = background.eta
    directions = np.asarray(directions, float)
    x, m_val, _, w = _expansion_data(space, electric, degree)
    _, j_val, _, _ = _expansion_data(space, magnetic, degree)
    phase = np.exp(1j * kappa * (directions @ x.T))          # (N, P)
    fm = np.einsum("np,p,pc->nc", phase, w, m_val)
    fj = np.einsum("np,p,pc->nc", phase, w, j_val)
    cross_m = np.cross(directions, fm)
    cross_j = np.cross(directions, np.cross(directions, fj))
    amp = (1j * kappa / FOUR_PI) * (cross_m - eta * cross_j)
    return FarFieldPattern(directions, amp)


@dataclass
class NearFieldSample:
    points: np.ndarray
    e_field: np.ndarray
    h_field: np.ndarray
    inside: np.ndarray          # bool per point: inside the owning domain


def solid_angles(mesh: OrientedSurfaceMesh, points: np.ndarray
                 ) -> np.ndarray:
    """Sum of signed solid angles of the oriented triangles seen from
    each point; ~4*pi for points enclosed by the surface (normals
    pointing away from them), ~0 outside."""
    p = mesh.triangle_vertices()
    out = np.zeros(len(points))
    for t in range(p.shape[0]):
        a = p[t, 0][None] - points
        b = p[t, 1][None] - points
        c = p[t, 2][None] - points
        la = np.linalg.norm(a, axis=1)
        lb = np.linalg.norm(b, axis=1)
        lc = np.linalg.norm(c, axis=1)
        num = np.einsum("pc,pc->p", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("pc,pc->p", a, b) * lc
               + np.einsum("pc,pc->p", a, c) * lb
               + np.einsum("pc,pc->p", b, c) * la)
        out += 2.0 * np.arctan2(num, den)
    return out


def stratton_chu(space: TraceSpace, electric: np.ndarray,
                 magnetic: np.ndarray, material: Material,
                 points: np.ndarray, incident: Optional[PlaneWave] = None,
                 degree: int = 4) -> NearFieldSample:
    """Field reconstruction from one domain's twisted Cauchy traces.

    Valid away from the surface (no near-singularity treatment); points
    outside the owning domain reconstruct ~0.  With incident set (the
    exterior domain), the incident field is added."""
    kappa = material.kappa
    eta = material.eta
    points = np.asarray(points, float)
    x, m_val, m_div, w = _expansion_data(space, electric, degree)
    _, j_val, j_div, _ = _expansion_data(space, magnetic, degree)

    diff = points[:, None, :] - x[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    if r.min() < 1e-12:
        raise FieldError("evaluation point lies on the surface")
    g = np.exp(-1j * kappa * r) / (FOUR_PI * r)
    f = g * (-1j * kappa * r - 1.0) / r ** 2          # grad G = f * diff
    gw = g * w[None, :]
    fw = f * w[None, :]

    def curl_s(val):
        return np.einsum("pq,pqc->pc", fw,
                         np.cross(diff, np.broadcast_to(val[None], diff.shape)))

    def graddiv_plus_k2(val, div):
        single = np.einsum("pq,qc->pc", gw, val)
        grad = np.einsum("pq,q,pqc->pc", fw, div, diff)
        return kappa ** 2 * single + grad

    e = -curl_s(m_val) + 1j * (eta / kappa) * graddiv_plus_k2(j_val, j_div)
    h = -curl_s(j_val) - 1j / (eta * kappa) * graddiv_plus_k2(m_val, m_div)
    if incident is not None:
        e = e + incident.electric(points)
        h = h + incident.magnetic(points)
    omega = solid_angles(space.mesh, points)
    inside = np.abs(omega) > 2.0 * np.pi
    return NearFieldSample(points, e, h, inside)


# ---------------------------------------------------------------------------
# Cross-mesh trace transfer
# ---------------------------------------------------------------------------

def _space_evaluator(space: TraceSpace, coeffs: np.ndarray):
    """Point evaluator of a trace-space expansion, valid for points lying
    on the (piecewise flat) surface; nearest-centroid candidates are
    tested by barycentric coordinates and plane distance."""
    from scipy.spatial import cKDTree
    mesh = space.mesh
    p = mesh.triangle_vertices()
    areas = mesh.areas()
    slot = np.asarray(space.local_map.T @ coeffs).reshape(-1, 3)
    tree = cKDTree(mesh.centroids())

    def evaluate(points, locate=None):
        # ``locate`` points (e.g. nudged off a crease) pick the triangle;
        # the affine expansion is evaluated at the true points, which lie
        # in the located triangle's plane.
        points = np.asarray(points, float)
        locate = points if locate is None else np.asarray(locate, float)
        out = np.zeros((len(points), 3), complex)
        _, cand = tree.query(locate, k=min(16, len(areas)))
        cand = np.atleast_2d(cand)
        for i, pt in enumerate(locate):
            hit = -1
            for t in cand[i]:
                a = p[t]
                m = np.column_stack([a[1] - a[0], a[2] - a[0]])
                uv, res, *_ = np.linalg.lstsq(m, pt - a[0], rcond=None)
                off = np.linalg.norm(a[0] + m @ uv - pt)
                if (uv[0] >= -1e-9 and uv[1] >= -1e-9
                        and uv.sum() <= 1 + 1e-9 and off < 1e-8):
                    hit = t
                    break
            if hit < 0:
                raise FieldError(
                    "transfer point not located on the source mesh "
                    f"(surfaces must coincide): {pt}")
            basis = (points[i][None, :] - p[hit]) / (2 * areas[hit])
            out[i] = slot[hit] @ basis
        return out

    return evaluate


def transfer_flux(src: TraceSpace, coeffs: np.ndarray, dst: TraceSpace,
                  order: int = 4) -> np.ndarray:
    """Edge-flux interpolation of a source-space expansion onto a target
    space discretising the same piecewise-flat surface.

    Evaluation points are nudged into each target edge's plus triangle so
    that the face is unambiguous along creases; on identical meshes this
    reproduces the coefficients exactly."""
    from .quadrature import gauss1d
    evaluate = _space_evaluator(src, coeffs)
    xq, wq = gauss1d(order)
    es = dst.edges
    verts = dst.surface.vertices
    normals = dst.surface.normals()
    cent = dst.surface.centroids()
    out = np.zeros(dst.ndofs, complex)
    for r, k in enumerate(es.interior_index()):
        o, d = es.edges[k]
        tvec = verts[d] - verts[o]
        tp = es.tri_plus[k]
        nu = np.cross(normals[tp], tvec)
        pts = verts[o][None, :] + xq[:, None] * tvec[None, :]
        nudged = pts + 1e-6 * (cent[tp][None, :] - pts)
        out[r] = wq @ (evaluate(pts, locate=nudged) @ nu)
    return out


def transfer_traces(src_space: MultiTraceSpace, coeffs: np.ndarray,
                    dst_space: MultiTraceSpace, order: int = 4
                    ) -> np.ndarray:
    """Domain-by-domain flux transfer of a multi-trace coefficient vector
    onto another discretisation of the same geometry."""
    if len(src_space.spaces) != len(dst_space.spaces):
        raise FieldError("domain counts differ between spaces")
    out = np.zeros(dst_space.dim, complex)
    for i, (s, d) in enumerate(zip(src_space.spaces, dst_space.spaces)):
        if d.ndofs == 0:
            continue
        for comp in ("electric", "magnetic"):
            out[dst_space.block(i, comp)] = transfer_flux(
                s, coeffs[src_space.block(i, comp)], d, order)
    return out


# ---------------------------------------------------------------------------
# Energy norm
# ---------------------------------------------------------------------------

def energy_norm(coeffs: np.ndarray, space: MultiTraceSpace, kappa0: float,
                quad: QuadratureConfig = QuadratureConfig(),
                matrix=None) -> float:
    """sqrt(u^H T u) with the decaying-kernel energy form on the
    coefficient's multi-trace space; pass matrix to reuse an assembled
    form."""
    if matrix is None:
        matrix = assemble_energy(space, kappa0, quad)
    total = 0.0
    for i, b in enumerate(matrix.values):
        for comp in ("electric", "magnetic"):
            u = coeffs[space.block(i, comp)]
            total += float(np.real(np.conj(u) @ b @ u))
    if total < -1e-12:
        raise FieldError(f"energy norm radicand {total:.3e} is negative")
    return float(np.sqrt(max(total, 0.0)))


# ---------------------------------------------------------------------------
# VTK legacy-ASCII export
# ---------------------------------------------------------------------------

def write_vtk_points(path: str, points: np.ndarray,
                     fields: Dict[str, np.ndarray]) -> None:
    """Point cloud with complex vector fields, written as paired real and
    imaginary vector arrays plus a magnitude scalar."""
    points = np.asarray(points, float)
    n = len(points)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nfield samples\nASCII\n")
        fh.write("DATASET POLYDATA\n")
        fh.write(f"POINTS {n} double\n")
        for p in points:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        fh.write(f"POINT_DATA {n}\n")
        for name, vals in fields.items():
            vals = np.asarray(vals)
            if vals.ndim == 2:
                for part, arr in (("_re", vals.real), ("_im", vals.imag)):
                    fh.write(f"VECTORS {name}{part} double\n")
                    for v in arr:
                        fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
                mag = np.linalg.norm(vals, axis=1)
            else:
                mag = np.abs(vals)
            fh.write(f"SCALARS {name}_mag double 1\nLOOKUP_TABLE default\n")
            for v in mag:
                fh.write(f"{v:.9g}\n")


def write_vtk_surface(path: str, mesh: OrientedSurfaceMesh,
                      cell_data: Dict[str, np.ndarray]) -> None:
    """Triangle surface with per-triangle scalar data (trace
    magnitudes)."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nsurface traces\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(mesh.vertices)} double\n")
        for p in mesh.vertices:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        t = mesh.triangles
        fh.write(f"CELLS {len(t)} {4 * len(t)}\n")
        for tri in t:
            fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
        fh.write(f"CELL_TYPES {len(t)}\n")
        fh.write("\n".join(["5"] * len(t)) + "\n")
        if cell_data:
            fh.write(f"CELL_DATA {len(t)}\n")
            for name, vals in cell_data.items():
                fh.write(f"SCALARS {name} double 1\n"
                         "LOOKUP_TABLE default\n")
                for v in np.abs(np.asarray(vals)):
                    fh.write(f"{v:.9g}\n")
