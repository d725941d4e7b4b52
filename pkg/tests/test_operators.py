"""Tests for kernels, Galerkin assembly and excitation vectors.

Oracles: brute-force slot-pair integration with a high-degree tensor rule
for the moment-based pair formulas; interpolated interior plane-wave traces
for the operator sign conventions (the block operator plus half the twisted
identity must annihilate them); eigenvalue checks for the energy form.
"""

import numpy as np
import pytest

from qlbem import geometry as geo
from qlbem import spaces as sps
from qlbem import operators as op
from qlbem.quadrature import triangle_rule


def sphere_space(h):
    mesh = geo.make_sphere(h)
    surf = geo.build_domain_boundary(mesh, 1)
    return sps.rwg_space(surf)


MAT = op.Material(3.0, 1.0, 1.0)        # kappa = sqrt(3), eta = 1/sqrt(3)


class TestMaterial:
    def test_derived_quantities(self):
        m = op.Material(4.0, 1.0, 2.0)
        assert m.kappa == pytest.approx(4.0)
        assert m.eta == pytest.approx(0.5)

    def test_validation(self):
        with pytest.raises(op.OperatorError):
            op.Material(-1.0, 1.0, 1.0)
        with pytest.raises(op.OperatorError):
            op.Material(1.0, 1.0, 0.0)


class TestKernels:
    def test_values(self):
        r = np.array([0.5, 2.0])
        k = op.KernelSpec.helmholtz(2.0)
        assert np.allclose(k.value(r),
                           np.exp(-2j * r) / (4 * np.pi * r))
        d = op.KernelSpec.decaying(3.0)
        assert np.allclose(d.value(r),
                           np.exp(-3 * r) / (4 * np.pi * r))

    def test_screened_cutoff_and_switch(self):
        s = op.KernelSpec.screened(0.4)
        r = np.array([0.1, 10.0])
        v = s.value(r)
        assert v[1] == 0.0
        assert v[0] == pytest.approx(
            np.exp(-(0.1 / 0.4) ** 2) / (4 * np.pi * 0.1))
        lit = op.KernelSpec.screened(0.4, screening="literal")
        assert lit.value(r)[0] == pytest.approx(
            np.exp(-0.1 / 0.16) / (4 * np.pi * 0.1))

    def test_zero_kappa_rejected(self):
        with pytest.raises(op.OperatorError):
            op.KernelSpec.helmholtz(0.0)


class TestPairFormulas:
    """Moment-based pair blocks against brute-force slot integration."""

    def setup_method(self, _):
        rng = np.random.default_rng(3)
        self.pa = rng.normal(size=(3, 3))
        self.pb = rng.normal(size=(3, 3)) + np.array([4.0, 0.0, 0.0])

    @staticmethod
    def _brute(kernel, pa, pb):
        def area(p):
            return 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]))

        aa, ab = area(pa), area(pb)
        bary, wq = triangle_rule(8)
        xa, xb = bary @ pa, bary @ pb
        wa, wb = wq * aa, wq * ab
        diff = xa[:, None, :] - xb[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        g = kernel.value(r)
        ba = (xa[None] - pa[:, None]) / (2 * aa)
        bb = (xb[None] - pb[:, None]) / (2 * ab)
        ww = wa[:, None] * wb[None, :]
        v = np.einsum("qp,lqc,mpc->lm", g * ww, ba, bb)
        s0 = (g * ww).sum()
        k = np.zeros((3, 3), complex)
        if kernel.is_complex:
            f = kernel.grad_factor(r)
            for l in range(3):
                for m in range(3):
                    gxb = np.cross(f[:, :, None] * diff,
                                   np.broadcast_to(bb[m][None], diff.shape))
                    k[l, m] = (ww * np.einsum("qpc,qc->qp", gxb,
                                              ba[l])).sum()
        return v, s0, k, aa, ab

    def test_against_brute_force(self):
        kernel = op.KernelSpec.helmholtz(1.3)
        v_ref, s0_ref, k_ref, aa, ab = self._brute(kernel, self.pa, self.pb)
        bary, wq = triangle_rule(8)
        xa, xb = bary @ self.pa, bary @ self.pb
        vp, s0p, kp = op._pair_values(
            kernel, xa[None], xb[None], (wq[None] * aa, wq[None] * ab),
            self.pa[None], np.array([aa]), self.pb[None], np.array([ab]),
            True, paired=False)
        assert abs(vp[0] - v_ref).max() < 1e-12 * abs(v_ref).max()
        assert abs(s0p[0] - s0_ref) < 1e-12 * abs(s0_ref)
        assert abs(kp[0] - k_ref).max() < 1e-12 * abs(k_ref).max()

    def test_paired_mode_matches_outer(self):
        kernel = op.KernelSpec.decaying(0.7)
        v_ref, s0_ref, _, aa, ab = self._brute(kernel, self.pa, self.pb)
        bary, wq = triangle_rule(8)
        xa, xb = bary @ self.pa, bary @ self.pb
        xp = np.repeat(xa, len(xb), 0)
        yp = np.tile(xb, (len(xa), 1))
        wp = (np.outer(wq * aa, wq * ab)).ravel()
        vp, s0p, _ = op._pair_values(
            kernel, xp[None], yp[None], wp[None], self.pa[None],
            np.array([aa]), self.pb[None], np.array([ab]), False,
            paired=True)
        assert abs(vp[0] - v_ref).max() < 1e-12 * abs(v_ref).max()
        assert abs(s0p[0] - s0_ref) < 1e-12 * abs(s0_ref)


@pytest.fixture(scope="module")
def space():
    return sphere_space(0.4)


@pytest.fixture(scope="module")
def matrices(space):
    t = op.assemble_single_layer(space, space, MAT)
    k = op.assemble_double_layer_pv(space, space, MAT)
    return t, k


class TestDenseOperators:
    def test_complex_symmetry(self, matrices):
        for m in matrices:
            a = m.values
            assert abs(a - a.T).max() < 1e-10 * abs(a).max()

    def test_quadrature_stability(self, space, matrices):
        quad2 = op.QuadratureConfig().raised()
        t2 = op.assemble_single_layer(space, space, MAT, quad2).values
        k2 = op.assemble_double_layer_pv(space, space, MAT, quad2).values
        t, k = matrices
        assert np.linalg.norm(t.values - t2) < 1e-3 * np.linalg.norm(t2)
        assert np.linalg.norm(k.values - k2) < 1e-3 * np.linalg.norm(k2)

    def test_parts_combination(self, space):
        t = op.assemble_single_layer(space, space, MAT, store_parts=True)
        v, d = t.parts["vector"], t.parts["scalar"]
        kap = MAT.kappa
        assert np.allclose(t.values, 1j * (kap * v - d / kap))


def twisted_traces(space, pw):
    def unit(x):
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    ue = op.interpolate_flux(space, lambda x: np.cross(unit(x),
                                                       pw.electric(x)))
    uh = op.interpolate_flux(space, lambda x: np.cross(unit(x),
                                                       pw.magnetic(x)))
    return ue, uh


def extinction_residual_sphere(h):
    """Relative residual of the interior-solution annihilation identity
    for interpolated plane-wave traces on the unit sphere."""
    space = sphere_space(h)
    kap, eta = MAT.kappa, MAT.eta
    t = op.assemble_single_layer(space, space, MAT).values
    k = op.assemble_double_layer_pv(space, space, MAT).values
    g = sps.gram_surface(space, space).toarray()
    pw = op.PlaneWave(kap, eta, np.array([0.0, 0.0, 1.0]),
                      np.array([1.0, 0.0, 0.0]))
    ue, uh = twisted_traces(space, pw)
    x = (0.5 * g + k)
    r_e = x @ ue - eta * (t @ uh)
    r_h = x @ uh + (t @ ue) / eta
    scale = max(np.linalg.norm(x @ ue), np.linalg.norm(eta * t @ uh))
    return np.hypot(np.linalg.norm(r_e), np.linalg.norm(r_h)) / scale


class TestExtinction:
    def test_residual_small_and_decreasing(self):
        r_coarse = extinction_residual_sphere(0.3)
        r_fine = extinction_residual_sphere(0.2)
        assert r_fine < 5e-2
        assert r_fine < r_coarse


class TestEnergy:
    def test_spd_blocks(self):
        mesh = geo.make_sphere(0.4)
        mt = sps.multi_trace(mesh, "RWG")
        e = op.assemble_energy(mt, 6.0)
        for b in e.values:
            assert abs(b - b.T).max() < 1e-12 * abs(b).max()
            assert np.linalg.eigvalsh(b).min() > 0

    def test_norm_accumulates_components(self):
        mesh = geo.make_sphere(0.4)
        mt = sps.multi_trace(mesh, "RWG")
        e = op.assemble_energy(mt, 6.0)
        u = np.zeros(mt.dim)
        u[mt.block(0, "electric")] = 1.0
        n_e = op.energy_norm(e, u)
        u2 = np.zeros(mt.dim)
        u2[mt.block(0, "magnetic")] = 1.0
        assert op.energy_norm(e, u2) == pytest.approx(n_e)
        both = op.energy_norm(e, u + u2)
        assert both == pytest.approx(np.sqrt(2) * n_e)


@pytest.fixture(scope="module")
def screened_setup():
    mesh = geo.make_two_cubes(0.25)
    bc = sps.multi_trace(mesh, "BC")
    kernel = op.KernelSpec.screened(0.125)
    s = op.assemble_screened(bc, bc, kernel)
    return bc, s


class TestScreened:
    def test_antisymmetric(self, screened_setup):
        _, s = screened_setup
        d = s.values.toarray()
        assert abs(d + d.T).max() < 1e-4 * abs(d).max()

    def test_sparse_and_block_pattern(self, screened_setup):
        bc, s = screened_setup
        m = s.values
        assert m.nnz < 0.5 * m.shape[0] * m.shape[1]
        # electric-electric coupling absent
        d = m.toarray()
        e0 = bc.block(0, "electric")
        for i in range(len(bc.spaces)):
            ei = bc.block(i, "electric")
            assert abs(d[e0, ei.start:ei.stop]).max() == 0

    def test_requires_dual_flavour(self):
        mesh = geo.make_two_cubes(0.25)
        rwg = sps.multi_trace(mesh, "RWG")
        with pytest.raises(op.OperatorError):
            op.assemble_screened(rwg, rwg, op.KernelSpec.screened(0.2))

    def test_reduced_test_rows(self):
        mesh = geo.make_two_cubes(0.25)
        rg = geo.reduce_geometry(mesh)
        red = sps.reduced_multi_trace(rg, "BC")
        full = sps.multi_trace(mesh, "BC")
        s = op.assemble_screened(red, full, op.KernelSpec.screened(0.125))
        assert s.values.shape == (red.dim, full.dim)
        assert s.values.nnz > 0


class TestExcitation:
    def test_planewave_validation(self):
        with pytest.raises(op.OperatorError):
            op.PlaneWave(1.0, 1.0, np.array([0.0, 0.0, 2.0]),
                         np.array([1.0, 0.0, 0.0]))
        with pytest.raises(op.OperatorError):
            op.PlaneWave(1.0, 1.0, np.array([0.0, 0.0, 1.0]),
                         np.array([0.0, 0.0, 1.0]))

    def test_planewave_fields(self):
        pw = op.PlaneWave(2.0, 0.5, np.array([0.0, 0.0, 1.0]),
                          np.array([1.0, 0.0, 0.0]))
        x = np.array([[0.0, 0.0, 0.25]])
        e = pw.electric(x)
        assert e[0, 0] == pytest.approx(np.exp(-0.5j))
        h = pw.magnetic(x)
        assert h[0, 1] == pytest.approx(np.exp(-0.5j) / 0.5)

    def test_rhs_interior_blocks_zero(self):
        mesh = geo.make_two_cubes(0.25)
        mt = sps.multi_trace(mesh, "RWG")
        mats = [MAT, op.Material(2.0, 1.0, 1.0), op.Material(4.0, 1.0, 1.0)]
        rhs = op.planewave_rhs(mt, mats)
        for i in (1, 2):
            for comp in ("electric", "magnetic"):
                assert abs(rhs[mt.block(i, comp)]).max() == 0
        assert abs(rhs[mt.block(0, "electric")]).max() > 0

    def test_rhs_degree_stable(self):
        mesh = geo.make_sphere(0.4)
        mt = sps.multi_trace(mesh, "RWG")
        r4 = op.planewave_rhs(mt, [MAT, MAT], degree=4)
        r8 = op.planewave_rhs(mt, [MAT, MAT], degree=8)
        assert np.linalg.norm(r4 - r8) < 1e-4 * np.linalg.norm(r8)

    def test_interpolation_reproduces_member_fields(self):
        # flux interpolation of a field already in the space returns its
        # coefficients exactly when evaluated on the plus-side triangle
        space = sphere_space(0.4)
        rng = np.random.default_rng(7)
        coefs = rng.normal(size=space.ndofs)
        surf = space.surface
        corners = surf.triangle_vertices()
        areas = surf.areas()
        slot = np.asarray((space.local_map.T @ coefs)).reshape(-1, 3)
        es = space.edges
        from qlbem.quadrature import gauss1d
        xq, _ = gauss1d(4)
        lookup = {}
        for k in es.interior_index():
            o, d = es.edges[k]
            lookup[tuple(np.round(0.5 * (surf.vertices[o]
                                         + surf.vertices[d]), 9))] = k

        def field(points):
            # identify the edge from the gauss points, use its plus triangle
            tvec = (points[1] - points[0]) / (xq[1] - xq[0])
            mid = points[0] + (0.5 - xq[0]) * tvec
            k = lookup[tuple(np.round(mid, 9))]
            t = es.tri_plus[k]
            basis = (points[:, None, :] - corners[t][None]) / (2 * areas[t])
            return np.einsum("l,plc->pc", slot[t], basis)

        got = op.interpolate_flux(space, field).real
        assert np.abs(got - coefs).max() < 1e-10
