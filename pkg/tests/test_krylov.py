"""Tests for GMRES, sparse factorization and condition numbers."""

import numpy as np
import pytest
import scipy.sparse as spr

from qlbem import geometry as geo
from qlbem import spaces as sps
from qlbem import krylov as kry


class TestGMRES:
    def test_identity_one_iteration(self):
        b = np.arange(1.0, 6.0)
        x, rep = kry.gmres(np.eye(5), b)
        assert rep.iterations == 1
        assert rep.converged
        assert np.allclose(x, b)

    def test_two_eigenvalues_two_iterations(self):
        d = np.diag([3.0] * 4 + [7.0] * 4)
        b = np.arange(1.0, 9.0)
        x, rep = kry.gmres(d, b, tol=1e-12)
        assert rep.iterations <= 2
        assert np.abs(d @ x - b).max() < 1e-10

    def test_tolerance_honoured(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(50, 50)) + 1j * rng.normal(size=(50, 50)) \
            + 12 * np.eye(50)
        b = rng.normal(size=50) + 1j * rng.normal(size=50)
        x, rep = kry.gmres(a, b, tol=2e-5)
        assert rep.converged
        assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) <= 2e-5
        assert rep.residual_history[-1] <= 2e-5

    def test_history_non_increasing(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(40, 40)) + 8 * np.eye(40)
        _, rep = kry.gmres(a, rng.normal(size=40), tol=1e-10)
        h = rep.residual_history
        assert all(b <= a + 1e-13 for a, b in zip(h, h[1:]))

    def test_matches_direct_solve(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(30, 30)) + 1j * rng.normal(size=(30, 30)) \
            + 9 * np.eye(30)
        b = rng.normal(size=30) + 1j * rng.normal(size=30)
        x, _ = kry.gmres(a, b, tol=1e-12)
        assert np.linalg.norm(x - np.linalg.solve(a, b)) < 1e-9

    def test_maxit_gives_nonconverged_report(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(30, 30)) + 9 * np.eye(30)
        _, rep = kry.gmres(a, rng.normal(size=30), tol=1e-15, maxit=4)
        assert not rep.converged
        assert rep.iterations == 4

    def test_callable_operator(self):
        b = np.ones(6)
        x, rep = kry.gmres(lambda v: 2.0 * v, b, tol=1e-12)
        assert np.allclose(x, 0.5 * b)

    def test_zero_rhs(self):
        x, rep = kry.gmres(np.eye(3), np.zeros(3))
        assert rep.converged and np.all(x == 0)

    def test_budget_guard(self):
        with pytest.raises(kry.KrylovError):
            kry.gmres(np.eye(5), np.ones(5), maxit=5, basis_budget=3)

    def test_invalid_tolerance(self):
        with pytest.raises(kry.KrylovError):
            kry.gmres(np.eye(3), np.ones(3), tol=0.0)


class TestSparseFactorization:
    def test_identity(self):
        s = kry.factorize_sparse(spr.eye(7, format="csc"))
        b = np.arange(7.0)
        assert np.allclose(s.solve(b), b)

    def test_mixed_gram_roundtrip(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]],
                         float)
        tris = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
        mesh = geo.SkeletonMesh(verts, tris, np.tile([0, 1], (4, 1)), 2)
        surf = geo.build_domain_boundary(mesh, 1)
        g = sps.gram_surface(sps.bc_space(surf), sps.rwg_space(surf))
        s = kry.factorize_sparse(g)
        b = np.linspace(-1, 1, g.shape[0])
        assert np.abs(g @ s.solve(b) - b).max() < 1e-12

    def test_singular_rejected(self):
        m = spr.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
        with pytest.raises(kry.KrylovError):
            kry.factorize_sparse(m)

    def test_matrix_rhs(self):
        s = kry.factorize_sparse(2 * spr.eye(4, format="csc"))
        b = np.eye(4)
        assert np.allclose(s.solve(b), 0.5 * np.eye(4))


class TestConditionNumber:
    def test_identity(self):
        assert kry.condition_number(np.eye(5), 5) == pytest.approx(1.0)

    def test_diagonal(self):
        assert kry.condition_number(np.diag([10.0, 1.0]), 2) \
            == pytest.approx(10.0)

    def test_rank_deficient(self):
        assert kry.condition_number(np.diag([1.0, 0.0]), 2) == np.inf

    def test_guard(self):
        with pytest.raises(kry.KrylovError):
            kry.condition_number(np.eye(2), 2, dim_guard=1)
