"""Tests for skeleton meshes, domain boundaries and mesh generators."""

import numpy as np
import pytest

from qlbem import geometry as geo


def tetra_mesh():
    """Single tetrahedron: domain 1 inside, domain 0 outside."""
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    tris = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    adj = np.tile([0, 1], (4, 1))
    return geo.SkeletonMesh(verts, tris, adj, 2)


def two_tet_mesh():
    """Two tetrahedra glued along a shared face; three domains, one
    junction loop (the boundary of the shared face)."""
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                      [0, 0, 1], [0, 0, -1]], float)
    tris = np.array([
        [0, 1, 3], [0, 3, 2], [1, 2, 3],   # upper tet outer faces
        [0, 4, 1], [0, 2, 4], [1, 4, 2],   # lower tet outer faces
        [0, 1, 2],                          # shared face, normal +z
    ])
    adj = np.array([[0, 1]] * 3 + [[0, 2]] * 3 + [[1, 2]])
    return geo.SkeletonMesh(verts, tris, adj, 3)


class TestSkeleton:
    def test_validate_tetra(self):
        geo.validate_skeleton(tetra_mesh())

    def test_validate_two_tet(self):
        geo.validate_skeleton(two_tet_mesh())

    def test_junction_edges_two_tet(self):
        m = two_tet_mesh()
        je = m.junction_edges()
        assert je.shape == (3, 2)
        assert set(map(tuple, np.sort(je, axis=1))) == {(0, 1), (0, 2), (1, 2)}
        assert tetra_mesh().junction_edges().shape[0] == 0

    def test_identical_adjacent_domains_rejected(self):
        m = tetra_mesh()
        adj = m.adjacency.copy()
        adj[0] = (1, 1)
        with pytest.raises(geo.MeshTopologyError):
            geo.validate_skeleton(
                geo.SkeletonMesh(m.vertices, m.triangles, adj, 2))

    def test_degenerate_triangle_rejected(self):
        m = tetra_mesh()
        tris = m.triangles.copy()
        tris[0] = (0, 1, 1)
        with pytest.raises(geo.MeshTopologyError):
            geo.validate_skeleton(
                geo.SkeletonMesh(m.vertices, tris, m.adjacency, 2))

    def test_open_domain_boundary_rejected(self):
        m = tetra_mesh()
        with pytest.raises(geo.MeshTopologyError):
            geo.validate_skeleton(
                geo.SkeletonMesh(m.vertices, m.triangles[:3],
                                 m.adjacency[:3], 2))


class TestDomainBoundary:
    def test_signed_volume_orientation(self):
        m = tetra_mesh()
        s1 = geo.build_domain_boundary(m, 1)
        assert s1.signed_volume() == pytest.approx(1 / 6)
        s0 = geo.build_domain_boundary(m, 0)
        assert s0.signed_volume() == pytest.approx(-1 / 6)

    def test_two_tet_volumes(self):
        m = two_tet_mesh()
        for d in (1, 2):
            s = geo.build_domain_boundary(m, d)
            assert s.signed_volume() == pytest.approx(1 / 6)
            assert s.num_triangles == 4

    def test_parent_triangles_recorded(self):
        m = two_tet_mesh()
        s2 = geo.build_domain_boundary(m, 2)
        assert set(s2.parent_triangles) == {3, 4, 5, 6}


class TestEdges:
    def test_closed_surface_all_interior(self):
        s = geo.build_domain_boundary(tetra_mesh(), 1)
        es = geo.edge_enumeration(s)
        assert es.num_edges == 6
        assert es.interior.all()
        # Euler check on the sphere-like surface: V - E + T = 2
        assert 4 - 6 + 4 == 2

    def test_edge_orientation_low_to_high(self):
        s = geo.build_domain_boundary(two_tet_mesh(), 1)
        es = geo.edge_enumeration(s)
        assert (es.edges[:, 0] < es.edges[:, 1]).all()
        order = np.lexsort((es.edges[:, 1], es.edges[:, 0]))
        assert (order == np.arange(es.num_edges)).all()

    def test_plus_minus_triangles_disagree(self):
        s = geo.build_domain_boundary(tetra_mesh(), 1)
        es = geo.edge_enumeration(s)
        for k in range(es.num_edges):
            o, d = es.edges[k]
            # the plus triangle traverses the oriented edge backwards
            tp = s.triangles[es.tri_plus[k]]
            i = list(tp).index(d)
            assert tp[(i + 1) % 3] == o
            tm = s.triangles[es.tri_minus[k]]
            i = list(tm).index(o)
            assert tm[(i + 1) % 3] == d


class TestRefinement:
    def test_counts_and_area(self):
        s = geo.build_domain_boundary(tetra_mesh(), 1)
        ref = geo.barycentric_refine(s)
        assert ref.fine.num_triangles == 6 * s.num_triangles
        assert ref.fine.total_area() == pytest.approx(s.total_area(), abs=1e-13)
        # fine vertices = coarse vertices + edge midpoints + barycenters
        assert ref.fine.vertices.shape[0] == 4 + 6 + 4

    def test_orientation_preserved(self):
        s = geo.build_domain_boundary(tetra_mesh(), 1)
        ref = geo.barycentric_refine(s)
        assert ref.fine.signed_volume() > 0

    def test_parent_map(self):
        s = geo.build_domain_boundary(two_tet_mesh(), 2)
        ref = geo.barycentric_refine(s)
        assert (np.bincount(ref.parent) == 6).all()
        c_fine = ref.fine.centroids()
        for t in range(s.num_triangles):
            sel = ref.parent == t
            assert np.allclose(c_fine[sel].mean(axis=0), s.centroids()[t])


class TestReduction:
    def test_two_tet_reduction(self):
        rg = geo.reduce_geometry(two_tet_mesh())
        # exterior owns both outer interfaces; domain 1 owns the shared
        # face; domain 2 keeps nothing
        sizes = [s.num_triangles for s in rg.surfaces]
        assert sizes == [6, 1, 0]
        assert rg.interface_owner[(1, 2)] == 1
        assert rg.interface_owner[(0, 1)] == 0

    def test_ownership_covers_all_edges(self):
        m = geo.make_two_cubes(0.25)
        rg = geo.reduce_geometry(m)
        assert len(rg.owner) == m.edges().shape[0]

    def test_override(self):
        rg = geo.reduce_geometry(two_tet_mesh(), {(1, 2): 2})
        sizes = [s.num_triangles for s in rg.surfaces]
        assert sizes == [6, 0, 1]
        assert rg.interface_owner[(1, 2)] == 2


class TestIO:
    def test_round_trip(self, tmp_path):
        m = geo.make_two_cubes(0.25)
        p = tmp_path / "mesh.txt"
        geo.write_mesh(m, str(p))
        r = geo.load_mesh(str(p))
        assert np.array_equal(m.vertices, r.vertices)
        assert np.array_equal(m.triangles, r.triangles)
        assert np.array_equal(m.adjacency, r.adjacency)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "mesh.txt"
        p.write_text("wrong-magic 1 1 1\n")
        with pytest.raises(geo.MeshFormatError):
            geo.load_mesh(str(p))

    def test_truncated_file_reports_line(self, tmp_path):
        m = geo.make_two_cubes(0.25)
        p = tmp_path / "mesh.txt"
        geo.write_mesh(m, str(p))
        lines = p.read_text().splitlines()
        p.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(geo.MeshFormatError):
            geo.load_mesh(str(p))


class TestGenerators:
    def test_two_cubes_topology(self):
        m = geo.make_two_cubes(0.25)
        geo.validate_skeleton(m)
        assert m.domain_count == 3
        # junction loop around the shared 0.5 x 0.5 face
        je = m.junction_edges()
        assert je.shape[0] == 8
        pts = m.vertices[je].reshape(-1, 3)
        assert np.allclose(pts[:, 0], 1.0)
        b1 = geo.build_domain_boundary(m, 1)
        b2 = geo.build_domain_boundary(m, 2)
        assert b1.signed_volume() == pytest.approx(1.0)
        assert b2.signed_volume() == pytest.approx(0.125)

    def test_two_cubes_h_scaling(self):
        m1 = geo.make_two_cubes(0.25)
        m2 = geo.make_two_cubes(0.125)
        assert m2.num_triangles == 4 * m1.num_triangles

    def test_sphere(self):
        m = geo.make_sphere(0.2)
        s = geo.build_domain_boundary(m, 1)
        assert np.allclose(np.linalg.norm(m.vertices, axis=1), 1.0)
        assert s.signed_volume() == pytest.approx(4 * np.pi / 3, rel=0.02)
        assert s.total_area() == pytest.approx(4 * np.pi, rel=0.02)

    @pytest.mark.parametrize("split", ["half", "quadrant"])
    def test_split_sphere(self, split):
        m = geo.make_split_sphere(0.3, split)
        geo.validate_skeleton(m)
        assert m.domain_count == 3
        assert m.junction_edges().shape[0] > 0
        frac = 0.5 if split == "half" else 0.25
        v2 = geo.build_domain_boundary(m, 2).signed_volume()
        assert v2 == pytest.approx(frac * 4 * np.pi / 3, rel=0.06)
        v1 = geo.build_domain_boundary(m, 1).signed_volume()
        assert v1 == pytest.approx((1 - frac) * 4 * np.pi / 3, rel=0.06)

    def test_split_sphere_junction_on_circle(self):
        m = geo.make_split_sphere(0.3, "half")
        pts = m.vertices[m.junction_edges()].reshape(-1, 3)
        assert np.allclose(pts[:, 2], 0.0, atol=1e-12)
        assert np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-9)

    def test_mesh_size_guard(self):
        with pytest.raises(ValueError):
            geo.make_sphere(0.0)
        with pytest.raises(ValueError):
            geo.make_two_cubes(-0.1)
