import numpy as np
import pytest

from stresstruss.errors import MeshError
from stresstruss.fixtures import bar_mesh, box_mesh, unit_cube_mesh
from stresstruss.mesh import (
    TetMesh,
    build_operators,
    feature_edges,
    load_tet_mesh,
    write_medit,
)


def ball_mesh(n=6):
    """Ball from a cubed-sphere map of a box; boundary is a sphere tessellation."""
    m = box_mesh((n, n, n), size=(2.0, 2.0, 2.0), origin=(-1.0, -1.0, -1.0))
    v = m.vertices
    r = np.linalg.norm(v, axis=1)
    linf = np.abs(v).max(axis=1)
    scale = np.ones_like(r)
    nz = r > 0
    scale[nz] = linf[nz] / r[nz]
    return TetMesh(v * scale[:, None], m.tets)


def test_single_tet_medit(tmp_path):
    p = tmp_path / "one.mesh"
    p.write_text(
        "MeshVersionFormatted 2\nDimension 3\n"
        "Vertices\n4\n0 0 0 0\n1 0 0 0\n0 1 0 0\n0 0 1 0\n"
        "Tetrahedra\n1\n1 2 3 4 0\nEnd\n"
    )
    m = load_tet_mesh(p)
    assert m.num_tets == 1
    assert m.volumes[0] == pytest.approx(1.0 / 6.0, rel=1e-12)
    assert len(m.boundary.triangles) == 4


def test_six_tet_unit_cube():
    m = box_mesh((1, 1, 1))
    assert m.num_tets == 6
    assert m.volumes.sum() == pytest.approx(1.0, rel=1e-12)
    assert len(m.boundary.triangles) == 12
    assert (m.volumes > 0).all()


def test_bar_fixture_counts():
    m = bar_mesh()
    assert m.num_vertices == 13 * 6 * 6
    assert m.num_tets == 12 * 5 * 5 * 6
    ext = m.vertices.max(axis=0) - m.vertices.min(axis=0)
    np.testing.assert_allclose(ext, [0.2, 0.05, 0.05], rtol=1e-12)


def test_medit_roundtrip(tmp_path):
    m = box_mesh((2, 1, 1), jitter=0.05)
    p = tmp_path / "box.mesh"
    write_medit(p, m.vertices, m.tets)
    m2 = load_tet_mesh(p)
    np.testing.assert_array_equal(m2.vertices, m.vertices)
    np.testing.assert_array_equal(m2.tets, m.tets)


def test_tetgen_pair_both_bases(tmp_path):
    m = box_mesh((1, 1, 1))
    for base in (0, 1):
        (tmp_path / "m.node").write_text(
            f"{m.num_vertices} 3 0 0\n"
            + "\n".join(
                f"{i + base} {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}"
                for i, v in enumerate(m.vertices)
            )
            + "\n"
        )
        (tmp_path / "m.ele").write_text(
            f"{m.num_tets} 4 0\n"
            + "\n".join(
                f"{i + base} {t[0] + base} {t[1] + base} {t[2] + base} {t[3] + base}"
                for i, t in enumerate(m.tets)
            )
            + "\n"
        )
        m2 = load_tet_mesh(tmp_path / "m.node")
        np.testing.assert_array_equal(m2.tets, m.tets)
        np.testing.assert_allclose(m2.vertices, m.vertices)


def test_inverted_tet_reoriented():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    m = TetMesh(verts, np.array([[0, 2, 1, 3]]))    # negative volume as given
    assert m.volumes[0] == pytest.approx(1.0 / 6.0)


def test_degenerate_tet_names_index():
    verts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [2, 0, 0], [0.5, 0.5, 0]],
        dtype=float,
    )
    tets = np.array([[0, 1, 2, 3], [0, 1, 4, 5]])   # second tet is coplanar
    with pytest.raises(MeshError, match="index 1"):
        TetMesh(verts, tets)


def test_out_of_range_and_duplicates():
    verts = np.eye(4, 3, k=-1, dtype=float)
    verts[0] = 0.0
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    with pytest.raises(MeshError):
        TetMesh(verts, np.array([[0, 1, 2, 9]]))
    with pytest.raises(MeshError, match="duplicate"):
        TetMesh(verts, np.array([[0, 1, 2, 3], [1, 0, 3, 2]]))


def test_non_manifold_face_rejected():
    verts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1], [0.3, 0.3, 2.0]],
        dtype=float,
    )
    tets = np.array([[0, 1, 2, 3], [0, 1, 2, 4], [0, 1, 2, 5]])
    with pytest.raises(MeshError, match="manifold"):
        TetMesh(verts, tets)


def test_boundary_closed_and_euler():
    for mesh in (box_mesh((3, 2, 4), jitter=0.08), ball_mesh(4)):
        b = mesh.boundary
        assert (b.edge_faces >= 0).all()
        V = len(np.unique(b.triangles))
        E = len(b.edges)
        F = len(b.triangles)
        assert V - E + F == 2
        assert (b.dihedral_angles >= 0).all() and (b.dihedral_angles <= np.pi).all()


def test_boundary_normals_point_outward():
    m = unit_cube_mesh(2, jitter=0.05)
    b = m.boundary
    centers = m.vertices[b.triangles].mean(axis=1)
    outward = centers - np.array([0.5, 0.5, 0.5])
    dots = np.einsum("ij,ij->i", b.face_normals, outward)
    assert (dots > 0).all()


def test_affine_reproduction():
    rng = np.random.default_rng(7)
    mesh = box_mesh((3, 3, 3), jitter=0.1)
    ops = build_operators(mesh)
    for _ in range(20):
        a = rng.standard_normal(3)
        c = rng.standard_normal()
        f = mesh.vertices @ a + c
        g = np.stack([ops.Gx @ f, ops.Gy @ f, ops.Gz @ f], axis=1)
        err = np.abs(g - a).max() / max(np.abs(a).max(), 1.0)
        assert err <= 1e-10


def test_gradient_examples():
    mesh = bar_mesh(jitter=0.05)
    ops = build_operators(mesh)
    x = mesh.vertices
    f1 = x[:, 0]
    np.testing.assert_allclose(ops.Gx @ f1, 1.0, atol=1e-10)
    np.testing.assert_allclose(ops.Gy @ f1, 0.0, atol=1e-10)
    np.testing.assert_allclose(ops.Gz @ f1, 0.0, atol=1e-10)
    f2 = 2 * x[:, 0] + 3 * x[:, 1] - x[:, 2]
    np.testing.assert_allclose(ops.Gx @ f2, 2.0, atol=1e-9)
    np.testing.assert_allclose(ops.Gy @ f2, 3.0, atol=1e-9)
    np.testing.assert_allclose(ops.Gz @ f2, -1.0, atol=1e-9)


def test_laplacian_properties():
    mesh = box_mesh((2, 3, 2), jitter=0.1)
    L = build_operators(mesh).L
    assert (L != L.T).nnz == 0
    rowsum = np.asarray(L.sum(axis=1)).ravel()
    assert np.abs(rowsum).max() <= 1e-12
    const = np.full(mesh.num_vertices, 3.7)
    assert np.abs(L @ const).max() <= 1e-11
    # Positive semidefinite: energy of random fields is nonnegative.
    rng = np.random.default_rng(3)
    for _ in range(10):
        u = rng.standard_normal(mesh.num_vertices)
        assert u @ (L @ u) >= -1e-12


def test_feature_edges_cube():
    m = unit_cube_mesh(3)
    edges09 = feature_edges(m.boundary, 0.9)
    assert len(edges09) == 12 * 3          # each cube edge spans 3 mesh edges
    # Selected edges lie on the cube's geometric edges: both endpoints share
    # two coordinates pinned at 0 or 1.
    pts = m.vertices[edges09]
    at_extreme = (np.isclose(pts, 0.0) | np.isclose(pts, 1.0)).all(axis=1)
    pinned = at_extreme & np.isclose(pts[:, 0, :], pts[:, 1, :])
    assert (pinned.sum(axis=1) >= 2).all()
    edges_all = feature_edges(m.boundary, 1.0)
    assert len(edges_all) == len(m.boundary.edges)


def test_feature_edges_smooth_surface_empty():
    m = ball_mesh(6)
    b = m.boundary
    n0 = b.face_normals[b.edge_faces[:, 0]]
    n1 = b.face_normals[b.edge_faces[:, 1]]
    dots = np.einsum("ij,ij->i", n0, n1)
    assert dots.min() > 0.9                 # precondition: tessellation is smooth
    assert len(feature_edges(b, 0.9)) == 0


def test_feature_edges_threshold_validation():
    m = unit_cube_mesh(1)
    with pytest.raises(MeshError):
        feature_edges(m.boundary, -1.0)


def test_vertex_neighbors_single_tet():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    m = TetMesh(verts, np.array([[0, 1, 2, 3]]))
    for ns in m.vertex_neighbors():
        assert len(ns) == 3
