"""Simplification and geometry emission tests."""

from __future__ import annotations

import warnings

import numpy as np
import pytest

from stresstruss.errors import ConfigError
from stresstruss.extract import (
    ExtractionWarning,
    TrussGraph,
    empty_graph,
    extract_2d,
    extract_3d,
    perturb_parametrization,
)
from stresstruss.fixtures import unit_cube_mesh
from stresstruss.param import Parametrization
from stresstruss.postprocess import (
    GeometryWarning,
    TriangleMesh,
    emit_geometry,
    resolve_radii,
    simplify,
    write_lines_obj,
    write_obj,
    write_ply,
)


def _graph(positions, tags, elements, families, params=None):
    positions = np.asarray(positions, dtype=float)
    if params is None:
        params = np.zeros((len(positions), 3))
    return TrussGraph(
        positions=positions,
        params=np.asarray(params, dtype=float),
        tags=list(tags),
        elements=np.asarray(elements, dtype=np.int64).reshape(-1, 2),
        families=list(families),
    )


def _num_components(g):
    parent = list(range(g.num_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in g.elements:
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return len({find(i) for i in range(g.num_nodes)})


@pytest.fixture(scope="module")
def cube_graph():
    mesh = unit_cube_mesh(5, jitter=0.3)
    phi = 4.0 * mesh.vertices
    p = Parametrization(phi=phi, beta=1.0, rho=4.0)
    p.phi_tilde = phi.copy()
    pert = perturb_parametrization(p, mesh=mesh)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtractionWarning)
        return extract_3d(mesh, pert)


def test_zero_length_merge():
    g = _graph(
        [[0, 0, 0], [0, 0, 0], [1, 0, 0]],
        ["face_hit", "face_hit", "interior_grid"],
        [[0, 1], [1, 2]],
        ["iso1", "iso1"],
    )
    s = simplify(g, length_threshold=0.01)
    assert s.num_nodes == 2
    assert s.num_elements == 1
    assert _num_components(s) == _num_components(g)


def test_cube_remove_hits(cube_graph):
    g = cube_graph
    s = simplify(g, length_threshold=0.0, remove_interior_hits=True)
    assert s.num_nodes == 27
    assert all(t == "interior_grid" for t in s.tags)
    assert s.num_elements == 54
    assert _num_components(s) == _num_components(g)
    got = np.array(sorted(map(tuple, np.round(s.positions * 4).astype(int))))
    expected = np.array(sorted(
        (i, j, k) for i in (1, 2, 3) for j in (1, 2, 3) for k in (1, 2, 3)
    ))
    assert (got == expected).all()
    assert np.abs(s.positions * 4 - np.round(s.positions * 4)).max() < 4e-7
    # Every element spans adjacent grid points.
    key = np.round(s.params).astype(int)
    for a, b in s.elements:
        assert np.abs(key[a] - key[b]).sum() == 1


def test_feature_precedence():
    g = _graph(
        [[0, 0, 0], [1e-4, 0, 0], [1, 0, 0]],
        ["feature", "boundary", "boundary"],
        [[0, 1], [1, 2]],
        ["feature", "boundary"],
    )
    s = simplify(g, length_threshold=1e-3)
    assert s.num_nodes == 2
    # Survivor of the short element is the feature node, position kept.
    fidx = s.tags.index("feature")
    assert (s.positions[fidx] == [0.0, 0.0, 0.0]).all()


def test_preserve_features_blocks_contraction():
    g = _graph(
        [[0, 0, 0], [1e-4, 0, 0]],
        ["feature", "feature"],
        [[0, 1]],
        ["feature"],
    )
    s = simplify(g, length_threshold=1e-3, preserve_features=True)
    assert s.num_nodes == 2
    s2 = simplify(g, length_threshold=1e-3, preserve_features=False)
    assert s2.num_nodes == 1
    assert s2.num_elements == 0


def test_parallel_element_becomes_self_loop():
    g = _graph(
        [[0, 0, 0], [1e-4, 0, 0]],
        ["interior_grid", "face_hit"],
        [[0, 1], [0, 1]],
        ["iso1", "boundary"],
    )
    s = simplify(g, length_threshold=1e-3)
    assert s.num_nodes == 1
    assert s.num_elements == 0


def test_component_and_length_invariants():
    verts = np.array([
        [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0],
    ])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    params = 4.0 * verts[:, :2]
    p = Parametrization(phi=params.copy(), beta=1.0)
    p.phi_tilde = params.copy()
    nb = [np.array(x) for x in ([1, 2, 3], [0, 2], [0, 1, 3], [0, 2])]
    pert = perturb_parametrization(p, neighbors=nb).phi_tilde
    g = extract_2d(verts, faces, pert, pair=(0, 1))
    before_comp = _num_components(g)
    before_len = g.element_lengths().sum()
    s = simplify(g, length_threshold=0.2, remove_interior_hits=True)
    assert _num_components(s) == before_comp
    assert s.element_lengths().sum() <= before_len + 1e-12


def test_emit_counts_single_element():
    g = _graph(
        [[0, 0, 0], [1, 0, 0]], ["interior_grid", "interior_grid"],
        [[0, 1]], ["iso1"],
    )
    mesh = emit_geometry(g, 0.01, sides=8)
    assert mesh.num_triangles == 28 + 2 * 20
    assert len(mesh.vertices) == 16 + 2 * 12
    for sides in (3, 5, 8, 12):
        m = emit_geometry(g, 0.01, sides=sides)
        prism = 2 * sides + 2 * (sides - 2)
        assert m.num_triangles == prism + 2 * 20


def test_emit_empty():
    mesh = emit_geometry(empty_graph(), 0.01, sides=8)
    assert mesh.num_triangles == 0
    assert len(mesh.vertices) == 0


def test_emit_shared_node_fan_once():
    g = _graph(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0]],
        ["interior_grid"] * 3,
        [[0, 1], [1, 2]],
        ["iso1", "iso2"],
    )
    mesh = emit_geometry(g, 0.01, sides=8)
    assert mesh.num_triangles == 2 * 28 + 3 * 20


def test_emit_zero_length_warns():
    g = _graph(
        [[0, 0, 0], [0, 0, 0]], ["interior_grid", "interior_grid"],
        [[0, 1]], ["iso1"],
    )
    with pytest.warns(GeometryWarning, match="zero-length"):
        mesh = emit_geometry(g, 0.01, sides=8)
    assert mesh.num_triangles == 0


def test_emit_bbox(cube_graph):
    s = simplify(cube_graph, length_threshold=0.0, remove_interior_hits=True)
    r = 0.02
    mesh = emit_geometry(s, r, sides=6)
    assert (mesh.vertices.min(axis=0) >= s.positions.min(axis=0) - r - 1e-12).all()
    assert (mesh.vertices.max(axis=0) <= s.positions.max(axis=0) + r + 1e-12).all()


def test_radius_policy():
    fams = ["iso1", "iso2", "boundary"]
    radii = resolve_radii(fams, {"iso1": 0.01, "default": 0.02})
    assert np.allclose(radii, [0.01, 0.02, 0.02])
    with pytest.raises(ConfigError, match="family"):
        resolve_radii(fams, {"iso1": 0.01})
    with pytest.raises(ConfigError, match="positive"):
        resolve_radii(fams, -1.0)
    g = _graph(
        [[0, 0, 0], [1, 0, 0]], ["interior_grid", "interior_grid"],
        [[0, 1]], ["iso1"],
    )
    with pytest.raises(ConfigError, match="sides"):
        emit_geometry(g, 0.01, sides=2)


def test_writers(tmp_path):
    g = _graph(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0]],
        ["interior_grid"] * 3,
        [[0, 1], [1, 2]],
        ["iso1", "iso2"],
    )
    mesh = emit_geometry(g, 0.01, sides=8)

    obj = tmp_path / "out.obj"
    write_obj(mesh, obj)
    text = obj.read_text().strip().splitlines()
    assert sum(1 for ln in text if ln.startswith("v ")) == len(mesh.vertices)
    assert sum(1 for ln in text if ln.startswith("f ")) == mesh.num_triangles
    first = float(text[0].split()[1])
    assert abs(first - mesh.vertices[0, 0]) < 1e-15

    ply = tmp_path / "out.ply"
    write_ply(mesh, ply)
    blob = ply.read_bytes()
    header_end = blob.index(b"end_header\n") + len(b"end_header\n")
    body = blob[header_end:]
    assert len(body) == 12 * len(mesh.vertices) + 13 * mesh.num_triangles
    assert b"binary_little_endian" in blob[:header_end]

    lines = tmp_path / "graph.obj"
    write_lines_obj(g, lines)
    text = lines.read_text().strip().splitlines()
    assert sum(1 for ln in text if ln.startswith("l ")) == g.num_elements

    # Deterministic bytes on rewrite.
    obj2 = tmp_path / "out2.obj"
    write_obj(mesh, obj2)
    assert obj2.read_bytes() == obj.read_bytes()
    ply2 = tmp_path / "out2.ply"
    write_ply(mesh, ply2)
    assert ply2.read_bytes() == ply.read_bytes()
