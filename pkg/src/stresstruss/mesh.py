"""Tetrahedral mesh data model, file ingestion, and discrete operators.

Meshes are inputs (no meshing here). Loaders accept MEDIT ``.mesh`` files and
TetGen ``.node``/``.ele`` pairs, reorient inverted tets, and extract the
boundary triangle complex. The discrete operators (per-tet gradients and the
vertex cotangent Laplacian) are what every downstream stage consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import MeshError

# Tets below this volume are treated as degenerate.
DEGENERATE_VOLUME = 1e-14

# Faces of a positively oriented tet (a,b,c,d), outward-facing.
_TET_FACES = ((0, 2, 1), (0, 1, 3), (1, 2, 3), (2, 0, 3))


@dataclass
class SurfaceMesh:
    """Boundary triangle 2-complex of a tet mesh.

    Triangles index into the parent mesh's vertex array and are oriented
    outward. ``face_tet`` maps each boundary triangle to the tet it came
    from. ``edges`` lists unique boundary edges with their two incident
    boundary faces and the dihedral angle between them.
    """

    triangles: np.ndarray          # (nb, 3) int
    face_tet: np.ndarray           # (nb,) int
    edges: np.ndarray              # (ne, 2) int, sorted vertex pairs
    edge_faces: np.ndarray         # (ne, 2) int, incident boundary triangles
    dihedral_angles: np.ndarray    # (ne,) float, radians in [0, pi]
    face_normals: np.ndarray       # (nb, 3) float, unit outward normals


@dataclass
class DiscreteOperators:
    """Sparse per-tet gradient operators and the vertex Laplacian.

    Gx/Gy/Gz map per-vertex scalars to per-tet directional derivatives.
    L is the symmetric cotangent Laplacian (P1 stiffness matrix); rows sum
    to zero and off-diagonal signs are kept as-is.
    """

    Gx: sp.csr_matrix
    Gy: sp.csr_matrix
    Gz: sp.csr_matrix
    L: sp.csr_matrix


@dataclass
class TetMesh:
    vertices: np.ndarray           # (n, 3) float64, meters
    tets: np.ndarray               # (m, 4) int, positively oriented
    volumes: np.ndarray = field(init=False)
    boundary: SurfaceMesh = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise MeshError("tets must be an (m, 4) array")
        if self.tets.min(initial=0) < 0 or self.tets.max(initial=-1) >= len(self.vertices):
            raise MeshError("tet vertex index out of range")
        self._orient_and_validate()
        self.boundary = self._extract_boundary()

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    def _orient_and_validate(self):
        vol = signed_volumes(self.vertices, self.tets)
        flipped = vol < 0
        if flipped.any():
            # Swap two vertices to restore positive orientation.
            t = self.tets[flipped]
            t[:, [1, 2]] = t[:, [2, 1]]
            self.tets[flipped] = t
            vol = np.abs(vol)
        bad = np.nonzero(vol < DEGENERATE_VOLUME)[0]
        if bad.size:
            raise MeshError(f"degenerate tet (volume < {DEGENERATE_VOLUME:g}) at index {bad[0]}")
        key = np.sort(self.tets, axis=1)
        _, counts = np.unique(key, axis=0, return_counts=True)
        if (counts > 1).any():
            raise MeshError("duplicate tets")
        self.volumes = vol

    def _extract_boundary(self) -> SurfaceMesh:
        m = self.num_tets
        faces = np.concatenate([self.tets[:, idx] for idx in _TET_FACES])   # (4m, 3)
        face_tet = np.tile(np.arange(m), 4)
        key = np.sort(faces, axis=1)
        _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        on_boundary = counts[inverse] == 1
        if counts.max(initial=1) > 2:
            raise MeshError("non-manifold face (shared by more than two tets)")
        tris = faces[on_boundary]
        tri_tet = face_tet[on_boundary]

        # Deterministic ordering: by sorted vertex triple.
        order = np.lexsort(np.sort(tris, axis=1).T[::-1])
        tris = tris[order]
        tri_tet = tri_tet[order]

        normals = _triangle_normals(self.vertices, tris)

        # Boundary edges: each must have exactly two incident boundary faces.
        ne = len(tris)
        e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        e = np.sort(e, axis=1)
        e_face = np.tile(np.arange(ne), 3)
        uniq, inv, ecounts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
        if ne and not (ecounts == 2).all():
            raise MeshError("boundary is not a closed 2-complex")
        # Each unique edge gets its two incident faces, in encounter order.
        edge_faces = np.full((len(uniq), 2), -1, dtype=np.int64)
        order2 = np.argsort(inv, kind="stable")
        edge_faces[:, 0] = e_face[order2[0::2]]
        edge_faces[:, 1] = e_face[order2[1::2]]
        # Dihedral angle between the two incident face normals.
        if len(uniq):
            n0 = normals[edge_faces[:, 0]]
            n1 = normals[edge_faces[:, 1]]
            cosang = np.clip(np.einsum("ij,ij->i", n0, n1), -1.0, 1.0)
            dihedral = np.arccos(cosang)
        else:
            dihedral = np.zeros(0)
        return SurfaceMesh(
            triangles=tris,
            face_tet=tri_tet,
            edges=uniq,
            edge_faces=edge_faces,
            dihedral_angles=dihedral,
            face_normals=normals,
        )

    def vertex_neighbors(self) -> list[np.ndarray]:
        """Per-vertex 1-ring neighbor indices (via tet edges)."""
        pairs = set()
        for a, b, c, d in self.tets:
            for u, v in ((a, b), (a, c), (a, d), (b, c), (b, d), (c, d)):
                pairs.add((int(u), int(v)))
                pairs.add((int(v), int(u)))
        neigh = [[] for _ in range(self.num_vertices)]
        for u, v in pairs:
            neigh[u].append(v)
        return [np.array(sorted(ns), dtype=np.int64) for ns in neigh]


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    return np.linalg.det(p[:, 1:] - p[:, :1]) / 6.0


def _triangle_normals(vertices, tris):
    p = vertices[tris]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return n / norm


# ---------------------------------------------------------------------------
# File ingestion


def load_tet_mesh(path: str | Path, fmt: str | None = None) -> TetMesh:
    """Load a tet mesh from MEDIT ``.mesh`` or a TetGen ``.node``/``.ele`` pair.

    ``fmt`` is ``"medit_mesh"`` or ``"tetgen_pair"``; inferred from the
    extension when omitted. Inverted tets are reoriented on load.
    """
    path = Path(path)
    if fmt is None:
        if path.suffix == ".mesh":
            fmt = "medit_mesh"
        elif path.suffix in (".node", ".ele"):
            fmt = "tetgen_pair"
        else:
            raise MeshError(f"cannot infer mesh format from {path.name!r}")
    if fmt == "medit_mesh":
        verts, tets = _read_medit(path)
    elif fmt == "tetgen_pair":
        verts, tets = _read_tetgen(path)
    else:
        raise MeshError(f"unknown mesh format {fmt!r}")
    if len(tets) == 0:
        raise MeshError(f"{path.name}: no tetrahedra")
    return TetMesh(verts, tets)


def _read_medit(path: Path):
    tokens = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    verts, tets = None, None
    i = 0
    n = len(tokens)
    while i < n:
        tok = tokens[i].lower()
        if tok == "vertices":
            cnt = int(tokens[i + 1])
            i += 2
            data = np.array(tokens[i:i + 4 * cnt], dtype=np.float64).reshape(cnt, 4)
            verts = data[:, :3]
            i += 4 * cnt
        elif tok == "tetrahedra":
            cnt = int(tokens[i + 1])
            i += 2
            data = np.array(tokens[i:i + 5 * cnt], dtype=np.int64).reshape(cnt, 5)
            tets = data[:, :4] - 1    # MEDIT is 1-based
            i += 5 * cnt
        elif tok == "triangles":
            cnt = int(tokens[i + 1])
            i += 2 + 4 * cnt          # surface triangles are recomputed, skip
        elif tok == "edges":
            cnt = int(tokens[i + 1])
            i += 2 + 3 * cnt
        elif tok == "end":
            break
        else:
            i += 1
    if verts is None or tets is None:
        raise MeshError(f"{path.name}: missing Vertices or Tetrahedra section")
    return verts, tets


def _read_tetgen(path: Path):
    node_path = path.with_suffix(".node")
    ele_path = path.with_suffix(".ele")
    for p in (node_path, ele_path):
        if not p.exists():
            raise MeshError(f"missing TetGen file {p.name}")

    def rows(p):
        out = []
        for line in p.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                out.append(line.split())
        return out

    nrows = rows(node_path)
    npts, dim = int(nrows[0][0]), int(nrows[0][1])
    if dim != 3:
        raise MeshError(f"{node_path.name}: expected dimension 3, got {dim}")
    body = nrows[1:1 + npts]
    if len(body) != npts:
        raise MeshError(f"{node_path.name}: expected {npts} points")
    first_index = int(body[0][0])   # 0- or 1-based, from the first row
    verts = np.array([r[1:4] for r in body], dtype=np.float64)

    erows = rows(ele_path)
    ntets, npe = int(erows[0][0]), int(erows[0][1])
    if npe != 4:
        raise MeshError(f"{ele_path.name}: expected 4 nodes per tet, got {npe}")
    ebody = erows[1:1 + ntets]
    if len(ebody) != ntets:
        raise MeshError(f"{ele_path.name}: expected {ntets} tets")
    tets = np.array([r[1:5] for r in ebody], dtype=np.int64) - first_index
    return verts, tets


def write_medit(path: str | Path, vertices: np.ndarray, tets: np.ndarray):
    """Write a MEDIT ``.mesh`` file (1-based indices)."""
    lines = ["MeshVersionFormatted 2", "Dimension 3", "Vertices", str(len(vertices))]
    for v in vertices:
        lines.append(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r} 0")
    lines.append("Tetrahedra")
    lines.append(str(len(tets)))
    for t in tets:
        lines.append(f"{t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1} 0")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Discrete operators


def build_operators(mesh: TetMesh) -> DiscreteOperators:
    """Per-tet gradient operators Gx/Gy/Gz and the cotangent Laplacian L.

    Gradients reproduce affine fields exactly; L is the P1 stiffness matrix
    sum_t vol_t * G_t^T G_t, symmetric with zero row sums.
    """
    grads = shape_gradients(mesh)       # (m, 4, 3)
    m, n = mesh.num_tets, mesh.num_vertices
    rows = np.repeat(np.arange(m), 4)
    cols = mesh.tets.ravel()
    ops = []
    for axis in range(3):
        G = sp.csr_matrix((grads[:, :, axis].ravel(), (rows, cols)), shape=(m, n))
        ops.append(G)

    # Stiffness assembly: per-tet 4x4 block vol * g g^T.
    local = np.einsum("t,tia,tja->tij", mesh.volumes, grads, grads)   # (m, 4, 4)
    li = np.repeat(mesh.tets, 4, axis=1).ravel()
    lj = np.tile(mesh.tets, (1, 4)).ravel()
    L = sp.csr_matrix((local.ravel(), (li, lj)), shape=(n, n))
    L.sum_duplicates()
    L = ((L + L.T) * 0.5).tocsr()     # exact symmetry (x+y == y+x bitwise)
    return DiscreteOperators(Gx=ops[0], Gy=ops[1], Gz=ops[2], L=L)


def shape_gradients(mesh: TetMesh) -> np.ndarray:
    """Gradients of the four linear shape functions per tet, shape (m, 4, 3)."""
    p = mesh.vertices[mesh.tets]
    E = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))    # columns are edge vectors
    det = np.linalg.det(E)
    if (np.abs(det) < 6.0 * DEGENERATE_VOLUME).any():
        bad = int(np.argmin(np.abs(det)))
        raise MeshError(f"degenerate tet at index {bad}")
    Einv = np.linalg.inv(E)
    g = np.empty((mesh.num_tets, 4, 3))
    g[:, 1:, :] = Einv                                   # rows of E^-1 = grad lambda_{1..3}
    g[:, 0, :] = -Einv.sum(axis=1)
    return g


def feature_edges(surface: SurfaceMesh, cos_threshold: float = 0.9) -> np.ndarray:
    """Boundary edges whose adjacent-face normals have dot product below the threshold.

    Returns an (k, 2) array of sorted vertex pairs; empty when the surface is
    smooth at the threshold. At the boundary value 1.0 every edge is selected,
    including edges between exactly coplanar faces.
    """
    if not (-1.0 < cos_threshold <= 1.0):
        raise MeshError("cos_threshold must be in (-1, 1]")
    if len(surface.edges) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if cos_threshold >= 1.0:
        return surface.edges.copy()
    n0 = surface.face_normals[surface.edge_faces[:, 0]]
    n1 = surface.face_normals[surface.edge_faces[:, 1]]
    dots = np.einsum("ij,ij->i", n0, n1)
    return surface.edges[dots < cos_threshold]
