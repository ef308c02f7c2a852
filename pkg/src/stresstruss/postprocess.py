"""Graph simplification and printable geometry emission.

Simplification contracts short elements toward the endpoint with higher
provenance rank, optionally eliminating all face/edge-hit nodes. Geometry
emission replaces each element with a capped prism and each node with an
icosahedral ball; primitives overlap deliberately, there is NO boolean
union (downstream slicers tolerate overlapping watertight shells).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .extract import TAG_RANK, TrussGraph

HIT_TAGS = ("edge_hit", "face_hit")


class GeometryWarning(UserWarning):
    pass


def _components(num_nodes: int, elements: np.ndarray) -> int:
    parent = np.arange(num_nodes)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in elements:
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return len({find(i) for i in range(num_nodes)})


def default_length_threshold(g: TrussGraph, factor: float = 0.05) -> float:
    lengths = g.element_lengths()
    if len(lengths) == 0:
        return 0.0
    return factor * float(np.median(lengths))


def simplify(g: TrussGraph, length_threshold: float | None = None,
             remove_interior_hits: bool = False,
             preserve_features: bool = True) -> TrussGraph:
    """Edge-contraction simplification.

    Elements shorter than the threshold collapse toward the higher-ranked
    endpoint (feature > boundary > interior_grid > hits; ties keep the lower
    index). With remove_interior_hits, every remaining hit-provenance node is
    contracted into its nearest neighbor regardless of length. Elements whose
    endpoints end up identical are dropped rather than contracted. The
    connected-component count never changes.
    """
    if length_threshold is None:
        length_threshold = default_length_threshold(g)
    n = g.num_nodes
    if n == 0:
        return g.copy()

    parent = np.arange(n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def winner_loser(a, b):
        ra, rb = TAG_RANK[g.tags[a]], TAG_RANK[g.tags[b]]
        if ra > rb or (ra == rb and a < b):
            return a, b
        return b, a

    def current_elements():
        seen = {}
        for (a, b), fam in zip(g.elements, g.families):
            ra, rb = find(int(a)), find(int(b))
            if ra == rb:
                continue
            seen.setdefault((min(ra, rb), max(ra, rb), fam), True)
        return list(seen)

    def contract_pass(candidates):
        """candidates: list of (sort_key, a, b); returns #contractions."""
        touched = set()
        done = 0
        for _key, a, b in sorted(candidates):
            ra, rb = find(a), find(b)
            if ra == rb or ra in touched or rb in touched:
                continue
            if preserve_features and g.tags[ra] == "feature" \
                    and g.tags[rb] == "feature":
                continue
            win, lose = winner_loser(ra, rb)
            parent[lose] = win
            touched.update((ra, rb))
            done += 1
        return done

    # Phase A: contract everything shorter than the threshold.
    while True:
        cands = []
        for ra, rb, _fam in current_elements():
            d = float(np.linalg.norm(g.positions[ra] - g.positions[rb]))
            if d < length_threshold:
                cands.append(((d, ra, rb), ra, rb))
        if not cands or contract_pass(cands) == 0:
            break

    # Phase B: eliminate hit-provenance nodes entirely.
    if remove_interior_hits:
        while True:
            adjacency: dict[int, list[tuple[float, int]]] = {}
            for ra, rb, _fam in current_elements():
                d = float(np.linalg.norm(g.positions[ra] - g.positions[rb]))
                adjacency.setdefault(ra, []).append((d, rb))
                adjacency.setdefault(rb, []).append((d, ra))
            cands = []
            for node in range(n):
                if find(node) != node or g.tags[node] not in HIT_TAGS:
                    continue
                incident = adjacency.get(node)
                if not incident:
                    continue
                d, other = min(incident)
                cands.append(((d, node, other), node, other))
            if not cands or contract_pass(cands) == 0:
                break

    # Compact surviving roots, preserving input order. A component made
    # entirely of hit nodes contracts to one node that must survive, or the
    # component count would change.
    roots = [i for i in range(n) if find(i) == i]
    new_id = {r: k for k, r in enumerate(roots)}
    elements = []
    families = []
    for ra, rb, fam in current_elements():
        elements.append((new_id[ra], new_id[rb]))
        families.append(fam)
    elements = (np.array(elements, dtype=np.int64).reshape(-1, 2)
                if elements else np.zeros((0, 2), dtype=np.int64))
    if len(elements):
        elements_sorted = np.sort(elements, axis=1)
    else:
        elements_sorted = elements
    return TrussGraph(
        positions=g.positions[roots].copy(),
        params=g.params[roots].copy(),
        tags=[g.tags[r] for r in roots],
        elements=elements_sorted,
        families=families,
    )


# ---------------------------------------------------------------------------
# Geometry emission


@dataclass
class TriangleMesh:
    vertices: np.ndarray       # (n, 3) float
    triangles: np.ndarray      # (m, 3) int, indices into vertices

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)


def resolve_radii(families: list[str], radius_policy) -> np.ndarray:
    """Per-element radius from a scalar or a {family: radius} map with an
    optional "default" entry."""
    if np.isscalar(radius_policy):
        r = float(radius_policy)
        if r <= 0.0:
            raise ConfigError("radius must be positive")
        return np.full(len(families), r)
    radii = np.empty(len(families))
    for i, fam in enumerate(families):
        r = radius_policy.get(fam, radius_policy.get("default"))
        if r is None:
            raise ConfigError(f"no radius for element family {fam!r}")
        if r <= 0.0:
            raise ConfigError("radius must be positive")
        radii[i] = float(r)
    return radii


def _perp_basis(u: np.ndarray):
    e = np.zeros(3)
    e[int(np.argmin(np.abs(u)))] = 1.0
    e1 = np.cross(u, e)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


# Icosahedron template, unit circumradius.
_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
]) / np.sqrt(1.0 + _PHI ** 2)
_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])

ZERO_LENGTH = 1e-12


def emit_geometry(g: TrussGraph, radius_policy, sides: int = 8) -> TriangleMesh:
    """Capped prism per element, icosahedral ball per node (once, at the
    largest incident radius). Primitives overlap; no boolean union."""
    if sides < 3:
        raise ConfigError("sides must be at least 3")
    radii = resolve_radii(g.families, radius_policy)

    verts: list[np.ndarray] = []
    tris: list[np.ndarray] = []
    node_radius = np.zeros(g.num_nodes)
    skipped = 0
    base = 0
    angles = 2.0 * np.pi * np.arange(sides) / sides
    cos_a, sin_a = np.cos(angles), np.sin(angles)

    for (a, b), r in zip(g.elements, radii):
        p0, p1 = g.positions[a], g.positions[b]
        axis = p1 - p0
        length = float(np.linalg.norm(axis))
        if length < ZERO_LENGTH:
            skipped += 1
            continue
        node_radius[a] = max(node_radius[a], r)
        node_radius[b] = max(node_radius[b], r)
        u = axis / length
        e1, e2 = _perp_basis(u)
        ring = r * (np.outer(cos_a, e1) + np.outer(sin_a, e2))
        verts.append(p0 + ring)
        verts.append(p1 + ring)
        quads = []
        for k in range(sides):
            k2 = (k + 1) % sides
            quads.append((base + k, base + k2, base + sides + k))
            quads.append((base + k2, base + sides + k2, base + sides + k))
        for k in range(1, sides - 1):
            quads.append((base, base + k + 1, base + k))            # bottom cap
            quads.append((base + sides, base + sides + k,
                          base + sides + k + 1))                    # top cap
        tris.append(np.array(quads, dtype=np.int64))
        base += 2 * sides

    for nid in range(g.num_nodes):
        if node_radius[nid] <= 0.0:
            continue
        verts.append(g.positions[nid] + node_radius[nid] * _ICO_VERTS)
        tris.append(_ICO_FACES + base)
        base += 12

    if skipped:
        warnings.warn(f"skipped {skipped} zero-length element(s)",
                      GeometryWarning)
    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.vstack(verts), np.vstack(tris))


# ---------------------------------------------------------------------------
# Writers


def write_obj(mesh: TriangleMesh, path):
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_ply(mesh: TriangleMesh, path):
    """Binary little-endian PLY."""
    header = "\n".join([
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        if len(mesh.triangles):
            counts = np.full((len(mesh.triangles), 1), 3, dtype=np.uint8)
            faces = mesh.triangles.astype("<i4")
            rec = np.empty(len(faces), dtype=[("n", "u1"), ("idx", "<i4", 3)])
            rec["n"] = counts[:, 0]
            rec["idx"] = faces
            fh.write(rec.tobytes())


def write_lines_obj(g: TrussGraph, path):
    """Line-segment OBJ of the bare graph for visualization."""
    lines = []
    for v in g.positions:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for a, b in g.elements:
        lines.append(f"l {a + 1} {b + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
