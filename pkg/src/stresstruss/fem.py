"""Linear elastic static FEM on tet meshes.

P1 elements with constant strain per tet. Produces the per-tet Cauchy stress
field and its SPD rescaled surrogate that the frame-field stage aligns to.
All solves are direct and deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalError
from .mesh import TetMesh, shape_gradients

# Field-wide |eigenvalue| target range of the SPD stress surrogate.
SPD_RANGE = (1.0, 30.0)


@dataclass
class Material:
    young_modulus: float            # Pa
    poisson_ratio: float
    density: float = 0.0            # kg/m^3, used only for gravity loads
    yield_strength: float = 1.0     # Pa

    def __post_init__(self):
        if self.young_modulus <= 0:
            raise ConfigError("young_modulus must be positive")
        if not (-1.0 < self.poisson_ratio < 0.5):
            raise ConfigError("poisson_ratio must lie in (-1, 0.5)")
        if self.yield_strength <= 0:
            raise ConfigError("yield_strength must be positive")

    @property
    def lame(self) -> tuple[float, float]:
        E, nu = self.young_modulus, self.poisson_ratio
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        return lam, mu

    def elasticity_voigt(self) -> np.ndarray:
        """6x6 isotropic stiffness, Voigt order (xx, yy, zz, yz, xz, xy)."""
        lam, mu = self.lame
        C = np.zeros((6, 6))
        C[:3, :3] = lam
        C[np.arange(3), np.arange(3)] += 2 * mu
        C[3:, 3:] = np.eye(3) * mu
        return C


@dataclass
class Dirichlet:
    selector: dict
    axes: tuple[bool, bool, bool] = (True, True, True)
    value: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class Neumann:
    selector: dict
    force: tuple[float, float, float] = (0.0, 0.0, 0.0)   # total force, N


@dataclass
class BoundaryConditions:
    dirichlet: list[Dirichlet] = field(default_factory=list)
    neumann: list[Neumann] = field(default_factory=list)
    gravity: tuple[float, float, float] | None = None


@dataclass
class StressField:
    sigma: np.ndarray                       # (m, 3, 3) Cauchy, Pa
    eigenvectors: np.ndarray                # (m, 3, 3), columns, decreasing lam
    eigenvalues: np.ndarray                 # (m, 3), decreasing
    sigma_plus: np.ndarray | None = None    # (m, 3, 3) SPD surrogate
    eigenvalues_plus: np.ndarray | None = None   # (m, 3), same column order as Q


# ---------------------------------------------------------------------------
# Selectors


def select_vertices(mesh: TetMesh, selector: dict) -> np.ndarray:
    """Vertex ids matched by a box/sphere/indices selector."""
    kind = selector.get("type")
    v = mesh.vertices
    if kind == "box":
        lo = np.asarray(selector["min"], dtype=float)
        hi = np.asarray(selector["max"], dtype=float)
        mask = ((v >= lo) & (v <= hi)).all(axis=1)
        return np.nonzero(mask)[0]
    if kind == "sphere":
        c = np.asarray(selector["center"], dtype=float)
        r = float(selector["radius"])
        return np.nonzero(np.linalg.norm(v - c, axis=1) <= r)[0]
    if kind == "indices":
        ids = np.asarray(selector["values"], dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(v)):
            raise ConfigError("vertex index selector out of range")
        return np.unique(ids)
    raise ConfigError(f"unknown selector type {kind!r}")


def select_boundary_faces(mesh: TetMesh, selector: dict) -> np.ndarray:
    """Boundary-triangle ids whose three vertices all match the selector.

    An ``indices`` selector addresses boundary triangles directly.
    """
    if selector.get("type") == "indices":
        ids = np.asarray(selector["values"], dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(mesh.boundary.triangles)):
            raise ConfigError("face index selector out of range")
        return np.unique(ids)
    vids = select_vertices(mesh, selector)
    mask = np.zeros(mesh.num_vertices, dtype=bool)
    mask[vids] = True
    tri = mesh.boundary.triangles
    return np.nonzero(mask[tri].all(axis=1))[0]


# ---------------------------------------------------------------------------
# Assembly and solve


def assemble_stiffness(mesh: TetMesh, material: Material) -> sp.csr_matrix:
    """Global 3n x 3n stiffness, DOF order (v0x, v0y, v0z, v1x, ...)."""
    g = shape_gradients(mesh)                       # (m, 4, 3)
    m = mesh.num_tets
    B = np.zeros((m, 6, 12))
    for i in range(4):
        c = 3 * i
        B[:, 0, c + 0] = g[:, i, 0]
        B[:, 1, c + 1] = g[:, i, 1]
        B[:, 2, c + 2] = g[:, i, 2]
        B[:, 3, c + 1] = g[:, i, 2]
        B[:, 3, c + 2] = g[:, i, 1]
        B[:, 4, c + 0] = g[:, i, 2]
        B[:, 4, c + 2] = g[:, i, 0]
        B[:, 5, c + 0] = g[:, i, 1]
        B[:, 5, c + 1] = g[:, i, 0]
    C = material.elasticity_voigt()
    ke = np.einsum("t,tki,kl,tlj->tij", mesh.volumes, B, C, B, optimize=True)

    dof = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(m, 12)
    rows = np.repeat(dof, 12, axis=1).ravel()
    cols = np.tile(dof, (1, 12)).ravel()
    n3 = 3 * mesh.num_vertices
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n3, n3))
    K.sum_duplicates()
    return ((K + K.T) * 0.5).tocsr()


def assemble_loads(mesh: TetMesh, material: Material, bcs: BoundaryConditions) -> np.ndarray:
    f = np.zeros(3 * mesh.num_vertices)
    for nm in bcs.neumann:
        faces = select_boundary_faces(mesh, nm.selector)
        if len(faces) == 0:
            raise ConfigError("Neumann selector matched no boundary faces")
        tri = mesh.boundary.triangles[faces]
        p = mesh.vertices[tri]
        areas = 0.5 * np.linalg.norm(
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1
        )
        total = areas.sum()
        if total <= 0:
            raise ConfigError("Neumann selector matched zero-area faces")
        F = np.asarray(nm.force, dtype=float)
        # Force split over faces by area, then a third to each face vertex.
        per_face = areas[:, None] / total * F            # (k, 3)
        for c in range(3):
            np.add.at(f, 3 * tri.ravel() + c, np.repeat(per_face[:, c] / 3.0, 3))
    if bcs.gravity is not None:
        gvec = np.asarray(bcs.gravity, dtype=float)
        per_tet = material.density * mesh.volumes[:, None] * gvec   # (m, 3)
        for c in range(3):
            np.add.at(f, 3 * mesh.tets.ravel() + c, np.repeat(per_tet[:, c] / 4.0, 4))
    return f


def prescribed_dofs(mesh: TetMesh, bcs: BoundaryConditions) -> tuple[np.ndarray, np.ndarray]:
    """Constrained DOF ids and values; later entries override earlier ones."""
    value_map: dict[int, float] = {}
    for d in bcs.dirichlet:
        vids = select_vertices(mesh, d.selector)
        if len(vids) == 0:
            raise ConfigError("Dirichlet selector matched no vertices")
        val = np.asarray(d.value, dtype=float)
        for axis in range(3):
            if d.axes[axis]:
                for v in vids:
                    value_map[3 * int(v) + axis] = float(val[axis])
    if len(value_map) < 6:
        raise ConfigError(
            f"need at least 6 constrained scalar DOFs, got {len(value_map)}"
        )
    ids = np.array(sorted(value_map), dtype=np.int64)
    vals = np.array([value_map[i] for i in ids])
    return ids, vals


_RIGID_NAMES = (
    "translation-x", "translation-y", "translation-z",
    "rotation-x", "rotation-y", "rotation-z",
)


def _rigid_modes(vertices: np.ndarray) -> np.ndarray:
    """Six rigid-body displacement fields, shape (6, 3n)."""
    n = len(vertices)
    c = vertices.mean(axis=0)
    x = vertices - c
    modes = np.zeros((6, n, 3))
    for a in range(3):
        modes[a, :, a] = 1.0
    axes = np.eye(3)
    for a in range(3):
        modes[3 + a] = np.cross(axes[a], x)
    return modes.reshape(6, -1)


def solve_static(mesh: TetMesh, material: Material, bcs: BoundaryConditions) -> np.ndarray:
    """Static displacement field, shape (n, 3) meters.

    Raises ConfigError for under-specified constraints and NumericalError
    with the unconstrained rigid modes named when the reduced system is
    singular.
    """
    K = assemble_stiffness(mesh, material)
    f = assemble_loads(mesh, material, bcs)
    fixed, fixed_vals = prescribed_dofs(mesh, bcs)

    n3 = 3 * mesh.num_vertices
    free = np.setdiff1d(np.arange(n3), fixed, assume_unique=False)
    u = np.zeros(n3)
    u[fixed] = fixed_vals

    Kff = K[free][:, free].tocsc()
    rhs = f[free] - K[free][:, fixed] @ fixed_vals

    def singular_error():
        names = _unconstrained_modes(mesh, Kff, free)
        return NumericalError(
            "singular stiffness system; unconstrained rigid modes: " + ", ".join(names)
        )

    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            uf = spla.spsolve(Kff, rhs)
        except (spla.MatrixRankWarning, RuntimeError):
            raise singular_error() from None
    if not np.isfinite(uf).all():
        raise singular_error()

    res = Kff @ uf - rhs
    scale = max(np.abs(rhs).max(), np.abs(Kff @ uf).max(), 1e-300)
    if np.abs(res).max() > 1e-8 * scale:
        names = _unconstrained_modes(mesh, Kff, free)
        if names:
            raise singular_error()
        raise NumericalError(
            f"solver residual {np.abs(res).max() / scale:.2e} above 1e-8"
        )
    u[free] = uf
    return u.reshape(-1, 3)


def _unconstrained_modes(mesh, Kff, free) -> list[str]:
    """Names of rigid modes (or combinations) with near-zero strain energy
    on the free DOFs. Combinations cover rotations about offset axes."""
    M = _rigid_modes(mesh.vertices)[:, free]
    norms = np.linalg.norm(M, axis=1)
    norms[norms == 0] = 1.0
    M = M / norms[:, None]
    A = M @ (Kff @ M.T)
    kscale = max(np.abs(Kff.diagonal()).max(), 1e-300)
    w, v = np.linalg.eigh(A)
    selected = []
    for k in range(6):
        if w[k] < 1e-9 * kscale:
            for i in np.nonzero(np.abs(v[:, k]) > 0.3)[0]:
                if _RIGID_NAMES[i] not in selected:
                    selected.append(_RIGID_NAMES[i])
    return sorted(selected, key=_RIGID_NAMES.index)


# ---------------------------------------------------------------------------
# Stress


def cauchy_stress(mesh: TetMesh, material: Material, u: np.ndarray) -> StressField:
    """Constant Cauchy tensor per tet from linear strain of u."""
    u = np.asarray(u, dtype=float).reshape(mesh.num_vertices, 3)
    g = shape_gradients(mesh)
    H = np.einsum("tic,tid->tcd", u[mesh.tets], g)      # H[c,d] = du_c/dx_d
    eps = 0.5 * (H + np.transpose(H, (0, 2, 1)))
    lam, mu = material.lame
    tr = np.trace(eps, axis1=1, axis2=2)
    sigma = 2 * mu * eps
    sigma[:, np.arange(3), np.arange(3)] += lam * tr[:, None]
    w, v = np.linalg.eigh(sigma)                        # ascending
    return StressField(
        sigma=sigma,
        eigenvectors=v[:, :, ::-1].copy(),
        eigenvalues=w[:, ::-1].copy(),
    )


def stress_spd(field: StressField) -> StressField:
    """Populate the SPD surrogate: |eigenvalues|, then one global affine map
    of the field-wide |eigenvalue| range onto [1, 30]. Eigenvectors unchanged.
    """
    lam_abs = np.abs(field.eigenvalues)
    lo, hi = float(lam_abs.min()), float(lam_abs.max())
    if hi == 0.0:
        raise NumericalError("null stress field")
    a, b = SPD_RANGE
    if hi - lo < 1e-12 * hi:
        lam_new = np.full_like(lam_abs, 0.5 * (a + b))
    else:
        lam_new = a + (b - a) * (lam_abs - lo) / (hi - lo)
    Q = field.eigenvectors
    sigma_plus = np.einsum("tik,tk,tjk->tij", Q, lam_new, Q)
    field.sigma_plus = sigma_plus
    field.eigenvalues_plus = lam_new
    return field
