import numpy as np
import pytest

from stresstruss.errors import ConfigError, NumericalError
from stresstruss.fem import (
    BoundaryConditions,
    Dirichlet,
    Material,
    Neumann,
    StressField,
    assemble_loads,
    assemble_stiffness,
    cauchy_stress,
    prescribed_dofs,
    select_boundary_faces,
    select_vertices,
    solve_static,
    stress_spd,
)
from stresstruss.fixtures import bar_mesh, box_mesh, unit_cube_mesh

MAT = Material(young_modulus=2.3e9, poisson_ratio=0.35, density=1040.0,
               yield_strength=48e6)


def vertex_at(mesh, point):
    d = np.linalg.norm(mesh.vertices - np.asarray(point, dtype=float), axis=1)
    i = int(np.argmin(d))
    assert d[i] < 1e-9
    return i


def patch_test_bcs(mesh, length, traction):
    """Roller on -x face plus pins; total traction force on +x face."""
    eps = 1e-9
    ymax = mesh.vertices[:, 1].max()
    area = (mesh.vertices[:, 1].max() - mesh.vertices[:, 1].min()) * (
        mesh.vertices[:, 2].max() - mesh.vertices[:, 2].min()
    )
    return BoundaryConditions(
        dirichlet=[
            Dirichlet({"type": "box", "min": [-eps, -1, -1], "max": [eps, 1, 1]},
                      axes=(True, False, False)),
            Dirichlet({"type": "indices", "values": [vertex_at(mesh, (0, 0, 0))]},
                      axes=(False, True, True)),
            Dirichlet({"type": "indices", "values": [vertex_at(mesh, (0, ymax, 0))]},
                      axes=(False, False, True)),
        ],
        neumann=[
            Neumann({"type": "box", "min": [length - eps, -1, -1],
                     "max": [length + eps, 1, 1]},
                    force=(traction * area, 0.0, 0.0)),
        ],
    )


def test_material_validation():
    with pytest.raises(ConfigError):
        Material(young_modulus=-1.0, poisson_ratio=0.3)
    with pytest.raises(ConfigError):
        Material(young_modulus=1.0, poisson_ratio=0.5)
    with pytest.raises(ConfigError):
        Material(young_modulus=1.0, poisson_ratio=0.3, yield_strength=0.0)


def test_selectors():
    mesh = unit_cube_mesh(2)
    vs = select_vertices(mesh, {"type": "box", "min": [-1, -1, -1], "max": [0, 2, 2]})
    assert len(vs) == 9                       # the x=0 face of a 3x3x3 grid
    vs2 = select_vertices(mesh, {"type": "sphere", "center": [0, 0, 0], "radius": 0.01})
    assert len(vs2) == 1
    faces = select_boundary_faces(
        mesh, {"type": "box", "min": [-1, -1, -1], "max": [0, 2, 2]}
    )
    assert len(faces) == 8                    # 2x2 cells, 2 triangles each
    with pytest.raises(ConfigError):
        select_vertices(mesh, {"type": "nope"})
    with pytest.raises(ConfigError):
        select_vertices(mesh, {"type": "indices", "values": [10**6]})


def test_zero_load_zero_displacement():
    mesh = unit_cube_mesh(2)
    bcs = BoundaryConditions(
        dirichlet=[Dirichlet({"type": "box", "min": [-1, -1, -1], "max": [0, 2, 2]})]
    )
    u = solve_static(mesh, MAT, bcs)
    assert np.abs(u).max() == 0.0


def test_uniaxial_patch_test():
    t = 1.0e6                                      # Pa
    mesh = bar_mesh(jitter=0.1)
    bcs = patch_test_bcs(mesh, 0.2, t)
    u = solve_static(mesh, MAT, bcs)
    E, nu = MAT.young_modulus, MAT.poisson_ratio
    x = mesh.vertices
    expected = np.stack(
        [t * x[:, 0] / E, -nu * t * x[:, 1] / E, -nu * t * x[:, 2] / E], axis=1
    )
    scale = np.abs(expected).max()
    assert np.abs(u - expected).max() <= 1e-6 * scale

    field = cauchy_stress(mesh, MAT, u)
    target = np.zeros((3, 3))
    target[0, 0] = t
    assert np.abs(field.sigma - target).max() <= 1e-6 * t


def test_rigid_translation_reproduction():
    mesh = unit_cube_mesh(3, jitter=0.1)
    shift = (0.01, -0.02, 0.003)
    bnd = np.unique(mesh.boundary.triangles)
    bcs = BoundaryConditions(
        dirichlet=[Dirichlet({"type": "indices", "values": bnd.tolist()}, value=shift)]
    )
    u = solve_static(mesh, MAT, bcs)
    np.testing.assert_allclose(u, np.broadcast_to(shift, u.shape), atol=1e-12)
    field = cauchy_stress(mesh, MAT, u)
    assert np.abs(field.sigma).max() <= 1e-4      # Pa, vs E = 2.3e9


def test_rigid_rotation_small_stress():
    mesh = unit_cube_mesh(2, jitter=0.05)
    theta = 1e-6
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    bnd = np.unique(mesh.boundary.triangles)
    disp = mesh.vertices @ R.T - mesh.vertices
    bcs = BoundaryConditions(
        dirichlet=[
            Dirichlet({"type": "indices", "values": [int(v)]}, value=tuple(disp[v]))
            for v in bnd
        ]
    )
    u = solve_static(mesh, MAT, bcs)
    field = cauchy_stress(mesh, MAT, u)
    assert np.abs(field.sigma).max() <= 10 * theta**2 * MAT.young_modulus


def test_global_equilibrium():
    mesh = bar_mesh(jitter=0.08)
    bcs = BoundaryConditions(
        dirichlet=[Dirichlet({"type": "box", "min": [-1, -1, -1],
                              "max": [1e-9, 1, 1]})],
        neumann=[Neumann({"type": "box", "min": [0.2 - 1e-9, -1, -1],
                          "max": [1, 1, 1]}, force=(30.0, -80.0, 55.0))],
        gravity=(0.0, 0.0, -9.81),
    )
    u = solve_static(mesh, MAT, bcs)
    K = assemble_stiffness(mesh, MAT)
    f = assemble_loads(mesh, MAT, bcs)
    reactions = np.asarray(K @ u.ravel() - f)
    fixed, _ = prescribed_dofs(mesh, bcs)
    mask = np.zeros(len(f), dtype=bool)
    mask[fixed] = True
    total = (f + np.where(mask, reactions, 0.0)).reshape(-1, 3).sum(axis=0)
    applied = np.abs(f.reshape(-1, 3).sum(axis=0))
    assert np.abs(total).max() <= 1e-8 * max(applied.max(), 1.0)


def test_underconstrained_rejected():
    mesh = unit_cube_mesh(1)
    bcs = BoundaryConditions(
        dirichlet=[Dirichlet({"type": "indices", "values": [0]})]
    )
    with pytest.raises(ConfigError, match="6"):
        solve_static(mesh, MAT, bcs)


def test_singular_names_rigid_mode():
    mesh = bar_mesh()
    i0 = vertex_at(mesh, (0, 0, 0))
    i1 = vertex_at(mesh, (0.2, 0, 0))
    # Two pins on the x-axis leave rotation about that line free; the +y load
    # torques about it, so the system has no solution.
    bcs = BoundaryConditions(
        dirichlet=[Dirichlet({"type": "indices", "values": [i0, i1]})],
        neumann=[Neumann({"type": "box", "min": [0.2 - 1e-9, -1, -1],
                          "max": [1, 1, 1]}, force=(0.0, 5.0, 0.0))],
    )
    with pytest.raises(NumericalError, match="rotation-x"):
        solve_static(mesh, MAT, bcs)


def test_empty_selector_rejected():
    mesh = unit_cube_mesh(1)
    bcs = BoundaryConditions(
        dirichlet=[Dirichlet({"type": "sphere", "center": [9, 9, 9], "radius": 0.1})]
    )
    with pytest.raises(ConfigError, match="no vertices"):
        solve_static(mesh, MAT, bcs)
    bcs2 = BoundaryConditions(
        dirichlet=[Dirichlet({"type": "box", "min": [-1, -1, -1], "max": [0, 2, 2]})],
        neumann=[Neumann({"type": "sphere", "center": [9, 9, 9], "radius": 0.1},
                         force=(1, 0, 0))],
    )
    with pytest.raises(ConfigError, match="no boundary faces"):
        solve_static(mesh, MAT, bcs2)


def test_stress_spd_example_tensor():
    # One diag(3,-2,1) tensor; |eigenvalues| range [1,3] maps to [1,30].
    sigma = np.diag([3.0, -2.0, 1.0])[None]
    w, v = np.linalg.eigh(sigma)
    field = StressField(sigma=sigma, eigenvectors=v[:, :, ::-1].copy(),
                        eigenvalues=w[:, ::-1].copy())
    out = stress_spd(field)
    np.testing.assert_allclose(out.sigma_plus[0], np.diag([30.0, 15.5, 1.0]),
                               atol=1e-12)


def test_stress_spd_degenerate_range():
    sigma = np.stack([np.diag([2.0, -2.0, 2.0]), np.diag([-2.0, 2.0, 2.0])])
    w, v = np.linalg.eigh(sigma)
    field = StressField(sigma=sigma, eigenvectors=v[:, :, ::-1].copy(),
                        eigenvalues=w[:, ::-1].copy())
    out = stress_spd(field)
    for s in out.sigma_plus:
        np.testing.assert_allclose(s, 15.5 * np.eye(3), atol=1e-12)


def test_stress_spd_random_fields():
    rng = np.random.default_rng(11)
    for _ in range(20):
        m = rng.integers(2, 40)
        A = rng.standard_normal((m, 3, 3))
        sigma = 0.5 * (A + np.transpose(A, (0, 2, 1))) * 10.0 ** rng.integers(-3, 6)
        w, v = np.linalg.eigh(sigma)
        field = StressField(sigma=sigma, eigenvectors=v[:, :, ::-1].copy(),
                            eigenvalues=w[:, ::-1].copy())
        out = stress_spd(field)
        ev = np.linalg.eigvalsh(out.sigma_plus)
        assert ev.min() >= 1.0 - 1e-9
        assert ev.max() <= 30.0 + 1e-9
        # Eigenvector preservation at the mapped eigenvalue.
        for t in range(m):
            for k in range(3):
                vec = out.eigenvectors[t, :, k]
                lam = out.eigenvalues_plus[t, k]
                assert np.linalg.norm(out.sigma_plus[t] @ vec - lam * vec) <= 1e-8
        # Monotone map: ordering of |eigenvalues| is preserved.
        order = np.argsort(np.abs(field.eigenvalues), axis=1)
        mapped = np.take_along_axis(out.eigenvalues_plus, order, axis=1)
        assert (np.diff(mapped, axis=1) >= -1e-12).all()


def test_stress_spd_null_field():
    sigma = np.zeros((3, 3, 3))
    w, v = np.linalg.eigh(sigma)
    field = StressField(sigma=sigma, eigenvectors=v, eigenvalues=w)
    with pytest.raises(NumericalError, match="null stress field"):
        stress_spd(field)


def test_gravity_only_load_vector():
    mesh = unit_cube_mesh(2)
    bcs = BoundaryConditions(gravity=(0.0, 0.0, -9.81))
    f = assemble_loads(mesh, MAT, bcs)
    fz = f.reshape(-1, 3)[:, 2].sum()
    assert fz == pytest.approx(-9.81 * MAT.density * mesh.volumes.sum(), rel=1e-12)
    assert np.abs(f.reshape(-1, 3)[:, :2]).max() == 0.0
