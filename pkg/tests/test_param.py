import numpy as np
import pytest

from stresstruss.errors import ConfigError, NumericalError
from stresstruss.fem import cauchy_stress, solve_static, stress_spd
from stresstruss.fixtures import bar_mesh, box_mesh, unit_cube_mesh
from stresstruss.frames import fit_frame_field, rotations_from_axis_vectors
from stresstruss.mesh import TetMesh, build_operators
from stresstruss.param import (
    Parametrization,
    directional_gradient,
    evaluate_objective,
    normalize_and_scale,
    solve_parametrization,
)

from test_fem import MAT, patch_test_bcs


def identity_frames(m):
    return np.broadcast_to(np.eye(3), (m, 3, 3)).copy()


def test_directional_gradient_examples():
    mesh = box_mesh((2, 2, 2), jitter=0.07)
    ops = build_operators(mesh)
    m = mesh.num_tets
    f = mesh.vertices[:, 0]
    e1 = np.tile([1.0, 0.0, 0.0], (m, 1))
    e2 = np.tile([0.0, 1.0, 0.0], (m, 1))
    np.testing.assert_allclose(directional_gradient(ops, e1) @ f, 1.0, atol=1e-12)
    np.testing.assert_allclose(directional_gradient(ops, e2) @ f, 0.0, atol=1e-12)

    rng = np.random.default_rng(13)
    a = rng.standard_normal(3)
    fa = mesh.vertices @ a
    v = rng.standard_normal((m, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    np.testing.assert_allclose(
        directional_gradient(ops, v) @ fa, v @ a, atol=1e-12 * max(1, np.abs(a).max())
    )
    with pytest.raises(ConfigError):
        directional_gradient(ops, v[:-1])


def test_identity_frames_exact_fit():
    mesh = unit_cube_mesh(3, jitter=0.06)
    ops = build_operators(mesh)
    frames = identity_frames(mesh.num_tets)
    p = solve_parametrization(mesh, frames, beta=1.0, ops=ops)
    # phi = x + const: mean-zero gauge pins the constant.
    expected = mesh.vertices - mesh.vertices.mean(axis=0)
    np.testing.assert_allclose(p.phi, expected, atol=1e-8)
    assert evaluate_objective(ops, frames, p.phi, 1.0) <= 1e-10
    assert np.abs(p.phi.mean(axis=0)).max() <= 1e-10


def test_constant_rotation_equivariance():
    mesh = unit_cube_mesh(2, jitter=0.09)
    ops = build_operators(mesh)
    base = solve_parametrization(mesh, identity_frames(mesh.num_tets), ops=ops)
    R0 = rotations_from_axis_vectors(np.array([[0.4, -0.3, 0.8]]))[0]
    rotated = np.broadcast_to(R0, (mesh.num_tets, 3, 3)).copy()
    p = solve_parametrization(mesh, rotated, ops=ops)
    np.testing.assert_allclose(p.phi, base.phi @ R0, atol=1e-8)


def test_quadratic_optimality_random_perturbations():
    rng = np.random.default_rng(29)
    mesh = box_mesh((2, 1, 2), jitter=0.1)
    ops = build_operators(mesh)
    s = rng.standard_normal((mesh.num_tets, 3)) * 0.2
    frames = rotations_from_axis_vectors(s)
    p = solve_parametrization(mesh, frames, beta=1.0, ops=ops)
    base = evaluate_objective(ops, frames, p.phi, 1.0)
    for _ in range(20):
        d = rng.standard_normal(p.phi.shape)
        d -= d.mean(axis=0)                 # stay inside the gauge
        d *= 1e-3 / np.linalg.norm(d)
        assert evaluate_objective(ops, frames, p.phi + d, 1.0) >= base


def test_beta_tradeoff_monotone():
    # Curl-bearing frame field: rotation angle varies with x.
    mesh = box_mesh((3, 2, 2), jitter=0.05)
    ops = build_operators(mesh)
    centers = mesh.vertices[mesh.tets].mean(axis=1)
    s = np.stack([np.zeros(len(centers)), np.zeros(len(centers)),
                  1.5 * centers[:, 0]], axis=1)
    frames = rotations_from_axis_vectors(s)
    D, O = None, None
    spacing, ortho = [], []
    for beta in (0.1, 1.0, 10.0):
        p = solve_parametrization(mesh, frames, beta=beta, ops=ops)
        x = p.phi.T.ravel()
        from stresstruss.param import objective_terms
        D, O = objective_terms(ops, frames)
        rd = D @ x - 1.0
        spacing.append(float(rd @ rd))
        ro = O @ x
        ortho.append(float(ro @ ro))
    assert spacing[0] >= spacing[1] >= spacing[2]
    assert ortho[0] <= ortho[1] <= ortho[2]
    assert spacing[0] > spacing[2]          # the trade-off actually moves


def test_disconnected_mesh_rejected():
    a = box_mesh((1, 1, 1))
    verts = np.vstack([a.vertices, a.vertices + [5.0, 0, 0]])
    tets = np.vstack([a.tets, a.tets + a.num_vertices])
    mesh = TetMesh(verts, tets)
    with pytest.raises(NumericalError, match="disconnected|singular"):
        solve_parametrization(mesh, identity_frames(mesh.num_tets))


def test_normalize_and_scale_rule():
    phi = np.array([
        [2.0, 0.0, 1.0],
        [5.0, 1.0, 2.0],
        [3.5, 0.25, 1.25],
    ])
    p = Parametrization(phi=phi, beta=1.0)
    out = normalize_and_scale(p, 10.0)
    t = out.phi_tilde
    np.testing.assert_allclose(t.min(axis=0), 0.0, atol=1e-15)
    np.testing.assert_allclose(t.max(axis=0), [10.0, 10.0 / 3.0, 10.0 / 3.0],
                               rtol=1e-12)
    # Doubling rho doubles every value.
    out2 = normalize_and_scale(Parametrization(phi=phi, beta=1.0), 20.0)
    np.testing.assert_allclose(out2.phi_tilde, 2.0 * t, rtol=1e-12)


def test_normalize_identity_range():
    rng = np.random.default_rng(4)
    phi = rng.uniform(0.0, 1.0, size=(40, 3))
    phi[0] = [0.0, 0.0, 0.0]
    phi[1] = [1.0, 0.7, 0.4]            # max range exactly 1 in component 1
    p = normalize_and_scale(Parametrization(phi=phi, beta=1.0), 1.0)
    np.testing.assert_allclose(p.phi_tilde, phi - phi.min(axis=0), rtol=1e-12)


def test_normalize_constant_error():
    p = Parametrization(phi=np.ones((5, 3)), beta=1.0)
    with pytest.raises(NumericalError, match="constant"):
        normalize_and_scale(p, 10.0)
    with pytest.raises(ConfigError):
        normalize_and_scale(Parametrization(phi=np.eye(3), beta=1.0), 0.0)


def test_bar_alignment_median_angle():
    mesh = bar_mesh(jitter=0.1)
    bcs = patch_test_bcs(mesh, 0.2, 1.0e6)
    u = solve_static(mesh, MAT, bcs)
    stress = stress_spd(cauchy_stress(mesh, MAT, u))
    field = fit_frame_field(mesh, stress)
    ops = build_operators(mesh)
    p = normalize_and_scale(solve_parametrization(mesh, field, ops=ops), 10.0)
    g1 = np.stack([
        ops.Gx @ p.phi_tilde[:, 0],
        ops.Gy @ p.phi_tilde[:, 0],
        ops.Gz @ p.phi_tilde[:, 0],
    ], axis=1)
    r1 = field.frames[:, :, 0]
    cosang = np.einsum("ti,ti->t", g1, r1) / np.linalg.norm(g1, axis=1)
    angles = np.degrees(np.arccos(np.clip(np.abs(cosang), -1.0, 1.0)))
    assert np.median(angles) <= 5.0
