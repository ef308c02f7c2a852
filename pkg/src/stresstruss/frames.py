"""Stress-aligned orthonormal frame fields.

Frames are parameterized by one 3-vector per vertex; each tet's rotation is
the matrix exponential of the cross-product matrix of the sum of its four
vertex vectors. The data term pulls the second and third frame columns into
the minor-eigenvector plane of the SPD stress surrogate; a Laplacian term
plus a Tikhonov term keep the vertex field tame. The annealing loop starts
smoothness-heavy and relaxes it by a fixed factor each outer iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import lbfgs
from .errors import ConfigError, NumericalError
from .fem import StressField
from .mesh import TetMesh

# Below this rotation angle the Rodrigues coefficients switch to series form.
SMALL_ANGLE = 1e-4

# Replacement magnitude for zero-length vertex vectors before differentiation.
ZERO_OMEGA_EPS = float(np.sqrt(np.finfo(np.float64).eps))

# Cross-product generators: _GEN[m] @ v == e_m x v.
_GEN = np.zeros((3, 3, 3))
_GEN[0, 1, 2] = -1.0
_GEN[0, 2, 1] = 1.0
_GEN[1, 0, 2] = 1.0
_GEN[1, 2, 0] = -1.0
_GEN[2, 0, 1] = -1.0
_GEN[2, 1, 0] = 1.0


@dataclass
class FrameFitConfig:
    outer_iterations: int = 30
    alpha0_factor: float = 10.0
    alpha_decay: float = 2.0 / 3.0
    memory: int = 10
    gtol: float = 1e-6
    max_inner_iterations: int = 500
    line_search_retries: int = 5
    early_stop: bool = True
    early_stop_tol: float = 1e-10
    early_stop_patience: int = 3


@dataclass
class FrameField:
    omega: np.ndarray                  # (n, 3) per-vertex parameters
    frames: np.ndarray                 # (m, 3, 3) rotations, columns r1,r2,r3
    alpha_history: list[tuple[float, float]] = field(default_factory=list)


def tensor_norm(v: np.ndarray, M: np.ndarray) -> float:
    """sqrt(|v^T M v|) for a unit vector v."""
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ConfigError("tensor_norm requires a unit vector")
    return float(np.sqrt(abs(v @ np.asarray(M, dtype=float) @ v)))


def perturb_zero_rows(omega: np.ndarray) -> np.ndarray:
    """Replace zero-length rows so the rotation gradient is well defined."""
    omega = np.asarray(omega, dtype=float)
    zero = np.linalg.norm(omega, axis=1) == 0.0
    if zero.any():
        omega = omega.copy()
        omega[zero] = (ZERO_OMEGA_EPS, 0.0, 0.0)
    return omega


def _rodrigues_coefficients(theta: np.ndarray):
    """a = sin t / t, b = (1 - cos t) / t^2, and their derivative ratios
    ca = a'(t)/t, cb = b'(t)/t, with series for small t."""
    t2 = theta * theta
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
                 (1.0 - np.cos(safe)) / (safe * safe))
    ca = np.where(small, -1.0 / 3.0 + t2 / 30.0,
                  (safe * np.cos(safe) - np.sin(safe)) / safe**3)
    cb = np.where(small, -1.0 / 12.0 + t2 / 180.0,
                  (safe * np.sin(safe) + 2.0 * np.cos(safe) - 2.0) / safe**4)
    return a, b, ca, cb


def _cross_matrices(s: np.ndarray) -> np.ndarray:
    K = np.zeros(s.shape[:-1] + (3, 3))
    K[..., 0, 1] = -s[..., 2]
    K[..., 0, 2] = s[..., 1]
    K[..., 1, 0] = s[..., 2]
    K[..., 1, 2] = -s[..., 0]
    K[..., 2, 0] = -s[..., 1]
    K[..., 2, 1] = s[..., 0]
    return K


def rotations_from_axis_vectors(s: np.ndarray) -> np.ndarray:
    """Batch closed-form exp of cross-product matrices, shape (m, 3, 3)."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    theta = np.linalg.norm(s, axis=1)
    a, b, _, _ = _rodrigues_coefficients(theta)
    K = _cross_matrices(s)
    K2 = K @ K
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2


def frame_from_omega(omega_tet: np.ndarray) -> np.ndarray:
    """Rotation of one tet from its four per-vertex parameter vectors."""
    omega_tet = np.asarray(omega_tet, dtype=float).reshape(4, 3)
    s = perturb_zero_rows(omega_tet).sum(axis=0)
    return rotations_from_axis_vectors(s[None])[0]


def tet_frames(omega: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """All tet rotations from the per-vertex field, shape (m, 3, 3)."""
    omega = perturb_zero_rows(omega)
    s = omega[tets].sum(axis=1)
    return rotations_from_axis_vectors(s)


def data_energy(R: np.ndarray, sigma_plus: np.ndarray) -> float:
    """Alignment cost of one frame: tensor norms of the 2nd and 3rd columns."""
    R = np.asarray(R, dtype=float)
    M = np.asarray(sigma_plus, dtype=float)
    q2 = R[:, 1] @ M @ R[:, 1]
    q3 = R[:, 2] @ M @ R[:, 2]
    return float(np.sqrt(abs(q2)) + np.sqrt(abs(q3)))


def smooth_energy(omega: np.ndarray, L: sp.spmatrix) -> float:
    """0.5 w^T L w (blockwise per coordinate) + 0.5 w^T w."""
    omega = np.asarray(omega, dtype=float)
    lap = sum(0.5 * float(omega[:, c] @ (L @ omega[:, c])) for c in range(3))
    return lap + 0.5 * float((omega * omega).sum())


def _data_energy_grad_s(s: np.ndarray, M: np.ndarray):
    """Total data energy and its gradient w.r.t. the per-tet axis vectors.

    s: (m, 3) per-tet parameter sums, M: (m, 3, 3) SPD tensors.
    """
    theta = np.linalg.norm(s, axis=1)
    a, b, ca, cb = _rodrigues_coefficients(theta)
    K = _cross_matrices(s)
    K2 = K @ K
    R = np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2

    # Column Rayleigh quotients for columns 2 and 3.
    Mr = np.einsum("tij,tjk->tik", M, R)              # M @ R
    q = np.einsum("tik,tik->tk", R, Mr)               # q_k = r_k^T M r_k
    sq = np.sqrt(np.abs(q[:, 1:]))                    # (m, 2)
    energy = float(sq.sum())

    # dE/dR has nonzero columns 2,3: sign(q_k) M r_k / sqrt|q_k|.
    D = np.zeros_like(R)
    D[:, :, 1:] = np.sign(q[:, None, 1:]) * Mr[:, :, 1:] / sq[:, None, :]

    # dR/ds_m = ca s_m K + a E_m + cb s_m K^2 + b (E_m K + K E_m).
    EK = np.einsum("mij,tjk->tmik", _GEN, K)
    KE = np.einsum("tij,mjk->tmik", K, _GEN)
    dRds = (
        ca[:, None, None, None] * s[:, :, None, None] * K[:, None, :, :]
        + a[:, None, None, None] * _GEN[None, :, :, :]
        + cb[:, None, None, None] * s[:, :, None, None] * K2[:, None, :, :]
        + b[:, None, None, None] * (EK + KE)
    )
    grad_s = np.einsum("tik,tmik->tm", D, dRds)
    return energy, grad_s, R


def total_energy_grad(
    omega: np.ndarray,
    stress: StressField,
    alpha: float,
    tets: np.ndarray,
    L: sp.spmatrix,
):
    """Data + alpha * smoothness energy and its per-vertex gradient.

    Zero-length vertex vectors are perturbed before differentiation, so the
    gradient is defined everywhere, including the all-zero start.
    """
    if stress.sigma_plus is None:
        raise ConfigError("stress field lacks the SPD surrogate")
    omega = perturb_zero_rows(np.asarray(omega, dtype=float))
    s = omega[tets].sum(axis=1)
    e_data, grad_s, _ = _data_energy_grad_s(s, stress.sigma_plus)

    grad = np.zeros_like(omega)
    np.add.at(grad, tets.ravel(), np.repeat(grad_s, 4, axis=0).reshape(-1, 3))

    e_smooth = smooth_energy(omega, L)
    grad += alpha * (np.column_stack([L @ omega[:, c] for c in range(3)]) + omega)
    return e_data + alpha * e_smooth, grad


def data_energy_total(omega: np.ndarray, stress: StressField, tets: np.ndarray) -> float:
    omega = perturb_zero_rows(np.asarray(omega, dtype=float))
    s = omega[tets].sum(axis=1)
    R = rotations_from_axis_vectors(s)
    Mr = np.einsum("tij,tjk->tik", stress.sigma_plus, R)
    q = np.einsum("tik,tik->tk", R, Mr)
    return float(np.sqrt(np.abs(q[:, 1:])).sum())


def fit_frame_field(
    mesh: TetMesh,
    stress: StressField,
    config: FrameFitConfig | None = None,
    L: sp.spmatrix | None = None,
) -> FrameField:
    """Annealed fit: repeated warm-started quasi-Newton solves while the
    smoothness weight decays geometrically from alpha0_factor * num_tets.
    """
    from .mesh import build_operators

    cfg = config or FrameFitConfig()
    if stress.sigma_plus is None:
        raise ConfigError("stress field lacks the SPD surrogate")
    if L is None:
        L = build_operators(mesh).L
    tets = mesh.tets
    n = mesh.num_vertices

    omega = np.zeros((n, 3))
    alpha = cfg.alpha0_factor * mesh.num_tets
    history: list[tuple[float, float]] = []
    stall = 0

    for outer in range(cfg.outer_iterations):
        def fun(x, _alpha=alpha):
            e, g = total_energy_grad(x.reshape(n, 3), stress, _alpha, tets, L)
            return e, g.ravel()

        result = None
        failure = None
        for attempt in range(cfg.line_search_retries + 1):
            try:
                result = lbfgs.minimize(
                    fun,
                    omega.ravel(),
                    memory=cfg.memory,
                    gtol=cfg.gtol,
                    max_iterations=cfg.max_inner_iterations,
                    initial_step=1.0 / (2.0 ** attempt),
                )
                break
            except lbfgs.LineSearchError as exc:
                failure = exc
        if result is None:
            raise NumericalError(
                f"line search failed persistently at outer iteration {outer} "
                f"(alpha={alpha:.6g}); last diagnostics: {failure.diagnostics}"
            )
        omega = result.x.reshape(n, 3)

        e_data = data_energy_total(omega, stress, tets)
        history.append((alpha, e_data))
        if len(history) > 1:
            prev = history[-2][1]
            rel = (prev - e_data) / max(abs(prev), 1e-300)
            stall = stall + 1 if rel < cfg.early_stop_tol else 0
        if cfg.early_stop and stall >= cfg.early_stop_patience:
            break
        alpha *= cfg.alpha_decay

    frames = tet_frames(omega, tets)
    return FrameField(omega=omega, frames=frames, alpha_history=history)
