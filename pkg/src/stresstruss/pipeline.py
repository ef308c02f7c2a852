"""Staged execution: each stage reads its prerequisite artifacts from the
output directory, writes its own artifact plus a log, and records itself
in the run manifest. Artifacts and the manifest carry no timestamps, so a
re-run with an identical config is byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import artifacts
from .config import PipelineConfig, config_hash
from .errors import ArtifactError, ConfigError, NumericalError
from .extract import (
    Parametrization,
    extract_3d,
    extract_boundary,
    merge_graphs,
    perturb_parametrization,
)
from .fem import StressField, assemble_stiffness, assemble_loads, \
    cauchy_stress, solve_static, stress_spd
from .fixtures import bar_mesh, box_mesh, unit_cube_mesh
from .frames import FrameField, data_energy_total, fit_frame_field
from .mesh import TetMesh, build_operators, feature_edges, load_tet_mesh
from .param import evaluate_objective, normalize_and_scale, \
    solve_parametrization
from .postprocess import default_length_threshold, emit_geometry, simplify, \
    write_lines_obj, write_obj, write_ply
from .verify import build_truss_model, capacity, frame_fem, write_report

STAGE_ORDER = ("fea", "frames", "param", "extract", "simplify", "geometry",
               "verify")
STAGE_VERSIONS = {s: 1 for s in STAGE_ORDER}

_ARTIFACT_FILES = {
    "fea": "fea.field",
    "frames": "frames.field",
    "param": "param.field",
    "extract": "graph.json",
    "simplify": "graph_simplified.json",
}
_PREREQUISITE = {
    "fea": None,
    "frames": "fea",
    "param": "frames",
    "extract": "param",
    "simplify": "extract",
    "geometry": "simplify",
    "verify": "simplify",
}


def mesh_from_config(cfg: PipelineConfig) -> TetMesh:
    src = cfg.mesh_source
    if "path" in src:
        return load_tet_mesh(cfg.mesh_path(), src.get("format"))
    name = src["fixture"]
    jitter = float(src.get("jitter", 0.0))
    if name == "bar":
        return bar_mesh(jitter=jitter)
    if name == "cube":
        return unit_cube_mesh(int(src.get("n", 5)), jitter=jitter)
    if "divisions" not in src:
        raise ConfigError("box fixture needs 'divisions'")
    return box_mesh(
        tuple(int(v) for v in src["divisions"]),
        size=tuple(float(v) for v in src.get("size", (1.0, 1.0, 1.0))),
        origin=tuple(float(v) for v in src.get("origin", (0.0, 0.0, 0.0))),
        jitter=jitter,
    )


def _prerequisite_path(out: Path, stage: str) -> Path:
    prereq = _PREREQUISITE[stage]
    path = out / _ARTIFACT_FILES[prereq]
    if not path.exists():
        raise ArtifactError(f"missing artifact: {prereq}")
    return path


def _write_log(out: Path, stage: str, lines: list[str]) -> str:
    name = f"{stage}.log"
    (out / name).write_text("\n".join(lines) + "\n")
    return name


def _stage_fea(cfg: PipelineConfig, out: Path) -> list[str]:
    mesh = mesh_from_config(cfg)
    u = solve_static(mesh, cfg.material, cfg.bcs)
    field = stress_spd(cauchy_stress(mesh, cfg.material, u))
    name = _ARTIFACT_FILES["fea"]
    artifacts.write_field(out / name, {
        "u": u,
        "sigma": field.sigma,
        "eigenvectors": field.eigenvectors,
        "eigenvalues": field.eigenvalues,
        "sigma_plus": field.sigma_plus,
        "eigenvalues_plus": field.eigenvalues_plus,
    }, meta={}, kind="stress")

    K = assemble_stiffness(mesh, cfg.material)
    f = assemble_loads(mesh, cfg.material, cfg.bcs)
    strain_energy = 0.5 * float(u.ravel() @ (K @ u.ravel()))
    work = 0.5 * float(f.ravel() @ u.ravel())
    gap = abs(strain_energy - work) / max(abs(strain_energy), 1e-300)
    log = _write_log(out, "fea", [
        f"vertices {mesh.num_vertices} tets {mesh.num_tets}",
        f"strain_energy {strain_energy:.9e}",
        f"external_work {work:.9e}",
        f"energy_balance_gap {gap:.3e}",
        f"max_displacement {float(np.max(np.abs(u))):.9e}",
        f"sigma_plus_eigenvalue_range "
        f"{float(field.eigenvalues_plus.min()):.9e} "
        f"{float(field.eigenvalues_plus.max()):.9e}",
    ])
    return [name, log]


def _stage_frames(cfg: PipelineConfig, out: Path) -> list[str]:
    mesh = mesh_from_config(cfg)
    _, arr = artifacts.read_field(_prerequisite_path(out, "frames"),
                                  kind="stress")
    field = StressField(
        sigma=arr["sigma"], eigenvectors=arr["eigenvectors"],
        eigenvalues=arr["eigenvalues"], sigma_plus=arr["sigma_plus"],
        eigenvalues_plus=arr["eigenvalues_plus"],
    )
    ff = fit_frame_field(mesh, field, cfg.frame_fit)
    name = _ARTIFACT_FILES["frames"]
    artifacts.write_field(out / name, {
        "omega": ff.omega,
        "frames": ff.frames,
    }, meta={"alpha_history": [[a, e] for a, e in ff.alpha_history]},
        kind="frames")

    lines = [f"outer {k} alpha {a:.9e} energy {e:.9e}"
             for k, (a, e) in enumerate(ff.alpha_history)]
    lines.append(
        f"final_data_energy "
        f"{data_energy_total(ff.omega, field, mesh.tets):.9e}")
    log = _write_log(out, "frames", lines)
    return [name, log]


def _stage_param(cfg: PipelineConfig, out: Path) -> list[str]:
    mesh = mesh_from_config(cfg)
    _, arr = artifacts.read_field(_prerequisite_path(out, "param"),
                                  kind="frames")
    ops = build_operators(mesh)
    p = solve_parametrization(mesh, arr["frames"], cfg.beta, ops=ops)
    p = normalize_and_scale(p, cfg.rho)
    p = perturb_parametrization(p, cfg.epsilon, mesh=mesh)
    name = _ARTIFACT_FILES["param"]
    artifacts.write_field(out / name, {
        "phi": p.phi,
        "phi_tilde": p.phi_tilde,
    }, meta={"beta": cfg.beta, "rho": cfg.rho, "epsilon": cfg.epsilon},
        kind="param")

    objective = evaluate_objective(ops, arr["frames"], p.phi, cfg.beta)
    spans = p.phi_tilde.max(axis=0) - p.phi_tilde.min(axis=0)
    log = _write_log(out, "param", [
        f"objective {objective:.9e}",
        f"component_spans {spans[0]:.9e} {spans[1]:.9e} {spans[2]:.9e}",
        f"rho {cfg.rho:.9e} beta {cfg.beta:.9e}",
    ])
    return [name, log]


def _stage_extract(cfg: PipelineConfig, out: Path) -> list[str]:
    mesh = mesh_from_config(cfg)
    meta, arr = artifacts.read_field(_prerequisite_path(out, "extract"),
                                     kind="param")
    p = Parametrization(phi=arr["phi"], beta=float(meta["beta"]),
                        rho=float(meta["rho"]))
    p.phi_tilde = arr["phi_tilde"]
    interior = extract_3d(mesh, p)
    features = None
    if cfg.features_enabled:
        features = feature_edges(mesh.boundary, cfg.feature_cos_threshold)
    surface = extract_boundary(mesh, p, features)
    g = merge_graphs([interior, surface])
    name = _ARTIFACT_FILES["extract"]
    artifacts.write_graph(out / name, g)

    fams = sorted(set(g.families))
    counts = {f: g.families.count(f) for f in fams}
    log = _write_log(out, "extract", [
        f"nodes {g.num_nodes} elements {g.num_elements}",
        "family_counts " + " ".join(f"{f}={counts[f]}" for f in fams),
    ])
    return [name, log]


def _stage_simplify(cfg: PipelineConfig, out: Path) -> list[str]:
    g = artifacts.read_graph(_prerequisite_path(out, "simplify"))
    thr = cfg.simplify.length_threshold
    if thr is None:
        thr = default_length_threshold(g, cfg.simplify.length_factor)
    g2 = simplify(
        g, length_threshold=thr,
        remove_interior_hits=cfg.simplify.remove_interior_hits,
        preserve_features=cfg.simplify.preserve_features,
    )
    name = _ARTIFACT_FILES["simplify"]
    artifacts.write_graph(out / name, g2)
    log = _write_log(out, "simplify", [
        f"length_threshold {thr:.9e}",
        f"before nodes {g.num_nodes} elements {g.num_elements}",
        f"after nodes {g2.num_nodes} elements {g2.num_elements}",
    ])
    return [name, log]


def _stage_geometry(cfg: PipelineConfig, out: Path) -> list[str]:
    g = artifacts.read_graph(_prerequisite_path(out, "geometry"))
    tri = emit_geometry(g, cfg.radius_policy, sides=cfg.sides)
    write_obj(tri, out / "truss.obj")
    write_ply(tri, out / "truss.ply")
    write_lines_obj(g, out / "graph_lines.obj")
    log = _write_log(out, "geometry", [
        f"vertices {len(tri.vertices)} triangles {tri.num_triangles}",
        f"sides {cfg.sides}",
    ])
    return ["truss.obj", "truss.ply", "graph_lines.obj", log]


def _stage_verify(cfg: PipelineConfig, out: Path) -> list[str]:
    g = artifacts.read_graph(_prerequisite_path(out, "verify"))
    model = build_truss_model(g, cfg.material, cfg.radius_policy, cfg.bcs)
    result = frame_fem(model)
    lam = capacity(model)
    write_report(out / "report.txt", model, result, lam)
    combined = np.abs(result.axial_stress) + np.abs(result.bending_stress)
    log = _write_log(out, "verify", [
        f"lambda_star {lam:.9e}",
        f"max_utilization "
        f"{float(combined.max()) / cfg.material.yield_strength:.9e}",
        f"max_displacement "
        f"{float(np.max(np.abs(result.displacements[:, :3]))):.9e}",
    ])
    return ["report.txt", log]


_STAGE_FUNCS = {
    "fea": _stage_fea,
    "frames": _stage_frames,
    "param": _stage_param,
    "extract": _stage_extract,
    "simplify": _stage_simplify,
    "geometry": _stage_geometry,
    "verify": _stage_verify,
}


def run_stage(stage: str, cfg: PipelineConfig,
              out_dir: str | Path | None = None) -> list[Path]:
    """Run one stage (or 'pipeline' for all, in order); returns the files
    written. Stage-level errors are re-raised with the stage name."""
    if stage != "pipeline" and stage not in _STAGE_FUNCS:
        raise ConfigError(
            f"unknown stage {stage!r}; choose from "
            f"{STAGE_ORDER + ('pipeline',)}")
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = STAGE_ORDER if stage == "pipeline" else (stage,)
    cfg_hash = config_hash(cfg)
    written: list[Path] = []
    for s in stages:
        try:
            files = _STAGE_FUNCS[s](cfg, out)
        except (ConfigError, NumericalError, ArtifactError) as exc:
            raise type(exc)(f"{s}: {exc}") from exc
        artifacts.update_manifest(out, cfg_hash, s, STAGE_VERSIONS[s], files)
        written.extend(out / f for f in files)
    return written
