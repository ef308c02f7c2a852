"""Staged artifact files.

Graphs are JSON (nodes with positions/params/tags, elements with family
tags); field data is a one-line JSON header followed by flat little-endian
arrays. Writers must be byte-deterministic: floats go through the json
module's repr-based formatting and arrays are written C-ordered.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ArtifactError
from .extract import TrussGraph

GRAPH_VERSION = 1
FIELD_VERSION = 1
MANIFEST_NAME = "manifest.json"


def write_graph(path: str | Path, g: TrussGraph):
    doc = {
        "type": "truss_graph",
        "version": GRAPH_VERSION,
        "nodes": [
            {
                "position": [float(x) for x in g.positions[i]],
                "params": [float(x) for x in g.params[i]],
                "tag": g.tags[i],
            }
            for i in range(g.num_nodes)
        ],
        "elements": [
            {"nodes": [int(a), int(b)], "family": g.families[i]}
            for i, (a, b) in enumerate(g.elements)
        ],
    }
    Path(path).write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_graph(path: str | Path) -> TrussGraph:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"graph artifact does not exist: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"corrupt graph artifact {path}: {exc}") from exc
    if doc.get("type") != "truss_graph":
        raise ArtifactError(f"{path} is not a truss graph artifact")
    if doc.get("version") != GRAPH_VERSION:
        raise ArtifactError(
            f"unsupported graph version {doc.get('version')!r}")
    nodes = doc["nodes"]
    elements = doc["elements"]
    n = len(nodes)
    width = len(nodes[0]["params"]) if n else 3
    positions = np.array([nd["position"] for nd in nodes],
                         dtype=float).reshape(n, 3)
    params = np.array([nd["params"] for nd in nodes],
                      dtype=float).reshape(n, width)
    tags = [str(nd["tag"]) for nd in nodes]
    elems = np.array([e["nodes"] for e in elements],
                     dtype=np.int64).reshape(len(elements), 2)
    families = [str(e["family"]) for e in elements]
    return TrussGraph(positions=positions, params=params, tags=tags,
                      elements=elems, families=families)


def write_field(path: str | Path, arrays: dict[str, np.ndarray],
                meta: dict | None = None, kind: str = "field"):
    """One JSON header line, then each array's raw little-endian bytes in
    header order."""
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        arr = arr.astype(dt, copy=False)
        entries.append({"name": name, "dtype": dt.str,
                        "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = {
        "type": kind,
        "version": FIELD_VERSION,
        "arrays": entries,
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True,
                            separators=(",", ":")).encode())
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def read_field(path: str | Path,
               kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"field artifact does not exist: {path}")
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ArtifactError(
                f"corrupt field artifact {path}: {exc}") from exc
        if kind is not None and header.get("type") != kind:
            raise ArtifactError(
                f"{path} holds {header.get('type')!r}, expected {kind!r}")
        if header.get("version") != FIELD_VERSION:
            raise ArtifactError(
                f"unsupported field version {header.get('version')!r}")
        arrays = {}
        for entry in header["arrays"]:
            dt = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            raw = fh.read(count * dt.itemsize)
            if len(raw) != count * dt.itemsize:
                raise ArtifactError(f"truncated field artifact {path}")
            arrays[entry["name"]] = np.frombuffer(
                raw, dtype=dt).reshape(entry["shape"]).copy()
    return header.get("meta", {}), arrays


def update_manifest(out_dir: str | Path, cfg_hash: str, stage: str,
                    version: int, files: list[str]):
    """Record a completed stage; the manifest carries no timestamps so
    identical runs write identical bytes."""
    path = Path(out_dir) / MANIFEST_NAME
    doc = {"config_hash": cfg_hash, "stages": {}}
    if path.exists():
        try:
            old = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"corrupt manifest {path}: {exc}") from exc
        if old.get("config_hash") == cfg_hash:
            doc = old
    doc["config_hash"] = cfg_hash
    doc.setdefault("stages", {})[stage] = {
        "version": version,
        "artifacts": sorted(files),
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_manifest(out_dir: str | Path) -> dict:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise ArtifactError(f"manifest does not exist: {path}")
    return json.loads(path.read_text())
