"""Deterministic file writers: CSV, JSON, binary STL, indexed mesh JSON and the run manifest."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .surface_mesh import TriMesh

MANIFEST_NAME = "manifest.json"
STL_HEADER = b"vortex_topo binary STL".ljust(80, b" ")


def fmt_float(x: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(float(x), ".17g")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    return ("\n".join(lines) + "\n").encode("ascii")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def json_bytes(obj) -> bytes:
    """Sorted-key JSON; non-finite floats become ``null``."""
    return (json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def stl_bytes(mesh: TriMesh) -> bytes:
    """Binary STL with per-facet normals from the vertex winding."""
    v = mesh.vertices[mesh.triangles]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    rec = np.zeros(mesh.F, dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = n
    rec["v"] = v
    return STL_HEADER + np.uint32(mesh.F).astype("<u4").tobytes() + rec.tobytes()


def read_stl(data: bytes) -> TriMesh:
    """Inverse of :func:`stl_bytes`; vertices are merged by exact float32 value."""
    count = int(np.frombuffer(data[80:84], dtype="<u4")[0])
    rec = np.frombuffer(data[84:], dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")], count=count)
    corners = rec["v"].reshape(-1, 3)
    uniq, inv = np.unique(corners, axis=0, return_inverse=True)
    return TriMesh(uniq.astype(np.float64), inv.reshape(-1, 3).astype(np.int64))


def mesh_json_obj(mesh: TriMesh) -> dict:
    return {"vertices": mesh.vertices.tolist(), "triangles": mesh.triangles.tolist()}


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class OutputSet:
    """Collects named outputs in memory, then writes them with a manifest.

    Writing is serialized through this object, so worker threads only ever
    produce bytes.
    """

    def __init__(self) -> None:
        self.files: dict[str, bytes] = {}

    def add(self, name: str, data: bytes) -> None:
        if name in self.files or name == MANIFEST_NAME:
            raise ValueError(f"duplicate output name {name!r}")
        self.files[name] = data

    def add_csv(self, name: str, header, rows) -> None:
        self.add(name, csv_bytes(header, rows))

    def add_json(self, name: str, obj) -> None:
        self.add(name, json_bytes(obj))

    def hashes(self) -> dict[str, str]:
        return {k: sha256(v) for k, v in sorted(self.files.items())}

    def manifest(self, command: str, config: dict, seed: int) -> dict:
        return {
            "command": command,
            "config": config,
            "seed": seed,
            "files": [{"name": k, "sha256": sha256(v), "bytes": len(v)} for k, v in sorted(self.files.items())],
        }

    def write(self, out_dir: str | Path, command: str, config: dict, seed: int) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, data in sorted(self.files.items()):
            (out / name).write_bytes(data)
        path = out / MANIFEST_NAME
        path.write_bytes(json_bytes(self.manifest(command, config, seed)))
        return path


def read_manifest(out_dir: str | Path) -> dict:
    return json.loads((Path(out_dir) / MANIFEST_NAME).read_text())


def check_files(out_dir: str | Path, manifest: dict) -> list[str]:
    """Names of manifest entries whose file on disk is missing or has a different hash."""
    bad = []
    for entry in manifest["files"]:
        p = Path(out_dir) / entry["name"]
        if not p.is_file() or sha256(p.read_bytes()) != entry["sha256"]:
            bad.append(entry["name"])
    return bad
