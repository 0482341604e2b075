"""Deterministic JSON and CSV output, run manifests and checksums."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .heat import HeatSolution, Potential, make_potential
from .mesh import Mesh, build_mesh

SCHEMA_VERSION = "1.0"
MANIFEST = "manifest.json"


class ChecksumError(ValueError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"checksum mismatch: {path}")


def fmt(x) -> str:
    """Fixed 17-significant-digit rendering of a real number."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _render(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_render(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_render(v, indent, level + 1) for v in obj) + "]"
        items = [f"{pad}{_render(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if math.isfinite(obj):
            return fmt(obj)
        return json.dumps(fmt(obj))
    if obj is None:
        return "null"
    return json.dumps(obj, ensure_ascii=False)


def dumps(obj, indent: int = 2) -> str:
    """JSON text with floats at 17 significant digits and non-finite values as strings."""
    return _render(_plain(obj), indent, 0) + "\n"


def write_json(path: Path, obj: dict) -> Path:
    """Write ``obj`` with a ``schema_version`` field first."""
    body = {"schema_version": SCHEMA_VERSION}
    body.update({k: v for k, v in obj.items() if k != "schema_version"})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(body), encoding="utf-8")
    return path


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return "" if v is None else str(v)


def write_csv(path: Path, header: list, rows) -> Path:
    """RFC-4180 CSV (CRLF line endings, minimal quoting)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


def write_columns(path: Path, columns: dict) -> Path:
    header = list(columns)
    arrays = [np.asarray(columns[k]) for k in header]
    return write_csv(path, header, zip(*arrays))


_BOOL = {"true": 1.0, "false": 0.0}


def read_csv(path: Path) -> dict:
    """Columns of a numeric CSV as float arrays (empty cells become NaN, booleans 0/1)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    cols = {h: [] for h in header}
    for k, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{k}: expected {len(header)} fields, got {len(row)}")
        for h, v in zip(header, row):
            cols[h].append(_BOOL.get(v, np.nan) if v in _BOOL or v == "" else float(v))
    return {h: np.asarray(v) for h, v in cols.items()}


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# mesh, fields and solutions


def mesh_header(mesh: Mesh) -> dict:
    return {"dimension": mesh.dimension, "resolution": mesh.resolution, "spacing": mesh.spacing}


def write_mesh(directory: Path, mesh: Mesh) -> list[Path]:
    directory = Path(directory)
    cols = {"node": np.arange(mesh.size)}
    for j in range(mesh.dimension):
        cols["xy"[j]] = mesh.coords[:, j]
    bmask = np.zeros(mesh.size, dtype=bool)
    bmask[mesh.boundary] = True
    cols["boundary"] = bmask
    cols["weight"] = mesh.weights
    return [write_json(directory / "mesh.json", {"mesh": mesh_header(mesh), "nodes": mesh.size,
                                                 "boundary_nodes": int(mesh.boundary.size),
                                                 "volume": float(mesh.weights.sum()),
                                                 "perimeter": float(mesh.boundary_weights.sum())}),
            write_columns(directory / "mesh.csv", cols)]


def write_field(path: Path, mesh: Mesh, values: np.ndarray) -> Path:
    cols = {"node": np.arange(mesh.size)}
    for j in range(mesh.dimension):
        cols["xy"[j]] = mesh.coords[:, j]
    cols["value"] = values
    return write_columns(path, cols)


def read_field(path: Path) -> np.ndarray:
    return read_csv(path)["value"]


def write_solution(directory: Path, solution: HeatSolution, every: int = 1) -> list[Path]:
    """Directory with ``solution.json`` and one CSV per stored snapshot."""
    directory = Path(directory)
    idx = list(range(0, solution.times.size, every))
    if idx[-1] != solution.times.size - 1:
        idx.append(solution.times.size - 1)
    files = []
    names = []
    for k in idx:
        name = f"snapshots/u_{k:06d}.csv"
        files.append(write_field(directory / name, solution.mesh, solution.fields[k]))
        names.append(name)
    pot = solution.potential.describe()
    files.insert(0, write_json(directory / "solution.json", {
        "mesh": mesh_header(solution.mesh), "potential": pot, "dt": solution.dt,
        "method": solution.method, "times": solution.times[idx], "snapshots": names,
    }))
    return files


def read_solution(directory: Path) -> HeatSolution:
    directory = Path(directory)
    meta = read_json(directory / "solution.json")
    mesh = build_mesh(meta["mesh"]["dimension"], meta["mesh"]["resolution"])
    fields = np.stack([read_field(directory / n) for n in meta["snapshots"]])
    return HeatSolution(mesh, np.asarray(meta["times"], dtype=float), fields,
                        potential_from_description(meta["potential"]), float(meta["dt"]), meta["method"])


def potential_from_description(desc: dict) -> Potential:
    kind = desc["kind"]
    params = {k: v for k, v in desc.items() if k not in ("kind", "sup_norm")}
    return make_potential(kind, **params)


# ---------------------------------------------------------------------------
# manifests


def update_manifest(directory: Path, files, config_hash: str, command: str) -> Path:
    """Add (or refresh) emitted files in the run manifest with their checksums."""
    directory = Path(directory)
    path = directory / MANIFEST
    man = read_json(path) if path.exists() else {
        "artifact_version": __version__, "config_hash": config_hash, "commands": [], "files": {},
        "timestamps": {},
    }
    now = datetime.now(timezone.utc).isoformat(timespec="seconds")
    man["timestamps"].setdefault("created", now)
    man["timestamps"]["updated"] = now
    man["config_hash"] = config_hash
    if command not in man["commands"]:
        man["commands"].append(command)
    for f in files:
        rel = Path(f).resolve().relative_to(directory.resolve()).as_posix()
        man["files"][rel] = {"sha256": sha256(f), "bytes": Path(f).stat().st_size}
    man["files"] = dict(sorted(man["files"].items()))
    return write_json(path, man)


def verify_manifest(directory: Path) -> dict:
    """Recompute every checksum.

    Raises:
        ChecksumError: naming the first file whose content changed or vanished.
    """
    directory = Path(directory)
    man = read_json(directory / MANIFEST)
    for rel, info in man["files"].items():
        p = directory / rel
        if not p.exists() or sha256(p) != info["sha256"]:
            raise ChecksumError(rel)
    return man
