"""Columnar text tables, JSON reports and run manifests.

Tables are comma-separated with a header row; leading ``# key: value``
lines carry metadata as JSON scalars.  Floats are written with ``.17g`` so
a write/read round trip is exact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dgp import SampleSet

MANIFEST = "manifest.json"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_table(path, columns: dict, meta: dict | None = None) -> Path:
    """Write equal-length 1-d columns.  Integer columns stay integers."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [np.asarray(columns[c]) for c in names]
    n = {len(c) for c in cols}
    if len(n) > 1:
        raise ValueError("columns differ in length")
    lines = [f"# {k}: {json.dumps(_plain(v), sort_keys=True)}" for k, v in sorted((meta or {}).items())]
    lines.append(",".join(names))
    ints = [np.issubdtype(c.dtype, np.integer) or c.dtype == bool for c in cols]
    for row in zip(*cols):
        lines.append(",".join(str(int(v)) if i else _fmt(v) for v, i in zip(row, ints)))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path) -> tuple[dict, dict]:
    meta, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = json.loads(val)
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append(line.split(","))
    if header is None:
        raise ValueError(f"{path}: no header row")
    cols = {}
    for i, name in enumerate(header):
        raw = [r[i] for r in rows]
        try:
            cols[name] = np.array([int(x) for x in raw], dtype=np.int64)
        except ValueError:
            cols[name] = np.array([float(x) for x in raw])
    return cols, meta


# --- domain objects -----------------------------------------------------------

def _block(prefix, arr, cols):
    if arr is None:
        return
    arr = np.asarray(arr)
    for j in range(arr.shape[1]):
        cols[f"{prefix}{j + 1}"] = arr[:, j]


def save_sample(path, sample: SampleSet, latent: bool = True) -> Path:
    cols = {"Y": sample.Y, "D": sample.D.astype(np.int64)}
    _block("Z", sample.Z, cols)
    _block("Q", sample.Q, cols)
    if latent and sample.has_latent:
        _block("V", sample.V, cols)
        _block("Yall", sample.Y_all, cols)
    return write_table(path, cols, sample.meta)


def load_sample(path) -> SampleSet:
    cols, meta = read_table(path)

    def block(prefix):
        keys = sorted((k for k in cols if k.startswith(prefix) and k[len(prefix):].isdigit()),
                      key=lambda k: int(k[len(prefix):]))
        return np.column_stack([cols[k] for k in keys]).astype(float) if keys else None

    return SampleSet(cols["Y"].astype(float), cols["D"], block("Z"), block("V"),
                     block("Yall"), block("Q"), meta)


def grid_columns(grid) -> dict:
    nodes = grid.nodes()
    return {f"q{j + 1}": nodes[:, j] for j in range(grid.J)}


def save_surface_table(path, grid, fields: dict, meta: dict | None = None) -> Path:
    """Tensors on ``grid`` flattened node by node next to the node coordinates."""
    cols = grid_columns(grid)
    for name, t in fields.items():
        t = np.asarray(t)
        cols[name] = t.reshape(-1).astype(np.int64) if t.dtype == bool else t.reshape(-1)
    return write_table(path, cols, meta)


# --- manifest -------------------------------------------------------------------

def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(_plain(config), sort_keys=True).encode()).hexdigest()


def write_manifest(outdir, config: dict, timings: dict, version: str) -> Path:
    """List every file under ``outdir`` (except the manifest) with its digest.

    Timings live only here, so every other output is byte-reproducible.
    """
    outdir = Path(outdir)
    files = {str(p.relative_to(outdir)): sha256_file(p)
             for p in sorted(outdir.rglob("*")) if p.is_file() and p.name != MANIFEST}
    return write_json(outdir / MANIFEST, {"config_hash": config_hash(config), "version": version,
                                          "timings_s": timings, "files": files})


def verify_manifest(outdir) -> list[str]:
    """Files whose digest differs from the manifest, or that it omits."""
    outdir = Path(outdir)
    listed = read_json(outdir / MANIFEST)["files"]
    present = {str(p.relative_to(outdir)) for p in outdir.rglob("*")
               if p.is_file() and p.name != MANIFEST}
    bad = sorted(present ^ set(listed))
    bad += [f for f in sorted(present & set(listed)) if sha256_file(outdir / f) != listed[f]]
    return bad
