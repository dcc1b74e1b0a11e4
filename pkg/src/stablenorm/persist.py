"""Frozen on-disk formats shared by every command.

JSON for configs and reports, CSV for anything tabular or gridded, no
binary formats.  The plotting package parses these files without
importing this library, so header names and column order are
load-bearing; changing them is a schema break, not a refactor.  Floats
are written with repr (shortest round-trip form), which keeps rerun
outputs byte-identical and the values exact on re-read.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import numpy as np

from .grid import (BitMask, grid_from_meta, load_field_csv, save_field_csv,
                   save_mask_csv)

__all__ = ["FAN_HEADER", "WULFF_HEADER", "MASK_HEADER", "SchemaError", "fmt",
           "jsonable", "atomic_write_text", "write_json", "read_json",
           "sha256_file", "save_fan_csv", "load_fan_csv", "save_wulff",
           "load_wulff_csv", "save_field_csv", "load_field_csv",
           "save_mask_csv", "load_mask_csv", "cell_summary", "iso_summary"]

FAN_HEADER = ["angle", "px", "py", "phi", "gap", "certified", "sgx", "sgy"]
WULFF_HEADER = ["x", "y"]
MASK_HEADER = ["i", "j"]


class SchemaError(ValueError):
    """A file does not match its frozen schema."""


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    """Shortest decimal string that reads back to the same float64."""
    return repr(float(x))


def jsonable(obj):
    """Recursively convert dataclasses / numpy types to plain JSON values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    return obj


def atomic_write_text(path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    torn file.  Single-writer discipline is assumed upstream."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, str(path))


def write_json(path, obj, atomic: bool = False) -> None:
    text = json.dumps(jsonable(obj), indent=1, sort_keys=True) + "\n"
    if atomic:
        atomic_write_text(path, text)
    else:
        with open(path, "w") as f:
            f.write(text)


def read_json(path):
    with open(path) as f:
        return json.load(f)


def sha256_file(path) -> str:
    hsh = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            hsh.update(chunk)
    return hsh.hexdigest()


def _write_csv(path, header, rows) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


def _read_csv(path, expected_header):
    with open(path) as f:
        header = f.readline().strip()
        if header != ",".join(expected_header):
            raise SchemaError(f"{path}: header {header!r}, expected "
                              f"{','.join(expected_header)!r}")
        return [line.strip().split(",") for line in f if line.strip()]


# ---------------------------------------------------------------------------
# fan and Wulff tables
# ---------------------------------------------------------------------------


def save_fan_csv(path, fan) -> None:
    """One row per direction: angle,px,py,phi,gap,certified,sgx,sgy."""
    rows = []
    for r in fan.rows:
        rows.append([fmt(r.angle), fmt(r.direction[0]), fmt(r.direction[1]),
                     fmt(r.phi), fmt(r.gap), str(bool(r.certified)).lower(),
                     fmt(r.subgradient[0]), fmt(r.subgradient[1])])
    _write_csv(path, FAN_HEADER, rows)


def load_fan_csv(path):
    """Rows back as dicts with parsed values."""
    out = []
    for row in _read_csv(path, FAN_HEADER):
        if len(row) != len(FAN_HEADER):
            raise SchemaError(f"{path}: row has {len(row)} fields")
        out.append({"angle": float(row[0]), "px": float(row[1]),
                    "py": float(row[2]), "phi": float(row[3]),
                    "gap": float(row[4]), "certified": row[5] == "true",
                    "sgx": float(row[6]), "sgy": float(row[7])})
    return out


def save_wulff(path_csv, wulff, meta: dict | None = None) -> None:
    """Vertex list x,y in counterclockwise order plus a JSON sidecar with
    the support data and area."""
    rows = [[fmt(v[0]), fmt(v[1])] for v in wulff.vertices]
    _write_csv(path_csv, WULFF_HEADER, rows)
    side = {"area": wulff.area,
            "support_dirs": wulff.support_dirs,
            "support_vals": wulff.support_vals,
            "n_vertices": int(len(wulff.vertices))}
    if meta:
        side.update(meta)
    write_json(str(path_csv) + ".json", side)


def load_wulff_csv(path_csv) -> np.ndarray:
    rows = _read_csv(path_csv, WULFF_HEADER)
    return np.array([[float(a), float(b)] for a, b in rows])


# ---------------------------------------------------------------------------
# gridded data: the writers live next to the field types in grid; only the
# mask reader is added here
# ---------------------------------------------------------------------------


def load_mask_csv(path) -> BitMask:
    meta = read_json(str(path) + ".json")
    grid = grid_from_meta(meta["grid"])
    vals = np.zeros(grid.shape, dtype=bool)
    rows = _read_csv(path, MASK_HEADER)
    if len(rows) != int(meta["count"]):
        raise SchemaError(f"{path}: {len(rows)} rows, sidecar says {meta['count']}")
    for a, b in rows:
        vals[int(a), int(b)] = True
    return BitMask(grid, vals)


# ---------------------------------------------------------------------------
# report summaries
# ---------------------------------------------------------------------------


def cell_summary(sol) -> dict:
    """Certification-relevant scalars of a cell solve, no fields."""
    return {"p": sol.p, "primal": sol.primal, "dual": sol.dual,
            "gap": sol.gap, "div_residual": sol.div_residual,
            "feas_residual": sol.feas_residual, "iters": sol.iters,
            "certified": bool(sol.certified)}


def iso_summary(res) -> dict:
    return {"energy": res.energy, "relaxed_energy": res.relaxed_energy,
            "dual_bound": res.dual_bound,
            "certificate_gap": res.certificate_gap,
            "relaxation_gap": res.relaxation_gap,
            "volume": res.volume, "level": res.level, "iters": res.iters,
            "certified": bool(res.certified),
            "diameter": res.diameter,
            "touches_wall": bool(res.touches_wall)}
