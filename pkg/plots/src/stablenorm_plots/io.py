"""Readers for the frozen stablenorm output formats.

The column lists and sidecar keys are duplicated from the producer on
purpose: this package shares no code with the solver, so drift between
writer and reader surfaces here as a hard error instead of a silently
wrong figure.
"""

import csv
import json
import math

import numpy as np

FAN_HEADER = ["angle", "px", "py", "phi", "gap", "certified", "sgx", "sgy"]
WULFF_HEADER = ["x", "y"]
MASK_HEADER = ["i", "j"]

WULFF_SIDECAR_KEYS = ("area", "support_dirs", "support_vals", "n_vertices")
RESCALE_KEYS = ("volume", "rho", "wulff_area", "levels")
FACETS_KEYS = ("reports",)
PLANELIKE_KEYS = ("entries",)


class SchemaError(ValueError):
    """An input file does not match the frozen format."""


def _read_rows(path, header):
    with open(path, newline="") as f:
        rd = csv.reader(f)
        got = next(rd, None)
        if got != header:
            raise SchemaError(f"{path}: header {got} != {header}")
        rows = list(rd)
    for r in rows:
        if len(r) != len(header):
            raise SchemaError(f"{path}: row of width {len(r)}, "
                              f"expected {len(header)}")
    return rows


def _sidecar(path):
    try:
        with open(str(path) + ".json") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}.json: {e}") from e


def _require(meta, keys, path):
    missing = [k for k in keys if k not in meta]
    if missing:
        raise SchemaError(f"{path}: missing keys {missing}")


def read_fan(path):
    """Fan CSV -> dict of arrays (certified as bool)."""
    rows = _read_rows(path, FAN_HEADER)
    if not rows:
        raise SchemaError(f"{path}: empty fan")
    cols = list(zip(*rows))
    out = {name: np.array([float(x) for x in col])
           for name, col in zip(FAN_HEADER, cols) if name != "certified"}
    cert_col = cols[FAN_HEADER.index("certified")]
    bad = set(cert_col) - {"true", "false"}
    if bad:
        raise SchemaError(f"{path}: certified column holds {sorted(bad)}")
    out["certified"] = np.array([c == "true" for c in cert_col])
    if np.any(out["phi"] <= 0):
        raise SchemaError(f"{path}: non-positive phi value")
    return out


def read_wulff(path):
    """Wulff vertex CSV plus its sidecar -> (vertices (k,2), sidecar)."""
    rows = _read_rows(path, WULFF_HEADER)
    verts = np.array([[float(a), float(b)] for a, b in rows])
    meta = _sidecar(path)
    _require(meta, WULFF_SIDECAR_KEYS, path)
    if len(verts) != int(meta["n_vertices"]):
        raise SchemaError(f"{path}: {len(verts)} vertices, sidecar says "
                          f"{meta['n_vertices']}")
    return verts, meta


def _grid_extent(grid, path):
    _require(grid, ("type", "n"), path)
    n = int(grid["n"])
    if grid["type"] == "torus":
        return n, 1.0
    if grid["type"] == "box":
        _require(grid, ("length",), path)
        return n, float(grid["length"])
    raise SchemaError(f"{path}: unknown grid type {grid['type']!r}")


def read_field(path):
    """Field CSV plus sidecar -> (values, meta dict with n/length/kind).

    Scalar fields come back as (n, n); vector fields as (d, m, m) with
    m inferred from the flat length.
    """
    meta = _sidecar(path)
    _require(meta, ("grid", "kind", "name"), path)
    n, length = _grid_extent(meta["grid"], path)
    with open(path) as f:
        head = f.readline().strip()
        if head != meta["name"]:
            raise SchemaError(f"{path}: header {head!r} != sidecar name "
                              f"{meta['name']!r}")
        try:
            vals = np.array([float(line) for line in f])
        except ValueError as e:
            raise SchemaError(f"{path}: {e}") from e
    if meta["kind"] == "scalar":
        if vals.size != n * n:
            raise SchemaError(f"{path}: {vals.size} values for an "
                              f"{n}x{n} scalar field")
        shaped = vals.reshape(n, n)
    elif meta["kind"] == "vector":
        d = int(meta["grid"].get("d", 2))
        per = vals.size // d
        m = math.isqrt(per)
        if d * m * m != vals.size:
            raise SchemaError(f"{path}: {vals.size} values do not form "
                              f"{d} square components")
        shaped = vals.reshape(d, m, m)
    else:
        raise SchemaError(f"{path}: unknown field kind {meta['kind']!r}")
    return shaped, {"n": n, "length": length, "kind": meta["kind"],
                    "name": meta["name"], "grid_type": meta["grid"]["type"]}


def read_mask(path):
    """Mask CSV plus sidecar -> (bool (n, n), meta with n/length)."""
    meta = _sidecar(path)
    _require(meta, ("grid", "count"), path)
    n, length = _grid_extent(meta["grid"], path)
    rows = _read_rows(path, MASK_HEADER)
    if len(rows) != int(meta["count"]):
        raise SchemaError(f"{path}: {len(rows)} rows, sidecar count "
                          f"{meta['count']}")
    vals = np.zeros((n, n), dtype=bool)
    for a, b in rows:
        i, j = int(a), int(b)
        if not (0 <= i < n and 0 <= j < n):
            raise SchemaError(f"{path}: cell ({i},{j}) outside {n}x{n}")
        vals[i, j] = True
    return vals, {"n": n, "length": length}


def read_planelike(path):
    """Plane-like set CSV plus sidecar -> (bool (m, m), meta).

    The window spans [-copies, copies]^2 with n cells per period, so
    m = 2 * copies * n.
    """
    meta = _sidecar(path)
    _require(meta, ("p", "copies", "n", "count"), path)
    n, copies = int(meta["n"]), int(meta["copies"])
    m = 2 * copies * n
    rows = _read_rows(path, MASK_HEADER)
    if len(rows) != int(meta["count"]):
        raise SchemaError(f"{path}: {len(rows)} rows, sidecar count "
                          f"{meta['count']}")
    vals = np.zeros((m, m), dtype=bool)
    for a, b in rows:
        i, j = int(a), int(b)
        if not (0 <= i < m and 0 <= j < m):
            raise SchemaError(f"{path}: cell ({i},{j}) outside {m}x{m}")
        vals[i, j] = True
    return vals, {"p": [float(c) for c in meta["p"]],
                  "s": float(meta.get("s", 0.0)), "copies": copies, "n": n}


def read_report(path, keys):
    """JSON report with a required top-level key set."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    _require(doc, keys, path)
    return doc
