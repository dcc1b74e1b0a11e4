"""Batch front door: config parsing, orchestration, persistence, self-tests.

Every command reads one JSON config (schema-validated, unknown keys
rejected), writes CSV/JSON outputs plus a manifest into the output
directory, and exits 0 only when every sub-result is certified.  Exit
codes: 0 certified, 1 usage or config error, 2 at least one uncertified
result (partial outputs are kept on disk either way).

Identical config and version give byte-identical CSV outputs: solves
run a fixed iteration grid with certification checkpoints, and floats
are printed in shortest round-trip form.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time

import jsonschema
import numpy as np

from . import __version__
from .cellproblem import SolverParams, solve_cell, subgradient_estimate
from .grid import (BoxGrid, ScalarField, TorusGrid, VectorField, divergence,
                   gradient, inner)
from .iso import IsoParams, brute_force_iso, rescale_experiment, solve_iso, solve_penalized
from .metric import MediumError, MediumSpec, load_sampled_coefficients, make_metric
from .persist import (cell_summary, fmt, iso_summary, save_fan_csv,
                      save_field_csv, save_mask_csv, save_wulff, sha256_file,
                      write_json)
from .planelike import (check_birkhoff, check_calibration, extract_planelike,
                        lamination_coverage, save_planelike_csv, slab_report)
from .tension import build_wulff, facet_probe, sample_fan, unit_directions


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

_MEDIUM_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["homogeneous", "laminate", "checkerboard-smoothed",
                          "smooth-trig", "sampled"]},
        "base_norm": {"enum": ["euclidean", "ell1", "ellipse"]},
        "params": {"type": "object"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_TOL_SCHEMA = {
    "type": "object",
    "properties": {
        "max_iters": {"type": "integer", "minimum": 1},
        "tol_gap": {"type": "number", "exclusiveMinimum": 0},
        "tol_feas": {"type": "number", "exclusiveMinimum": 0},
        "check_every": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

_GRID_SCHEMA = {
    "type": "object",
    "properties": {"n": {"type": "integer", "minimum": 4}},
    "required": ["n"],
    "additionalProperties": False,
}

_INT_PAIR = {"type": "array", "items": {"type": "integer"},
             "minItems": 2, "maxItems": 2}
_NUM_PAIR = {"type": "array", "items": {"type": "number"},
             "minItems": 2, "maxItems": 2}

_COMMAND_BLOCKS = {
    "phi": {
        "type": "object",
        "properties": {"direction": _NUM_PAIR},
        "required": ["direction"],
        "additionalProperties": False,
    },
    "fan": {
        "type": "object",
        "properties": {
            "count": {"type": "integer", "minimum": 3},
            "directions": {"type": "array", "items": _NUM_PAIR, "minItems": 1},
        },
        "anyOf": [{"required": ["count"]}, {"required": ["directions"]}],
        "additionalProperties": False,
    },
    "facets": {
        "type": "object",
        "properties": {
            "directions": {"type": "array", "items": _INT_PAIR, "minItems": 1},
            "q_max": {"type": "integer", "minimum": 1},
            "delta_facet": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["directions"],
        "additionalProperties": False,
    },
    "wulff": {
        "type": "object",
        "properties": {"count": {"type": "integer", "minimum": 16}},
        "additionalProperties": False,
    },
    "planelike": {
        "type": "object",
        "properties": {
            "directions": {"type": "array", "items": _INT_PAIR, "minItems": 1},
            "level": {"type": "number"},
            "copies": {"type": "integer", "minimum": 2},
            "q_max": {"type": "integer", "minimum": 1},
            "eta": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["directions"],
        "additionalProperties": False,
    },
    "iso": {
        "type": "object",
        "properties": {
            "box": {
                "type": "object",
                "properties": {
                    "n": {"type": "integer", "minimum": 2},
                    "length": {"type": "number", "exclusiveMinimum": 0},
                },
                "required": ["n", "length"],
                "additionalProperties": False,
            },
            "volume": {"type": "number", "exclusiveMinimum": 0},
            "mode": {"enum": ["constrained", "penalized"]},
            "mu": {"type": "number", "exclusiveMinimum": 0},
            "eps": {"type": "number", "exclusiveMinimum": 0},
            "oracle": {"type": "boolean"},
        },
        "required": ["box", "volume"],
        "additionalProperties": False,
    },
    "rescale": {
        "type": "object",
        "properties": {
            "eps_list": {"type": "array", "minItems": 1,
                         "items": {"type": "number", "exclusiveMinimum": 0}},
            "volume": {"type": "number", "exclusiveMinimum": 0},
            "support_count": {"type": "integer", "minimum": 16},
            "cells_per_period": {"type": "integer", "minimum": 4},
            "safety": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["eps_list", "volume"],
        "additionalProperties": False,
    },
}


def config_schema(command: str) -> dict:
    """Strict schema for one command: shared blocks plus the command's
    own block, everything else rejected."""
    props = {
        "medium": _MEDIUM_SCHEMA,
        "grid": _GRID_SCHEMA,
        "tolerances": _TOL_SCHEMA,
        "out_dir": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
        command: _COMMAND_BLOCKS[command],
    }
    required = ["medium", command]
    if command in ("phi", "fan", "facets", "wulff", "planelike"):
        required.append("grid")
    return {"type": "object", "properties": props, "required": required,
            "additionalProperties": False}


class ConfigError(ValueError):
    pass


def load_config(path, command: str) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    try:
        jsonschema.validate(cfg, config_schema(command))
    except jsonschema.ValidationError as e:
        loc = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {loc}: {e.message}")
    return cfg


def _medium(cfg) -> MediumSpec:
    block = dict(cfg["medium"])
    params = dict(block.get("params", {}))
    if block["kind"] == "sampled" and "path" in params:
        params["values"] = load_sampled_coefficients(params.pop("path"))
    return MediumSpec(kind=block["kind"],
                      base_norm=block.get("base_norm", "euclidean"),
                      params=params)


def _solver(cfg) -> SolverParams:
    return SolverParams(**cfg.get("tolerances", {}))


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class RunManifest:
    """Provenance record written atomically at the end of every run; all
    numeric outputs trace back to one of these."""

    command: str
    version: str
    config_digest: str
    config: dict
    seed: int | None
    workers: int
    tasks: list = dataclasses.field(default_factory=list)
    outputs: list = dataclasses.field(default_factory=list)
    wall_time_s: float = 0.0

    def task(self, name: str, certified: bool, seconds: float, **extra):
        row = {"name": name, "certified": bool(certified),
               "wall_time_s": seconds}
        row.update(extra)
        self.tasks.append(row)

    @property
    def all_certified(self) -> bool:
        return all(t["certified"] for t in self.tasks)


class Outputs:
    """Single writer for one run directory."""

    def __init__(self, out_dir, manifest: RunManifest):
        self.dir = out_dir
        self.manifest = manifest
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str, sidecar: bool = False) -> str:
        self.manifest.outputs.append(name)
        if sidecar:
            self.manifest.outputs.append(name + ".json")
        return os.path.join(self.dir, name)

    def finish(self, t0: float) -> None:
        self.manifest.wall_time_s = time.time() - t0
        self.manifest.outputs.append("manifest.json")
        write_json(os.path.join(self.dir, "manifest.json"),
                   dataclasses.asdict(self.manifest), atomic=True)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_phi(cfg, out: Outputs, workers: int) -> int:
    m = make_metric(_medium(cfg))
    g = TorusGrid(2, cfg["grid"]["n"])
    t0 = time.time()
    sol = solve_cell(m, g, cfg["phi"]["direction"], _solver(cfg))
    out.manifest.task("phi", sol.certified, time.time() - t0, iters=sol.iters)
    sg = subgradient_estimate(sol)
    print(f"phi={fmt(sol.primal)} gap={fmt(sol.gap)} "
          f"subgradient=({fmt(sg[0])}, {fmt(sg[1])}) "
          f"certified={str(bool(sol.certified)).lower()}")
    write_json(out.path("phi.json"),
               {"summary": cell_summary(sol), "medium": cfg["medium"],
                "n": g.n})
    save_field_csv(out.path("phi_v.csv", sidecar=True), sol.v)
    return 0 if sol.certified else 2


def _fan_directions(block) -> np.ndarray:
    if "directions" in block:
        return np.asarray(block["directions"], dtype=float)
    return unit_directions(block["count"])


def cmd_fan(cfg, out: Outputs, workers: int) -> int:
    m = make_metric(_medium(cfg))
    g = TorusGrid(2, cfg["grid"]["n"])
    dirs = _fan_directions(cfg["fan"])
    t0 = time.time()
    fan = sample_fan(m, g, dirs, _solver(cfg), workers=workers)
    dt = time.time() - t0
    for i, r in enumerate(fan.rows):
        out.manifest.task(f"phi[{i}]", r.certified, dt / len(fan.rows))
    save_fan_csv(out.path("fan.csv"), fan)
    print(f"fan: {len(fan.rows)} directions, "
          f"certified={str(fan.all_certified).lower()}")
    return 0 if fan.all_certified else 2


def cmd_facets(cfg, out: Outputs, workers: int) -> int:
    m = make_metric(_medium(cfg))
    g = TorusGrid(2, cfg["grid"]["n"])
    block = cfg["facets"]
    kw = {k: block[k] for k in ("q_max", "delta_facet") if k in block}
    reports = []
    for p in block["directions"]:
        t0 = time.time()
        rep = facet_probe(m, g, p, _solver(cfg), **kw)
        out.manifest.task(f"facet{tuple(p)}", rep.certified, time.time() - t0)
        verdicts = ",".join(pr.verdict for pr in rep.probes)
        print(f"facet p={tuple(p)}: k_hat={rep.k_hat} [{verdicts}] "
              f"certified={str(bool(rep.certified)).lower()}")
        reports.append(rep)
    write_json(out.path("facets.json"),
               {"medium": cfg["medium"], "n": g.n, "reports": reports})
    return 0 if all(r.certified for r in reports) else 2


def cmd_wulff(cfg, out: Outputs, workers: int) -> int:
    m = make_metric(_medium(cfg))
    g = TorusGrid(2, cfg["grid"]["n"])
    count = cfg["wulff"].get("count", 64)
    t0 = time.time()
    fan = sample_fan(m, g, unit_directions(count), _solver(cfg),
                     workers=workers)
    dt = time.time() - t0
    for i, r in enumerate(fan.rows):
        out.manifest.task(f"phi[{i}]", r.certified, dt / len(fan.rows))
    save_fan_csv(out.path("fan.csv"), fan)
    w = build_wulff(fan)
    save_wulff(out.path("wulff.csv", sidecar=True), w,
               meta={"medium": cfg["medium"], "n": g.n,
                     "certified": fan.all_certified})
    print(f"wulff: {len(w.vertices)} vertices, area={fmt(w.area)}, "
          f"certified={str(fan.all_certified).lower()}")
    return 0 if fan.all_certified else 2


def cmd_planelike(cfg, out: Outputs, workers: int) -> int:
    m = make_metric(_medium(cfg))
    g = TorusGrid(2, cfg["grid"]["n"])
    block = cfg["planelike"]
    s = block.get("level", 0.0)
    copies = block.get("copies", 3)
    q_max = block.get("q_max", 3)
    eta = block.get("eta")
    entries = []
    ok = True
    for p in block["directions"]:
        t0 = time.time()
        sol = solve_cell(m, g, np.asarray(p, dtype=float), _solver(cfg))
        E = extract_planelike(sol, s, copies)
        slab = slab_report(sol, s, copies)
        birk = check_birkhoff(E, q_max)
        lam = lamination_coverage(sol, eta) if sol.certified else None
        cal = check_calibration(m, sol, eta) if sol.certified else None
        tag = f"p{p[0]}_{p[1]}"
        save_planelike_csv(out.path(f"planelike_{tag}.csv", sidecar=True), E)
        if lam is not None:
            save_field_csv(out.path(f"gapmask_{tag}.csv", sidecar=True),
                           ScalarField(g, lam.gap_mask.astype(float)))
        lam_row = None
        if lam is not None:
            lam_row = {"p": lam.p, "eta": lam.eta, "fraction": lam.fraction,
                       "n_components": lam.n_components}
        passed = bool(sol.certified and slab.passed and birk.passed)
        entries.append({"p": list(p), "cell": cell_summary(sol), "slab": slab,
                        "birkhoff": birk, "lamination": lam_row,
                        "calibration": cal, "certified": passed})
        out.manifest.task(f"planelike{tuple(p)}", passed, time.time() - t0,
                          iters=sol.iters)
        print(f"planelike p={tuple(p)}: slab={'ok' if slab.passed else 'FAIL'} "
              f"birkhoff={'ok' if birk.passed else 'FAIL'} "
              f"certified={str(passed).lower()}")
        ok = ok and passed
    write_json(out.path("planelike.json"),
               {"medium": cfg["medium"], "n": g.n, "level": s,
                "copies": copies, "entries": entries})
    return 0 if ok else 2


def cmd_iso(cfg, out: Outputs, workers: int) -> int:
    m = make_metric(_medium(cfg))
    block = cfg["iso"]
    box = BoxGrid(block["box"]["n"], block["box"]["length"])
    mode = block.get("mode", "constrained")
    params = IsoParams(box=box, volume=block["volume"], mode=mode,
                       mu=block.get("mu"), solver=_solver(cfg),
                       eps=block.get("eps", 1.0))
    t0 = time.time()
    res = solve_iso(m, params) if mode == "constrained" else solve_penalized(m, params)
    certified = bool(res.certified)
    summary = iso_summary(res)
    if block.get("oracle"):
        mask_star, e_star = brute_force_iso(m, box, block["volume"],
                                            eps=params.eps,
                                            mu=block.get("mu") if mode == "penalized" else None)
        match = abs(res.energy - e_star) <= 1e-9 * max(1.0, abs(e_star))
        summary["oracle_energy"] = e_star
        summary["oracle_match"] = bool(match)
        print("ORACLE MATCH" if match else
              f"ORACLE MISMATCH solver={fmt(res.energy)} exact={fmt(e_star)}")
        certified = certified and match
    out.manifest.task("iso", certified, time.time() - t0, iters=res.iters)
    print(f"iso: energy={fmt(res.energy)} volume={fmt(res.volume)} "
          f"gap={fmt(res.certificate_gap)} certified={str(certified).lower()}")
    write_json(out.path("iso.json"),
               {"medium": cfg["medium"], "params": {
                   "n": box.n, "length": box.length, "volume": block["volume"],
                   "mode": mode, "mu": block.get("mu"),
                   "eps": block.get("eps", 1.0)},
                "summary": summary})
    save_mask_csv(out.path("iso_mask.csv", sidecar=True), res.mask)
    save_field_csv(out.path("iso_u.csv", sidecar=True), res.u)
    return 0 if certified else 2


def cmd_rescale(cfg, out: Outputs, workers: int) -> int:
    m = make_metric(_medium(cfg))
    block = cfg["rescale"]
    count = block.get("support_count", 64)
    n_fan = cfg.get("grid", {}).get("n", 64)
    g = TorusGrid(2, n_fan)
    t0 = time.time()
    fan = sample_fan(m, g, unit_directions(count), _solver(cfg),
                     workers=workers)
    out.manifest.task("support_fan", fan.all_certified, time.time() - t0)
    save_fan_csv(out.path("fan.csv"), fan)
    w = build_wulff(fan)
    save_wulff(out.path("wulff.csv", sidecar=True), w,
               meta={"medium": cfg["medium"], "n": n_fan,
                     "certified": fan.all_certified})
    t0 = time.time()
    metrics, results = rescale_experiment(
        m, block["eps_list"], block["volume"], w,
        cells_per_period=block.get("cells_per_period", 8),
        safety=block.get("safety", 3.0),
        solver=_solver(cfg) if "tolerances" in cfg else None)
    dt = time.time() - t0
    rho = math.sqrt(block["volume"] / w.area)
    rows = []
    ok = fan.all_certified
    for s, res in zip(metrics, results):
        out.manifest.task(f"iso_eps={s.eps}", s.certified, dt / len(metrics),
                          iters=res.iters)
        tag = fmt(s.eps).replace(".", "p")
        save_mask_csv(out.path(f"mask_eps{tag}.csv", sidecar=True), res.mask)
        rows.append(s)
        print(f"eps={fmt(s.eps)}: sym_diff={fmt(s.sym_diff)} "
              f"hausdorff={fmt(s.hausdorff)} energy={fmt(s.energy)} "
              f"certified={str(bool(s.certified)).lower()}")
        ok = ok and s.certified
    write_json(out.path("rescale.json"),
               {"medium": cfg["medium"], "volume": block["volume"],
                "rho": rho, "wulff_area": w.area, "levels": rows})
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------


def _selftest_tasks(inject_fault: str | None, out: Outputs):
    """Quick oracle and invariant checks on tiny grids; each yields
    (name, passed, detail)."""
    rng = np.random.default_rng(0)

    g = TorusGrid(2, 16)
    v = ScalarField(g, rng.standard_normal(g.shape))
    z = VectorField(g, rng.standard_normal((2,) + g.shape))
    lhs = inner(gradient(v).values, z.values, g)
    rhs = inner(v.values, divergence(z).values, g)
    if inject_fault == "adjointness":
        rhs = -rhs  # simulated sign regression in the operator pair
    defect = abs(lhs + rhs) / max(1.0, abs(lhs))
    yield "adjointness", defect <= 1e-12, f"defect={defect:.2e}"

    m = make_metric(MediumSpec("homogeneous", "euclidean"))
    g32 = TorusGrid(2, 32)
    sol = solve_cell(m, g32, [1.0, 0.0], SolverParams(tol_gap=1e-4))
    yield ("phi homogeneous e1", sol.certified and abs(sol.primal - 1.0) <= 0.02,
           f"phi={sol.primal:.6f} gap={sol.gap:.2e}")
    sol2 = solve_cell(m, g32, [2.0, 0.0], SolverParams(tol_gap=1e-4))
    hom = abs(sol2.primal - 2.0 * sol.primal)
    budget = 2.0 * (sol.gap + sol2.gap) + 1e-9
    yield ("homogeneity phi(2p)=2phi(p)", hom <= budget,
           f"defect={hom:.2e} budget={budget:.2e}")

    lam = make_metric(MediumSpec("laminate", "euclidean",
                                 {"axis": 1, "a_low": 1.0, "a_high": 2.0,
                                  "theta": 0.5}))
    g64 = TorusGrid(2, 64)
    s1 = solve_cell(lam, g64, [1.0, 0.0], SolverParams(tol_gap=1e-4))
    s2 = solve_cell(lam, g64, [0.0, 1.0], SolverParams(tol_gap=1e-4))
    yield ("laminate oracle e1", s1.certified and abs(s1.primal - 1.5) <= 0.015,
           f"phi={s1.primal:.6f}")
    yield ("laminate oracle e2", s2.certified and abs(s2.primal - 1.0) <= 0.01,
           f"phi={s2.primal:.6f}")

    box = BoxGrid(4, 1.0)
    vals = 1.0 + rng.random((8, 8))
    med = make_metric(MediumSpec("sampled", "euclidean", {"values": vals}))
    params = IsoParams(box=box, volume=4.0 * box.cell_volume,
                       solver=SolverParams(max_iters=40000, tol_gap=1e-5,
                                           check_every=100))
    res = solve_iso(med, params)
    _, e_star = brute_force_iso(med, box, params.volume)
    yield ("iso matches enumeration 4x4",
           abs(res.energy - e_star) <= 1e-9 * max(1.0, abs(e_star)),
           f"solver={res.energy:.12f} exact={e_star:.12f}")

    hom4 = make_metric(MediumSpec("homogeneous", "euclidean"))
    fan_dirs = unit_directions(4)
    f1 = sample_fan(hom4, g, fan_dirs, SolverParams(max_iters=2000))
    f2 = sample_fan(hom4, g, fan_dirs, SolverParams(max_iters=2000))
    p1 = out.path("selftest_fan.csv")
    save_fan_csv(p1, f1)
    with open(p1, "rb") as fh:
        b1 = fh.read()
    save_fan_csv(p1, f2)
    with open(p1, "rb") as fh:
        b2 = fh.read()
    yield "determinism fan rerun", b1 == b2, f"{len(b1)} bytes"


def cmd_selftest(out: Outputs, inject_fault: str | None) -> int:
    ok = True
    for name, passed, detail in _selftest_tasks(inject_fault, out):
        t0 = time.time()
        out.manifest.task(name, bool(passed), time.time() - t0)
        print(f"{'ok  ' if passed else 'FAIL'} {name}: {detail}")
        ok = ok and bool(passed)
    print("selftest:", "all checks passed" if ok else "FAILURES above")
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


_COMMANDS = {
    "phi": cmd_phi, "fan": cmd_fan, "facets": cmd_facets,
    "wulff": cmd_wulff, "planelike": cmd_planelike, "iso": cmd_iso,
    "rescale": cmd_rescale,
}


def main(argv=None) -> int:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (default: out_dir "
                        "from the config, else the working directory)")
    common.add_argument("--workers", type=int, default=1,
                        help="worker processes for independent solves")
    common.add_argument("--seed", type=int, default=None,
                        help="seed recorded in the manifest; randomized "
                        "property tests read it, solves ignore it")
    ap = _Parser(prog="stablenorm",
                 description="certified cell-problem solves and derived "
                             "surface-tension experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sub.add_parser(name, parents=[common])
    st = sub.add_parser("selftest", parents=[common])
    st.add_argument("--inject-fault", choices=["adjointness"], default=None,
                    help="corrupt one invariant to exercise the failure path")
    args = ap.parse_args(argv)

    if args.command == "selftest":
        out_dir = args.out or "."
        manifest = RunManifest(command="selftest", version=__version__,
                               config_digest="", config={}, seed=args.seed,
                               workers=args.workers)
        out = Outputs(out_dir, manifest)
        t0 = time.time()
        rc = cmd_selftest(out, args.inject_fault)
        out.finish(t0)
        return rc

    if not args.config:
        ap.error(f"command {args.command!r} requires --config")
    try:
        cfg = load_config(args.config, args.command)
        out_dir = args.out or cfg.get("out_dir") or "."
        manifest = RunManifest(command=args.command, version=__version__,
                               config_digest=sha256_file(args.config),
                               config=cfg, seed=args.seed,
                               workers=args.workers)
        out = Outputs(out_dir, manifest)
    except (ConfigError, MediumError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    t0 = time.time()
    try:
        rc = _COMMANDS[args.command](cfg, out, args.workers)
    except (MediumError, ValueError) as e:
        # bad parameter combinations surface as config errors, but only
        # after the partial outputs written so far are sealed in a manifest
        out.finish(t0)
        print(f"error: {e}", file=sys.stderr)
        return 1
    out.finish(t0)
    return rc


if __name__ == "__main__":
    sys.exit(main())
