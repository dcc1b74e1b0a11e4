"""stablenorm-plots: render figures from a stablenorm run.

Single-figure commands name their inputs explicitly; `report` walks a
run directory and renders every figure its files support, writing the
images next to the data.  Exit 0 on success, 1 on usage problems or
missing files, 2 when an input fails schema validation.
"""

import argparse
import glob
import os
import sys

from .figures import FigureSpec, render
from .io import SchemaError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_out(sub):
    sub.add_argument("--out", required=True, help="output image (.png/.svg)")
    sub.add_argument("--dpi", type=int, default=150)
    sub.add_argument("--title", default=None)


def _options(args):
    opts = {"dpi": args.dpi}
    if args.title is not None:
        opts["title"] = args.title
    return opts


def build_parser():
    ap = _Parser(prog="stablenorm-plots",
                 description="figures from stablenorm CSV/JSON outputs")
    sp = ap.add_subparsers(dest="command", required=True)

    s = sp.add_parser("unit-ball", parents=[], help="Frank diagram from a fan CSV")
    s.add_argument("--fan", required=True)
    _add_out(s)

    s = sp.add_parser("field", help="heat map with level lines from a field CSV")
    s.add_argument("--field", required=True)
    s.add_argument("--contours", type=int, default=11)
    _add_out(s)

    s = sp.add_parser("gap-map", help="two-tone map of a lamination gap field")
    s.add_argument("--field", required=True)
    _add_out(s)

    s = sp.add_parser("planelike",
                      help="plane-like set over its periodic window")
    s.add_argument("--planelike", required=True, help="plane-like set CSV")
    _add_out(s)

    s = sp.add_parser("wulff-overlay",
                      help="Wulff polygon with rescaled minimizers on top")
    s.add_argument("--wulff", required=True)
    s.add_argument("--rescale", required=True, help="rescale report JSON")
    s.add_argument("--masks", nargs="+", required=True,
                   help="mask CSVs, one per level, in the report's order")
    _add_out(s)

    s = sp.add_parser("convergence", help="eps convergence curves")
    s.add_argument("--rescale", required=True)
    _add_out(s)

    s = sp.add_parser("facets", help="facet-opening bars from facets.json")
    s.add_argument("--facets", required=True)
    _add_out(s)

    s = sp.add_parser("report",
                      help="render everything a run directory supports")
    s.add_argument("--run", required=True, help="stablenorm output directory")
    s.add_argument("--out", default=None,
                   help="image directory (default: the run directory)")
    s.add_argument("--format", choices=("png", "svg"), default="png")
    s.add_argument("--dpi", type=int, default=150)
    return ap


def _spec_for(args):
    opts = _options(args)
    if args.command == "unit-ball":
        return FigureSpec("unit-ball", {"fan": args.fan}, args.out, opts)
    if args.command == "field":
        opts["contours"] = args.contours
        return FigureSpec("field", {"field": args.field}, args.out, opts)
    if args.command == "gap-map":
        return FigureSpec("gap-map", {"field": args.field}, args.out, opts)
    if args.command == "planelike":
        return FigureSpec("planelike", {"planelike": args.planelike},
                          args.out, opts)
    if args.command == "wulff-overlay":
        return FigureSpec("wulff-overlay",
                          {"wulff": args.wulff, "rescale": args.rescale,
                           "masks": list(args.masks)}, args.out, opts)
    if args.command == "convergence":
        return FigureSpec("convergence", {"rescale": args.rescale},
                          args.out, opts)
    return FigureSpec("facets", {"facets": args.facets}, args.out, opts)


def _eps_from_tag(path):
    tag = os.path.basename(path)[len("mask_eps"):-len(".csv")]
    try:
        return float(tag.replace("p", "."))
    except ValueError:
        return None


def report_specs(run_dir, out_dir, fmt="png", dpi=150):
    """FigureSpecs for everything the run directory's files support."""
    def have(name):
        return os.path.exists(os.path.join(run_dir, name))

    def src(name):
        return os.path.join(run_dir, name)

    def dst(stem):
        return os.path.join(out_dir, f"{stem}.{fmt}")

    specs = []
    opts = {"dpi": dpi}
    if have("fan.csv"):
        specs.append(FigureSpec("unit-ball", {"fan": src("fan.csv")},
                                dst("unit_ball"), dict(opts)))
    for path in sorted(glob.glob(os.path.join(run_dir, "*.csv"))):
        base = os.path.basename(path)
        if not os.path.exists(path + ".json"):
            continue
        stem = base[:-len(".csv")]
        if base.startswith("gapmask"):
            specs.append(FigureSpec("gap-map", {"field": path},
                                    dst(stem), dict(opts)))
        elif base.startswith("planelike_p"):
            specs.append(FigureSpec("planelike", {"planelike": path},
                                    dst(stem), dict(opts)))
        elif base.endswith("_v.csv") or base.endswith("_u.csv"):
            specs.append(FigureSpec("field", {"field": path},
                                    dst(stem), dict(opts)))
    if have("rescale.json"):
        specs.append(FigureSpec("convergence",
                                {"rescale": src("rescale.json")},
                                dst("convergence"), dict(opts)))
        masks = [(e, p) for p in glob.glob(os.path.join(run_dir,
                                                        "mask_eps*.csv"))
                 if (e := _eps_from_tag(p)) is not None]
        if have("wulff.csv") and masks:
            masks.sort(key=lambda t: -t[0])
            specs.append(FigureSpec(
                "wulff-overlay",
                {"wulff": src("wulff.csv"), "rescale": src("rescale.json"),
                 "masks": [p for _, p in masks]},
                dst("wulff_overlay"), dict(opts)))
    if have("facets.json"):
        specs.append(FigureSpec("facets", {"facets": src("facets.json")},
                                dst("facets"), dict(opts)))
    return specs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            out_dir = args.out or args.run
            if not os.path.isdir(args.run):
                print(f"not a directory: {args.run}", file=sys.stderr)
                return 1
            os.makedirs(out_dir, exist_ok=True)
            specs = report_specs(args.run, out_dir, args.format, args.dpi)
            if not specs:
                print(f"nothing to render in {args.run}", file=sys.stderr)
                return 1
            for spec in specs:
                render(spec)
                print(f"wrote {spec.out}")
            return 0
        spec = _spec_for(args)
        render(spec)
        print(f"wrote {spec.out}")
        return 0
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
