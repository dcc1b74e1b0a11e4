"""Figure builders.

Each builder takes data the io readers produced and returns a matplotlib
figure; render() wires a FigureSpec through loading, drawing, saving and
returns the structural metadata the golden tests freeze.
"""

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import io

_VERDICT_COLORS = {"kink": "C3", "smooth": "C0", "inconclusive": "C7"}


@dataclass
class FigureSpec:
    """One figure: what to read, what to draw, where to write it."""
    kind: str
    inputs: dict
    out: str
    options: dict = field(default_factory=dict)


def figure_metadata(fig) -> dict:
    """Structural summary used by the golden tests: axes ranges and
    artist counts survive backend and font drift, pixels do not."""
    axes = []
    for ax in fig.get_axes():
        axes.append({
            "xlim": [round(v, 9) for v in ax.get_xlim()],
            "ylim": [round(v, 9) for v in ax.get_ylim()],
            "lines": len(ax.lines),
            "line_lengths": sorted(len(ln.get_xdata()) for ln in ax.lines),
            "patches": len(ax.patches),
            "collections": len(ax.collections),
            "images": len(ax.images),
        })
    return {"n_axes": len(axes), "axes": axes}


def unit_ball_figure(fan, options=None):
    """Frank diagram: the closed curve r = 1/phi over the sampled
    directions, filled ball behind it."""
    options = options or {}
    pts = np.column_stack([fan["px"], fan["py"]]) / fan["phi"][:, None]
    order = np.argsort(fan["angle"])
    closed = np.vstack([pts[order], pts[order][:1]])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.fill(closed[:, 0], closed[:, 1], alpha=0.2, color="C0")
    ax.plot(closed[:, 0], closed[:, 1], "-", color="C0", lw=1.5)
    ax.plot(pts[fan["certified"], 0], pts[fan["certified"], 1],
            ".", color="C0", ms=5)
    bad = ~fan["certified"]
    if np.any(bad):
        ax.plot(pts[bad, 0], pts[bad, 1], "x", color="C3", ms=7,
                label="uncertified")
        ax.legend(loc="upper right", fontsize=8)
    ax.axhline(0.0, color="0.8", lw=0.6, zorder=0)
    ax.axvline(0.0, color="0.8", lw=0.6, zorder=0)
    ax.set_aspect("equal")
    ax.set_title(options.get("title", "unit ball of the surface tension"))
    ax.set_xlabel("p1")
    ax.set_ylabel("p2")
    return fig


def field_figure(values, meta, options=None):
    """Heat map of a scalar field with level lines; binary=True drops the
    contours and uses a two-tone map (lamination gap masks)."""
    options = options or {}
    if meta["kind"] != "scalar":
        raise io.SchemaError("field figures draw scalar fields, got "
                             f"{meta['kind']!r}")
    L = meta["length"]
    n = meta["n"]
    binary = bool(options.get("binary", False))
    fig, ax = plt.subplots(figsize=(5.4, 4.5))
    # values[i, j] samples x = ((i + .5) h, (j + .5) h); transpose so the
    # first coordinate runs along the horizontal axis
    im = ax.imshow(values.T, origin="lower", extent=(0, L, 0, L),
                   cmap="Greys" if binary else "viridis",
                   interpolation="nearest")
    if not binary:
        xs = (np.arange(n) + 0.5) * (L / n)
        ax.contour(xs, xs, values.T, options.get("contours", 11),
                   colors="w", linewidths=0.6, alpha=0.8)
        fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_aspect("equal")
    ax.set_title(options.get("title", meta["name"]))
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    return fig


def _polygon_centroid(verts):
    x, y = verts[:, 0], verts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def wulff_overlay_figure(verts, rescale, masks, options=None):
    """The scaled Wulff polygon with each level's minimizer boundary on
    top, every set recentred by its recorded shift."""
    options = options or {}
    rho = float(rescale["rho"])
    levels = rescale["levels"]
    if len(masks) != len(levels):
        raise io.SchemaError(f"{len(masks)} masks for {len(levels)} levels")
    poly = verts * rho
    poly = poly - _polygon_centroid(poly)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ring = np.vstack([poly, poly[:1]])
    ax.plot(ring[:, 0], ring[:, 1], "k-", lw=2.0, label="rho W")
    for k, (lvl, (vals, meta)) in enumerate(zip(levels, masks)):
        n, L = meta["n"], meta["length"]
        h = L / n
        z = lvl.get("centroid_shift", [0.0, 0.0])
        xs = (np.arange(n) + 0.5) * h - z[0] - L / 2.0
        ys = (np.arange(n) + 0.5) * h - z[1] - L / 2.0
        ax.contour(xs, ys, vals.T.astype(float), [0.5],
                   colors=[f"C{k}"], linewidths=1.3)
        # contours carry no legend entry; proxy line keeps the key honest
        ax.plot([], [], color=f"C{k}",
                label=f"eps={lvl['eps']:g} (symdiff {lvl['sym_diff']:.3f})")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(options.get("title", "rescaled minimizers against rho W"))
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    return fig


def planelike_figure(values, meta, options=None):
    """Plane-like set over its periodic window with the reference
    hyperplane p.x = s drawn through it."""
    options = options or {}
    c = meta["copies"]
    p = meta["p"]
    s = meta["s"]
    fig, ax = plt.subplots(figsize=(5.2, 5))
    ax.imshow(values.T, origin="lower", extent=(-c, c, -c, c),
              cmap="Greys", interpolation="nearest", alpha=0.85)
    # clip the line p.x = s to the window edges for display
    pts = []
    for edge in (-c, c):
        if abs(p[1]) > 1e-12:
            y = (s - p[0] * edge) / p[1]
            if -c <= y <= c:
                pts.append((edge, y))
        if abs(p[0]) > 1e-12:
            x = (s - p[1] * edge) / p[0]
            if -c <= x <= c:
                pts.append((x, edge))
    if len(pts) >= 2:
        seg = np.array(sorted(set(pts))[:2])
        ax.plot(seg[:, 0], seg[:, 1], "C3--", lw=1.2)
    ax.set_aspect("equal")
    pt = tuple(int(v) if float(v).is_integer() else v for v in p)
    ax.set_title(options.get("title", f"plane-like set, p={pt}"))
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    return fig


def convergence_figure(rescale, options=None):
    """Symmetric difference (and Hausdorff distance) against eps."""
    options = options or {}
    levels = sorted(rescale["levels"], key=lambda l: -l["eps"])
    eps = np.array([l["eps"] for l in levels])
    sym = np.array([l["sym_diff"] for l in levels])
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.loglog(eps, sym, "o-", color="C0", label="symmetric difference")
    if all("hausdorff" in l for l in levels):
        ax.loglog(eps, [l["hausdorff"] for l in levels], "s--", color="C1",
                  label="Hausdorff")
    for e, s in zip(eps, sym):
        ax.annotate(f"{s:.3f}", (e, s), textcoords="offset points",
                    xytext=(4, 4), fontsize=7)
    ax.invert_xaxis()
    ax.set_xlabel("eps")
    ax.set_ylabel("error vs rho W")
    ax.legend(fontsize=8)
    ax.set_title(options.get("title", "convergence under period rescaling"))
    ax.grid(True, which="both", lw=0.3, alpha=0.5)
    return fig


def facets_figure(doc, options=None):
    """Per-direction bars of the one-sided opening at each probe q, with
    the kink threshold line and verdict coloring."""
    options = options or {}
    reports = doc["reports"]
    if not reports:
        raise io.SchemaError("facets report holds no directions")
    fig, axs = plt.subplots(len(reports), 1,
                            figsize=(6, 2.4 * len(reports)), squeeze=False)
    for ax, rep in zip(axs[:, 0], reports):
        probes = rep["probes"]
        labels = [str(tuple(int(c) for c in pr["q"])) for pr in probes]
        vals = [pr["opening"] for pr in probes]
        errs = [pr["error_bar"] for pr in probes]
        cols = [_VERDICT_COLORS.get(pr["verdict"], "C7") for pr in probes]
        ax.bar(range(len(vals)), vals, yerr=errs, color=cols, width=0.6)
        ax.axhline(probes[0]["threshold"], color="k", ls="--", lw=0.8)
        ax.set_xticks(range(len(vals)))
        ax.set_xticklabels(labels, fontsize=7)
        p = tuple(float(c) for c in rep["p"])
        ax.set_title(f"p={p}  k_hat={rep['k_hat']}", fontsize=9)
        ax.set_ylabel("opening")
    fig.tight_layout()
    return fig


_KINDS = ("unit-ball", "field", "gap-map", "planelike", "wulff-overlay",
          "convergence", "facets")


def render(spec: FigureSpec) -> dict:
    """Load spec.inputs, draw spec.kind, write spec.out; returns the
    figure metadata of what was written."""
    if spec.kind not in _KINDS:
        raise ValueError(f"unknown figure kind {spec.kind!r}; "
                         f"expected one of {_KINDS}")
    if spec.kind == "unit-ball":
        fig = unit_ball_figure(io.read_fan(spec.inputs["fan"]), spec.options)
    elif spec.kind in ("field", "gap-map"):
        values, meta = io.read_field(spec.inputs["field"])
        opts = dict(spec.options)
        if spec.kind == "gap-map":
            opts["binary"] = True
            opts.setdefault("title", "lamination gaps")
        fig = field_figure(values, meta, opts)
    elif spec.kind == "planelike":
        values, meta = io.read_planelike(spec.inputs["planelike"])
        fig = planelike_figure(values, meta, spec.options)
    elif spec.kind == "wulff-overlay":
        verts, _ = io.read_wulff(spec.inputs["wulff"])
        rescale = io.read_report(spec.inputs["rescale"], io.RESCALE_KEYS)
        masks = [io.read_mask(p) for p in spec.inputs["masks"]]
        fig = wulff_overlay_figure(verts, rescale, masks, spec.options)
    elif spec.kind == "convergence":
        rescale = io.read_report(spec.inputs["rescale"], io.RESCALE_KEYS)
        fig = convergence_figure(rescale, spec.options)
    else:
        doc = io.read_report(spec.inputs["facets"], io.FACETS_KEYS)
        fig = facets_figure(doc, spec.options)
    try:
        fig.savefig(spec.out, dpi=int(spec.options.get("dpi", 150)))
        meta = figure_metadata(fig)
    finally:
        plt.close(fig)
    return meta
