"""Static SVG rendering of density estimates and violin plots."""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

WIDTH, HEIGHT, MARGIN = 640, 400, 50
PLOT_KINDS = ("density", "density2d-contour", "violin")


def _svg(width=WIDTH, height=HEIGHT):
    root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", version="1.1",
                      width=str(width), height=str(height),
                      viewBox=f"0 0 {width} {height}")
    ET.SubElement(root, "rect", x="0", y="0", width=str(width), height=str(height),
                  fill="white")
    return root


def _scale(v, lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return a + (np.asarray(v, dtype=float) - lo) / span * (b - a)


def _points(xs, ys) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))


def _axes(root, xlim, ylim, xlabel="", ylabel=""):
    g = ET.SubElement(root, "g", stroke="black", fill="none")
    x0, x1, y0, y1 = MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN
    ET.SubElement(g, "line", x1=str(x0), y1=str(y0), x2=str(x1), y2=str(y0))
    ET.SubElement(g, "line", x1=str(x0), y1=str(y0), x2=str(x0), y2=str(y1))
    for v in np.linspace(*xlim, 5):
        px = float(_scale(v, *xlim, x0, x1))
        t = ET.SubElement(root, "text", x=f"{px:.1f}", y=str(y0 + 18), fill="black")
        t.set("font-size", "11")
        t.set("text-anchor", "middle")
        t.text = f"{v:.3g}"
    for v in np.linspace(*ylim, 5):
        py = float(_scale(v, *ylim, y0, y1))
        t = ET.SubElement(root, "text", x=str(x0 - 6), y=f"{py + 4:.1f}", fill="black")
        t.set("font-size", "11")
        t.set("text-anchor", "end")
        t.text = f"{v:.3g}"
    if xlabel:
        t = ET.SubElement(root, "text", x=str(WIDTH // 2), y=str(HEIGHT - 10), fill="black")
        t.set("text-anchor", "middle")
        t.text = xlabel
    if ylabel:
        t = ET.SubElement(root, "text", x="14", y=str(HEIGHT // 2), fill="black")
        t.set("transform", f"rotate(-90 14 {HEIGHT // 2})")
        t.set("text-anchor", "middle")
        t.text = ylabel


def density_svg(x, mean, lower, upper) -> ET.Element:
    """Mean curve with a shaded band between ``lower`` and ``upper``."""
    x, mean, lower, upper = (np.asarray(a, dtype=float) for a in (x, mean, lower, upper))
    root = _svg()
    xlim = (float(x.min()), float(x.max()))
    ylim = (0.0, float(max(upper.max(), mean.max())) * 1.05 or 1.0)
    px = _scale(x, *xlim, MARGIN, WIDTH - MARGIN)
    py = lambda v: _scale(v, *ylim, HEIGHT - MARGIN, MARGIN)
    band = np.concatenate([px, px[::-1]]), np.concatenate([py(upper), py(lower)[::-1]])
    ET.SubElement(root, "polygon", points=_points(*band), fill="#9ecae1",
                  stroke="none", id="band")
    ET.SubElement(root, "polyline", points=_points(px, py(mean)), fill="none",
                  stroke="#08519c", id="mean").set("stroke-width", "2")
    _axes(root, xlim, ylim, "x", "density")
    return root


def marching_squares(Z, level):
    """Line segments of the ``level`` contour of ``Z`` in index coordinates."""
    Z = np.asarray(Z, dtype=float)
    segs = []
    ny, nx = Z.shape

    def interp(p, q, a, b):
        t = (level - a) / (b - a) if b != a else 0.5
        return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))

    for i in range(ny - 1):
        for j in range(nx - 1):
            corners = [(i, j), (i, j + 1), (i + 1, j + 1), (i + 1, j)]
            vals = [Z[c] for c in corners]
            cross = []
            for k in range(4):
                a, b = vals[k], vals[(k + 1) % 4]
                if (a >= level) != (b >= level):
                    cross.append(interp(corners[k], corners[(k + 1) % 4], a, b))
            if len(cross) == 2:
                segs.append((cross[0], cross[1]))
            elif len(cross) == 4:
                # saddle: pair by the cell-center value
                if np.mean(vals) >= level:
                    segs += [(cross[0], cross[3]), (cross[1], cross[2])]
                else:
                    segs += [(cross[0], cross[1]), (cross[2], cross[3])]
    return segs


def contour_svg(x1, x2, density, n_levels: int = 8) -> ET.Element:
    """Contour lines of a 2D density given on the ``len(x1) x len(x2)`` grid."""
    x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    D = np.asarray(density, dtype=float).reshape(len(x1), len(x2))
    root = _svg(WIDTH, WIDTH)
    xlim, ylim = (float(x1.min()), float(x1.max())), (float(x2.min()), float(x2.max()))
    size = WIDTH
    levels = np.linspace(0, D.max(), n_levels + 2)[1:-1]
    g = ET.SubElement(root, "g", fill="none", stroke="#08519c")
    for lev in levels:
        parts = []
        for (a, b) in marching_squares(D, lev):
            pa = [_scale(np.interp(p[0], np.arange(len(x1)), x1), *xlim, MARGIN, size - MARGIN)
                  for p in (a, b)]
            pb = [_scale(np.interp(p[1], np.arange(len(x2)), x2), *ylim, size - MARGIN, MARGIN)
                  for p in (a, b)]
            parts.append(f"M{pa[0]:.2f},{pb[0]:.2f}L{pa[1]:.2f},{pb[1]:.2f}")
        if parts:
            ET.SubElement(g, "path", d="".join(parts)).set("data-level", f"{lev:.6g}")
    return root


def violin_svg(grid_x, density, median, lo, hi) -> ET.Element:
    """Vertical violin mirrored about its center with median and interval lines."""
    y = np.asarray(grid_x, dtype=float)
    d = np.asarray(density, dtype=float)
    root = _svg(300, HEIGHT)
    cx, half = 150.0, 100.0
    ylim = (float(y.min()), float(y.max()))
    py = _scale(y, *ylim, HEIGHT - MARGIN, MARGIN)
    w = half * d / d.max() if d.max() > 0 else np.zeros_like(d)
    xs = np.concatenate([cx + w, (cx - w)[::-1]])
    ys = np.concatenate([py, py[::-1]])
    ET.SubElement(root, "polygon", points=_points(xs, ys), fill="#c6dbef",
                  stroke="#08519c", id="violin")
    for name, v in (("median", median), ("q025", lo), ("q975", hi)):
        yy = float(_scale(v, *ylim, HEIGHT - MARGIN, MARGIN))
        ww = float(np.interp(v, y, w))
        ET.SubElement(root, "line", x1=f"{cx - ww:.2f}", x2=f"{cx + ww:.2f}",
                      y1=f"{yy:.2f}", y2=f"{yy:.2f}", stroke="black", id=name)
    return root


def _violin_from_values(values):
    from .pipeline import EstimateOptions, estimate_density

    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("violin plot needs a non-empty vector of values")
    if v.size == 1 or np.ptp(v) == 0:
        v = v[0] + np.array([-0.5, 0.5]) * max(abs(v[0]) * 1e-3, 1e-3)
    est = estimate_density(v, m=100, options=EstimateOptions(samples=1000, seed=0))
    x = est.grid.axis_centers(0)
    dens = est.mean
    cdf = np.concatenate([[0.0], np.cumsum(dens * est.grid.cell_volume)])
    edges = est.grid.edges(0)
    med, lo, hi = (float(np.interp(p, cdf, edges)) for p in (0.5, 0.025, 0.975))
    return x, dens, med, lo, hi


def render_plot(result, kind: str, path) -> None:
    """Write an SVG of ``kind`` for a result dictionary (or value vector for violins)."""
    if kind == "violin":
        values = result["values"] if isinstance(result, dict) else result
        root = violin_svg(*_violin_from_values(values))
    elif kind == "density":
        g, d = result["grid"], result["density"]
        root = density_svg(g["centers"][0], d["mean"], d["q025"], d["q975"])
    elif kind == "density2d-contour":
        g, d = result["grid"], result["density"]
        root = contour_svg(g["centers"][0], g["centers"][1], d["mean"])
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)
