"""Standalone SVG plots of experiment results.

Renders the sweep CSV as two stacked panels, success rate and mean
travel distance versus sensing range, one line per (relation, method)
series.  The known-map baseline ignores the sensing range, so it is
drawn as a dashed horizontal reference instead of a line series.

The SVG is self-contained text: every plotted point also carries its
value in data attributes, so tests (and scripts) can audit the figure
against the CSV without a raster pipeline.
"""

from __future__ import annotations

from .errors import ParseError
from .harness import read_results_csv

PANEL_W = 640
PANEL_H = 190
MARGIN_L = 64
MARGIN_T = 46
PANEL_GAP = 58

PALETTE = ("#1f6fb2", "#d1495b", "#3c8d5a", "#8b5fa8", "#c98a2b", "#4a4a4a")


def _series_key(row) -> tuple:
    return (row["relation"], row["method"])


def _fmt(metric: str, value: float) -> str:
    return f"{value:.1f}" if metric == "success_pct" else f"{value:.3f}"


def _scale(vmin, vmax, lo, hi):
    span = (vmax - vmin) or 1.0

    def to_px(v):
        return lo + (v - vmin) / span * (hi - lo)

    return to_px


def render_results_svg(meta: dict, rows: list) -> str:
    fovs = sorted({r["fov"] for r in rows})
    series: dict = {}
    for row in rows:
        series.setdefault(_series_key(row), []).append(row)
    for key in series:
        series[key].sort(key=lambda r: r["fov"])

    environments = sorted({r["environment"] for r in rows})
    title = f"{', '.join(environments)} — {rows[0]['episodes']} episodes/cell"

    dist_hi = max(r["distance_mean"] for r in rows) * 1.15
    x_of = _scale(min(fovs), max(fovs), MARGIN_L, MARGIN_L + PANEL_W)
    panels = (("success_pct", "success rate (%)", 0.0, 100.0),
              ("distance_mean", "distance (m)", 0.0, dist_hi))

    colors = {}
    for i, key in enumerate(sorted(series)):
        colors[key] = PALETTE[i % len(PALETTE)]

    out = []
    height = MARGIN_T + 2 * PANEL_H + PANEL_GAP + 64
    width = MARGIN_L + PANEL_W + 150
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" '
        f'font-family="Helvetica, Arial, sans-serif" font-size="12">')
    out.append(f'<rect width="{width}" height="{height}" fill="#ffffff"/>')
    out.append(f'<text x="{MARGIN_L}" y="24" font-size="15" '
               f'font-weight="bold">{title}</text>')

    for p, (metric, label, vmin, vmax) in enumerate(panels):
        top = MARGIN_T + p * (PANEL_H + PANEL_GAP)
        bot = top + PANEL_H
        y_of = _scale(vmin, vmax, bot, top)
        out.append(f'<g class="panel" data-metric="{metric}">')
        out.append(f'<line x1="{MARGIN_L}" y1="{bot}" '
                   f'x2="{MARGIN_L + PANEL_W}" y2="{bot}" stroke="#333"/>')
        out.append(f'<line x1="{MARGIN_L}" y1="{top}" x2="{MARGIN_L}" '
                   f'y2="{bot}" stroke="#333"/>')
        out.append(f'<text x="16" y="{(top + bot) / 2:.1f}" '
                   f'transform="rotate(-90 16 {(top + bot) / 2:.1f})" '
                   f'text-anchor="middle">{label}</text>')
        for fov in fovs:
            x = x_of(fov)
            out.append(f'<line class="xtick" x1="{x:.1f}" y1="{bot}" '
                       f'x2="{x:.1f}" y2="{bot + 5}" stroke="#333"/>')
            out.append(f'<text x="{x:.1f}" y="{bot + 18}" '
                       f'text-anchor="middle">{fov:g}</text>')
        for frac in (0.0, 0.5, 1.0):
            v = vmin + frac * (vmax - vmin)
            y = y_of(v)
            out.append(f'<line x1="{MARGIN_L - 4}" y1="{y:.1f}" '
                       f'x2="{MARGIN_L}" y2="{y:.1f}" stroke="#333"/>')
            out.append(f'<text x="{MARGIN_L - 8}" y="{y + 4:.1f}" '
                       f'text-anchor="end">{v:.0f}</text>')
        out.append(f'<text x="{MARGIN_L + PANEL_W / 2:.1f}" y="{bot + 36}" '
                   f'text-anchor="middle">sensing range (m)</text>')

        for key, cells in sorted(series.items()):
            relation, method = key
            color = colors[key]
            pts = [(x_of(r["fov"]), y_of(r[metric]), r) for r in cells]
            if method == "known_map":
                level = sum(r[metric] for r in cells) / len(cells)
                y = y_of(level)
                out.append(
                    f'<line class="reference" data-relation="{relation}" '
                    f'data-method="known_map" data-metric="{metric}" '
                    f'data-value="{_fmt(metric, level)}" '
                    f'x1="{MARGIN_L}" y1="{y:.1f}" '
                    f'x2="{MARGIN_L + PANEL_W}" y2="{y:.1f}" '
                    f'stroke="{color}" stroke-dasharray="7 5"/>')
            elif len(pts) > 1:
                coords = " ".join(f"{x:.1f},{y:.1f}" for x, y, _ in pts)
                out.append(f'<polyline points="{coords}" fill="none" '
                           f'stroke="{color}" stroke-width="1.8"/>')
            for x, y, r in pts:
                out.append(
                    f'<circle class="pt" cx="{x:.1f}" cy="{y:.1f}" r="3.2" '
                    f'fill="{color}" data-relation="{relation}" '
                    f'data-method="{method}" data-fov="{r["fov"]:g}" '
                    f'data-metric="{metric}" '
                    f'data-value="{_fmt(metric, r[metric])}"/>')
        out.append("</g>")

    lx = MARGIN_L + PANEL_W + 14
    ly = MARGIN_T + 8
    out.append('<g class="legend">')
    for key in sorted(series):
        relation, method = key
        color = colors[key]
        out.append(f'<rect x="{lx}" y="{ly - 9}" width="12" height="12" '
                   f'fill="{color}"/>')
        out.append(f'<text x="{lx + 18}" y="{ly + 2}">{method} '
                   f'[{relation}]</text>')
        ly += 20
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out)


def emit_plot(csv_path: str, out_path: str) -> str:
    """Render a results CSV to a standalone SVG file."""
    meta, rows = read_results_csv(csv_path)
    if not rows:
        raise ParseError("results CSV has no data rows")
    svg = render_results_svg(meta, rows)
    with open(out_path, "w") as fh:
        fh.write(svg + "\n")
    return out_path
