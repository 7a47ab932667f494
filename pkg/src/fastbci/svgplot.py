"""Tiny deterministic SVG line charts (mean curves with std bands).

Hand-rolled on purpose: the output is plain text, diffs cleanly and is
bit-reproducible for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

PANEL_W = 420
PANEL_H = 300
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 52, 14, 30, 40


@dataclass
class Series:
    name: str
    ys: list[float]
    stds: list[float] | None = None
    xs: list[float] | None = field(default=None)

    def points(self):
        xs = self.xs if self.xs is not None else list(range(len(self.ys)))
        return list(zip(xs, self.ys))


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _y_range(series_list):
    lo, hi = float("inf"), float("-inf")
    for s in series_list:
        stds = s.stds if s.stds is not None else [0.0] * len(s.ys)
        for y, sd in zip(s.ys, stds):
            lo = min(lo, y - sd)
            hi = max(hi, y + sd)
    if not series_list or lo == float("inf"):
        lo, hi = 0.0, 1.0
    if hi - lo < 1e-9:
        lo, hi = lo - 0.05, hi + 0.05
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, n: int = 5):
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def chart_group(series_list: list[Series], title: str, xlabel: str, ylabel: str,
                origin=(0, 0)) -> str:
    """One chart as a positioned <g> element."""
    ox, oy = origin
    plot_w = PANEL_W - MARGIN_L - MARGIN_R
    plot_h = PANEL_H - MARGIN_T - MARGIN_B
    xs_all = [x for s in series_list for x, _ in s.points()] or [0, 1]
    x_lo, x_hi = min(xs_all), max(xs_all)
    if x_hi - x_lo < 1e-9:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    y_lo, y_hi = _y_range(series_list)

    def px(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [f'<g class="panel" transform="translate({ox},{oy})">']
    parts.append(
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="white" stroke="#888" stroke-width="1"/>')
    parts.append(
        f'<text x="{PANEL_W / 2:g}" y="18" text-anchor="middle" '
        f'font-size="13" font-family="sans-serif">{title}</text>')

    for tick in _ticks(y_lo, y_hi):
        y = py(tick)
        parts.append(f'<line x1="{MARGIN_L}" y1="{y:.2f}" x2="{MARGIN_L + plot_w}" '
                     f'y2="{y:.2f}" stroke="#ddd" stroke-width="0.5"/>')
        parts.append(f'<text x="{MARGIN_L - 6}" y="{y + 3.5:.2f}" text-anchor="end" '
                     f'font-size="10" font-family="sans-serif">{_fmt(tick)}</text>')
    for tick in _ticks(x_lo, x_hi):
        x = px(tick)
        parts.append(f'<text x="{x:.2f}" y="{MARGIN_T + plot_h + 14}" '
                     f'text-anchor="middle" font-size="10" '
                     f'font-family="sans-serif">{_fmt(tick)}</text>')
    parts.append(f'<text x="{MARGIN_L + plot_w / 2:g}" y="{PANEL_H - 8}" '
                 f'text-anchor="middle" font-size="11" '
                 f'font-family="sans-serif">{xlabel}</text>')
    parts.append(f'<text x="14" y="{MARGIN_T + plot_h / 2:g}" text-anchor="middle" '
                 f'font-size="11" font-family="sans-serif" '
                 f'transform="rotate(-90 14 {MARGIN_T + plot_h / 2:g})">{ylabel}</text>')

    for idx, s in enumerate(series_list):
        color = PALETTE[idx % len(PALETTE)]
        pts = s.points()
        if s.stds is not None:
            upper = [(x, y + sd) for (x, y), sd in zip(pts, s.stds)]
            lower = [(x, y - sd) for (x, y), sd in zip(pts, s.stds)]
            band = upper + lower[::-1]
            d = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in band)
            parts.append(f'<polygon points="{d}" fill="{color}" opacity="0.15"/>')
        d = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{d}" fill="none" stroke="{color}" '
                     f'stroke-width="1.6"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2" '
                         f'fill="{color}"/>')
        ly = MARGIN_T + 14 + 13 * idx
        lx = MARGIN_L + 8
        parts.append(f'<line x1="{lx}" y1="{ly - 3}" x2="{lx + 18}" y2="{ly - 3}" '
                     f'stroke="{color}" stroke-width="1.6"/>')
        parts.append(f'<text x="{lx + 22}" y="{ly}" font-size="10" '
                     f'font-family="sans-serif">{s.name}</text>')
    parts.append("</g>")
    return "\n".join(parts)


def _document(body: str, width: int, height: int) -> str:
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">\n'
        f'{body}\n</svg>\n'
    )


def line_chart(series_list: list[Series], title: str, xlabel: str,
               ylabel: str) -> str:
    return _document(chart_group(series_list, title, xlabel, ylabel),
                     PANEL_W, PANEL_H)


def panel_grid(panels: list[tuple[str, list[Series]]], xlabel: str, ylabel: str,
               ncols: int = 3) -> str:
    """Several charts tiled into one figure, row-major."""
    if not panels:
        raise ValueError("panel_grid needs at least one panel")
    ncols = min(ncols, len(panels))
    nrows = (len(panels) + ncols - 1) // ncols
    groups = []
    for i, (title, series_list) in enumerate(panels):
        origin = ((i % ncols) * PANEL_W, (i // ncols) * PANEL_H)
        groups.append(chart_group(series_list, title, xlabel, ylabel, origin))
    return _document("\n".join(groups), ncols * PANEL_W, nrows * PANEL_H)
