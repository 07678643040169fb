"""Minimal self-rendered SVG line plots, no plotting dependency.

Produces stacked panels of polylines with axis boxes and tick labels,
good enough to eyeball traces anywhere a browser exists.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_W, _H, _PAD = 900, 220, 48


def _panel(svg: list, x: np.ndarray, series: dict, title: str,
           y_off: int) -> None:
    finite = [v[np.isfinite(v)] for v in series.values()]
    finite = [v for v in finite if v.size]
    lo = min((float(v.min()) for v in finite), default=0.0)
    hi = max((float(v.max()) for v in finite), default=1.0)
    if hi <= lo:
        hi = lo + 1.0
    x0, x1 = float(x[0]), float(x[-1])
    if x1 <= x0:
        x1 = x0 + 1.0
    sx = (_W - 2 * _PAD) / (x1 - x0)
    sy = (_H - 2 * _PAD) / (hi - lo)

    def px(t):
        return _PAD + (t - x0) * sx

    def py(v):
        return y_off + _H - _PAD - (v - lo) * sy

    svg.append(f'<rect x="{_PAD}" y="{y_off + _PAD}" width="{_W - 2 * _PAD}" '
               f'height="{_H - 2 * _PAD}" fill="none" stroke="#888"/>')
    svg.append(f'<text x="{_PAD}" y="{y_off + _PAD - 8}" font-size="13" '
               f'fill="#222">{title}</text>')
    for frac in (0.0, 0.5, 1.0):
        tv = x0 + frac * (x1 - x0)
        yv = lo + frac * (hi - lo)
        svg.append(f'<text x="{px(tv):.1f}" y="{y_off + _H - _PAD + 16}" '
                   f'font-size="10" text-anchor="middle" fill="#555">'
                   f'{tv:.3g}</text>')
        svg.append(f'<text x="{_PAD - 6}" y="{py(yv):.1f}" font-size="10" '
                   f'text-anchor="end" fill="#555">{yv:.3g}</text>')
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    for (name, v), color in zip(series.items(), colors):
        mask = np.isfinite(v)
        pts = " ".join(f"{px(t):.2f},{py(val):.2f}"
                       for t, val in zip(x[mask], v[mask]))
        svg.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1"/>')
        svg.append(f'<text x="{_W - _PAD}" y="{y_off + _PAD + 14 + 13 * list(series).index(name)}" '
                   f'font-size="11" text-anchor="end" fill="{color}">{name}</text>')


def write_trace_svg(path, trace) -> None:
    """Stacked panels of the main closed-loop traces."""
    panels = [("output y and measurement y_m",
               {"y": trace.y, "y_m": trace.y_m}),
              ("control input U and integrator eta",
               {"U": trace.U, "eta": trace.eta}),
              ("field norms", {"|(u,v)|": trace.norm_Eprime,
                               "obs err": trace.obs_err})]
    height = len(panels) * _H
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
           f'height="{height}" viewBox="0 0 {_W} {height}">',
           f'<rect width="{_W}" height="{height}" fill="white"/>']
    for k, (title, series) in enumerate(panels):
        _panel(svg, trace.t, series, title, k * _H)
    svg.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(svg), encoding="utf-8")
