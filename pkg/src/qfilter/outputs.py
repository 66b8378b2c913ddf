"""Deterministic CSV, JSON and SVG emission."""
import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError

SVG_WIDTH = 640
SVG_HEIGHT = 400
_MARGIN = (70, 20, 30, 50)  # left, right, top, bottom
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")
MAX_SVG_LINES = len(_COLORS)
MAX_SVG_POINTS = 2000


def _fmt(x):
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def write_table(path, columns):
    """CSV with a header row and one row per entry of the equal-length columns."""
    names = list(columns)
    cols = [np.asarray(columns[n], dtype=float).ravel() for n in names]
    if len({c.size for c in cols}) > 1:
        raise ConfigError("table columns differ in length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return Path(path)


def _expand(selectors, available):
    """Selector names to column names; ``populations`` expands to every ``population_i``."""
    cols = []
    for s in selectors:
        if s == "populations":
            pops = sorted((k for k in available if k.startswith("population_")),
                          key=lambda k: int(k.split("_")[1]))
            cols += pops
        elif s in available:
            cols.append(s)
        else:
            raise ConfigError(f"unknown selector {s!r}; available {sorted(available)}")
    return cols


def emit_outputs(trajectories, selectors, out_dir, summary=None, svg=False):
    """Write per-trajectory CSVs, ``summary.json`` and optional SVG plots.

    Parameters
    ----------
    trajectories : list of dict
        Each maps names to series of equal length, including ``time``.
    selectors : sequence of str
        Series to export; an empty sequence writes the summary only.
    out_dir : path
    summary : dict, optional
    svg : bool
        One plot per selected column, overlaying the first trajectories.

    Returns
    -------
    list of Path
        Files written, in a fixed order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    cols = []
    if selectors:
        if not trajectories:
            raise ConfigError("selectors given but no trajectories were computed")
        cols = _expand(selectors, trajectories[0])
        width = max(4, len(str(len(trajectories) - 1)))
        for j, tr in enumerate(trajectories):
            table = {"time": tr["time"]}
            table.update({c: tr[c] for c in cols})
            files.append(write_table(out_dir / f"trajectory_{j:0{width}d}.csv", table))
    if summary is not None:
        path = out_dir / "summary.json"
        path.write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
        files.append(path)
    if svg:
        for c in cols:
            series = [(tr["time"], tr[c]) for tr in trajectories[:MAX_SVG_LINES]]
            path = out_dir / f"plot_{c}.svg"
            path.write_text(svg_line_plot(series, xlabel="t", ylabel=c))
            files.append(path)
    return files


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": _clean(x.real), "im": _clean(x.imag)}
    if isinstance(x, (np.integer, bool, np.bool_)):
        return x.item() if hasattr(x, "item") else x
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def svg_line_plot(series, xlabel="x", ylabel="y", width=SVG_WIDTH, height=SVG_HEIGHT):
    """Plain SVG document with one polyline per ``(x, y)`` pair.

    Coordinates are rounded to two decimals, so the text depends only on the data.
    """
    xs = np.concatenate([np.asarray(s[0], float) for s in series]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys = ys[np.isfinite(ys)]
    if ys.size == 0:
        ys = np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    left, right, top, bottom = _MARGIN
    pw, ph = width - left - right, height - top - bottom
    sx = lambda x: left + (x - x0) / (x1 - x0) * pw
    sy = lambda y: top + (1 - (y - y0) / (y1 - y0)) * ph
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for t in _ticks(x0, x1):
        X = sx(t)
        out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{top + ph + 18}" font-size="11" '
                   f'text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        Y = sy(t)
        out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 8}" font-size="13" '
               f'text-anchor="middle">{_escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.2f}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.2f})">{_escape(ylabel)}</text>')
    for i, (x, y) in enumerate(series):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        stride = max(1, -(-x.size // MAX_SVG_POINTS))
        x, y = x[::stride], y[::stride]
        ok = np.isfinite(y)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{_COLORS[i % len(_COLORS)]}" '
                   f'stroke-width="1.2" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
