"""Deterministic SVG rendering of training curves and point clouds."""
from __future__ import annotations

import csv
import math
from pathlib import Path

PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
PANELS = ("loss", "d_topo", "d_metric")
PANEL_W, PANEL_H, MARGIN = 300, 220, 48


class PlotInputError(ValueError):
    pass


def _num(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise PlotInputError(f"{where}: not a number: {text!r}") from None


def _read_csv(path, required):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotInputError(f"{path}:1: empty file")
    header = rows[0]
    missing = [c for c in required if c not in header]
    if missing:
        raise PlotInputError(f"{path}:1: missing columns {', '.join(missing)}")
    if len(rows) < 2:
        raise PlotInputError(f"{path}:2: no data rows")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise PlotInputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        out.append((lineno, dict(zip(header, row))))
    return out


def read_aggregate(path) -> list[dict]:
    """Rows of an aggregate curve CSV as floats keyed by column name."""
    cols = ["epoch"] + [f"{m}_{s}" for m in PANELS for s in ("mean", "std")]
    rows = []
    for lineno, rec in _read_csv(path, cols):
        rows.append({c: _num(rec[c], f"{path}:{lineno}") for c in cols})
    return rows


def read_points(path, run: int | None = None) -> dict[str, list[list[float]]]:
    """Point-cloud dump grouped by kind, for one run (the first one by default)."""
    groups: dict[str, list[list[float]]] = {}
    chosen = run
    for lineno, rec in _read_csv(path, ["kind", "run", "index"]):
        where = f"{path}:{lineno}"
        kind = rec["kind"]
        if kind not in ("m", "h", "hp", "p"):
            raise PlotInputError(f"{where}: unknown kind {kind!r}")
        r = int(_num(rec["run"], where))
        if chosen is None:
            chosen = r
        if r != chosen:
            continue
        coords = [_num(v, where) for k, v in rec.items() if k.startswith("c") and v != ""]
        groups.setdefault(kind, []).append(coords)
    if not groups:
        raise PlotInputError(f"{path}: no points for run {run}")
    return groups


def _f(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float):
    return [lo + (hi - lo) * i / 4 for i in range(5)]


def _panel(x0, y0, title, series, xlim, key):
    """One axes box with mean lines and mean +/- std bands."""
    vals = []
    for _, rows in series:
        for r in rows:
            m, s = r[f"{key}_mean"], r[f"{key}_std"]
            if math.isfinite(m) and math.isfinite(s):
                vals += [m - s, m + s]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    lo = min(lo, 0.0)
    if hi <= lo:
        hi = lo + 1.0

    def sx(e):
        return x0 + MARGIN + (e - xlim[0]) / max(xlim[1] - xlim[0], 1e-12) * (PANEL_W - MARGIN - 8)

    def sy(v):
        return y0 + PANEL_H - MARGIN + (lo - v) / (hi - lo) * (PANEL_H - MARGIN - 24)

    out = [f'<text x="{_f(x0 + PANEL_W / 2)}" y="{_f(y0 + 16)}" text-anchor="middle">{title}</text>',
           f'<rect x="{_f(sx(xlim[0]))}" y="{_f(sy(hi))}" width="{_f(sx(xlim[1]) - sx(xlim[0]))}" '
           f'height="{_f(sy(lo) - sy(hi))}" fill="none" stroke="#444"/>']
    for v in _ticks(lo, hi):
        out.append(f'<text x="{_f(sx(xlim[0]) - 4)}" y="{_f(sy(v) + 3)}" text-anchor="end" '
                   f'font-size="9">{v:.3g}</text>')
    for e in _ticks(*xlim):
        out.append(f'<text x="{_f(sx(e))}" y="{_f(sy(lo) + 12)}" text-anchor="middle" '
                   f'font-size="9">{e:.0f}</text>')
    for color, (_, rows) in zip(_cycle(), series):
        ok = [r for r in rows if math.isfinite(r[f"{key}_mean"]) and math.isfinite(r[f"{key}_std"])]
        if not ok:
            continue
        upper = [f"{_f(sx(r['epoch']))},{_f(sy(r[key + '_mean'] + r[key + '_std']))}" for r in ok]
        lower = [f"{_f(sx(r['epoch']))},{_f(sy(r[key + '_mean'] - r[key + '_std']))}" for r in reversed(ok)]
        out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = [f"{_f(sx(r['epoch']))},{_f(sy(r[key + '_mean']))}" for r in ok]
        out.append(f'<polyline points="{" ".join(line)}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    return out


def _cycle():
    i = 0
    while True:
        yield PALETTE[i % len(PALETTE)]
        i += 1


def _svg(width, height, body) -> str:
    return "\n".join([f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
                      f'font-family="sans-serif" font-size="11">',
                      f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>", ""])


def curves_svg(series) -> str:
    """Three side-by-side panels; ``series`` is a list of ``(label, rows)``."""
    series = [(label, list(rows)) for label, rows in series]
    if not series or any(not rows for _, rows in series):
        raise PlotInputError("no curve data to plot")
    epochs = [r["epoch"] for _, rows in series for r in rows]
    xlim = (min(epochs), max(epochs))
    body = []
    for i, key in enumerate(PANELS):
        body += _panel(i * PANEL_W, 0, key, series, xlim, key)
    for j, (color, (label, _)) in enumerate(zip(_cycle(), series)):
        x = MARGIN + j * 140
        body.append(f'<rect x="{x}" y="{PANEL_H + 4}" width="12" height="12" fill="{color}"/>')
        body.append(f'<text x="{x + 16}" y="{PANEL_H + 14}">{label}</text>')
    return _svg(len(PANELS) * PANEL_W, PANEL_H + 24, body)


def points_svg(points: dict[str, list[list[float]]], size: int = 420) -> str:
    """Positions as circles, their affine-projected codes as dots, and one
    connector per sample between the two."""
    P = points.get("p")
    Hp = points.get("hp")
    if not P or not Hp:
        raise PlotInputError("point cloud needs both 'p' and 'hp' rows")
    if len(P) != len(Hp):
        raise PlotInputError(f"{len(P)} positions but {len(Hp)} projected codes")
    if any(len(v) < 2 for v in P + Hp):
        raise PlotInputError("points need two coordinates")
    xs = [v[0] for v in P + Hp]
    ys = [v[1] for v in P + Hp]
    lo_x, hi_x, lo_y, hi_y = min(xs), max(xs), min(ys), max(ys)
    span = max(hi_x - lo_x, hi_y - lo_y, 1e-12)
    pad = 20

    def sx(v):
        return pad + (v - lo_x) / span * (size - 2 * pad)

    def sy(v):
        return size - pad - (v - lo_y) / span * (size - 2 * pad)

    body = []
    for p, h in zip(P, Hp):
        body.append(f'<line x1="{_f(sx(p[0]))}" y1="{_f(sy(p[1]))}" x2="{_f(sx(h[0]))}" '
                    f'y2="{_f(sy(h[1]))}" stroke="#999" stroke-width="0.8"/>')
    for p in P:
        body.append(f'<circle cx="{_f(sx(p[0]))}" cy="{_f(sy(p[1]))}" r="4" fill="none" stroke="#1f77b4"/>')
    for h in Hp:
        body.append(f'<circle cx="{_f(sx(h[0]))}" cy="{_f(sy(h[1]))}" r="1.8" fill="#d62728"/>')
    return _svg(size, size, body)
