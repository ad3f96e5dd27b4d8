"""CSV tables and small self-contained SVG line plots."""

import csv
import io
import math
import os

import numpy as np


def fmt(v):
    """Stable text form for CSV cells (repr keeps every bit of a float)."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def fit_slope(x, y):
    """Least-squares slope of log y against log x (positive entries only)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**k for k in range(a, b + 1)]
    return list(np.linspace(lo, hi, 5))


def svg_plot(series, title="", xlabel="", ylabel="", loglog=False, slope=None):
    """Render line series ``{label: (x, y)}``; a fitted slope goes in the title."""
    W, H, L, R, T, B = 640, 420, 70, 20, 40, 50
    xs = np.concatenate([np.asarray(s[0], float) for s in series.values()]) if series else np.zeros(0)
    ys = np.concatenate([np.asarray(s[1], float) for s in series.values()]) if series else np.zeros(0)
    if loglog:
        ok = (xs > 0) & (ys > 0)
        xs, ys = xs[ok], ys[ok]
    if slope is not None:
        title = f"{title} (slope {slope:.3f})" if title else f"slope {slope:.3f}"
    if xs.size == 0:
        xs, ys = np.array([1.0, 10.0]), np.array([1.0, 10.0])
    tx = (lambda v: np.log10(v)) if loglog else (lambda v: v)
    x0, x1 = tx(xs.min()), tx(xs.max())
    y0, y1 = tx(ys.min()), tx(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def px(v):
        return L + (tx(v) - x0) / (x1 - x0) * (W - L - R)

    def py(v):
        return H - B - (tx(v) - y0) / (y1 - y0) * (H - T - B)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="15">{_esc(title)}</text>',
           f'<line x1="{L}" y1="{H - B}" x2="{W - R}" y2="{H - B}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>',
           f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{_esc(xlabel)}</text>',
           f'<text x="16" y="{H / 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 16 {H / 2})">{_esc(ylabel)}</text>']
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"]
    for i, (label, (x, y)) in enumerate(series.items()):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if loglog:
            ok = (x > 0) & (y > 0)
            x, y = x[ok], y[ok]
        if x.size == 0:
            continue
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        c = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        for a, b in zip(x, y):
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" fill="{c}"/>')
        out.append(f'<text x="{W - R - 5}" y="{T + 15 * (i + 1)}" text-anchor="end" '
                   f'font-size="11" fill="{c}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_report(rows, kind, path, header=None, **plot):
    """Write rows as CSV, or series as an SVG plot.

    For csv, ``rows`` is a list of sequences and ``header`` the column names
    (an empty row list gives a header-only file). For svg, ``rows`` is a
    mapping ``{label: (x, y)}`` and ``plot`` is passed to :func:`svg_plot`.
    """
    if kind == "csv":
        if header is None:
            raise ValueError("csv report needs a header")
        text = csv_text(header, rows)
    elif kind == "svg":
        text = svg_plot(rows, **plot)
    else:
        raise ValueError(f"unknown report kind {kind!r}")
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path
