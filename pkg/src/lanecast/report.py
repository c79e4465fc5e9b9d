"""Tables and self-contained SVG charts rendered from persisted result JSON.

Nothing here recomputes a metric; every number comes from the result rows.
"""
from __future__ import annotations

import csv
import io
import json
from html import escape
from pathlib import Path

from . import CLASSES
from .train_eval import RESULT_COLUMNS, PredictionTimeHistogram, cell_name, result_row

WIDTH, HEIGHT = 800, 500
_M_LEFT, _M_RIGHT, _M_TOP, _M_BOTTOM = 70, 70, 50, 60
_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22")


def load_results(results_dir) -> list[dict]:
    """Every result JSON in a directory, sorted by (obs, pred, arch)."""
    rows = []
    for p in sorted(Path(results_dir).glob("*.json")):
        d = json.loads(p.read_text())
        if isinstance(d, dict) and "metrics" in d and "arch" in d:
            rows.append(d)
    rows.sort(key=lambda r: (r["obs_window_s"], r["max_pred_time_s"], r["arch"]))
    return rows


def results_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow(result_row(r))
    return buf.getvalue()


def confusion_csv(row) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred", *CLASSES])
    for label, counts in zip(CLASSES, row["metrics"]["confusion"]):
        w.writerow([label, *counts])
    return buf.getvalue()


def histogram_csv(hist: PredictionTimeHistogram) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_start", "bin_end", "total", "correct"])
    for a, b, t, c in hist.rows():
        w.writerow([f"{a:g}", f"{b:g}", t, c])
    return buf.getvalue()


# -- svg -----------------------------------------------------------------------

def _f(v: float) -> str:
    return f"{v:.2f}"


class _Svg:
    def __init__(self, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
            f'width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.2f}" y="28" text-anchor="middle" font-size="16">{escape(title)}</text>',
        ]

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, anchor="middle", **attrs):
        extra = "".join(f' {k.replace("_", "-")}="{v}"' for k, v in attrs.items())
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}"{extra}>{escape(str(s))}</text>')

    def line(self, x1, y1, x2, y2, stroke="black", width=1, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{stroke}" stroke-width="{width}"{d}/>'
        )

    def rect(self, x, y, w, h, fill, opacity=1.0):
        self.add(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
            f'fill="{fill}" fill-opacity="{opacity:g}"/>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _plot_box():
    return _M_LEFT, _M_TOP, WIDTH - _M_LEFT - _M_RIGHT, HEIGHT - _M_TOP - _M_BOTTOM


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    step = (hi - lo) / n
    return [lo + i * step for i in range(n + 1)]


def accuracy_chart(rows, obs: float) -> str:
    """Grouped accuracy bars per Δt_p,MAX with Δacc lines on the right axis."""
    rows = [r for r in rows if r["obs_window_s"] == obs]
    preds = sorted({r["max_pred_time_s"] for r in rows})
    archs = sorted({r["arch"] for r in rows})
    svg = _Svg(f"Accuracy and delta acc, observation window {obs:g} s")
    x0, y0, w, h = _plot_box()
    base = y0 + h
    deltas = [r["metrics"]["delta_acc"] for r in rows] or [0.0]
    d_lo = min(0.0, min(deltas))
    d_hi = max(1.0, max(deltas))
    d_hi += 0.1 * (d_hi - d_lo)

    def ya(v):
        return base - h * v / 100.0

    def yd(v):
        return base - h * (v - d_lo) / (d_hi - d_lo)

    svg.line(x0, y0, x0, base)
    svg.line(x0 + w, y0, x0 + w, base)
    svg.line(x0, base, x0 + w, base)
    for t in _ticks(0, 100):
        svg.line(x0 - 4, ya(t), x0, ya(t))
        svg.text(x0 - 8, ya(t) + 4, f"{t:g}", anchor="end")
    for t in _ticks(d_lo, d_hi):
        svg.line(x0 + w, yd(t), x0 + w + 4, yd(t))
        svg.text(x0 + w + 8, yd(t) + 4, f"{t:.1f}", anchor="start")
    svg.text(18, y0 + h / 2, "accuracy (%)", transform=f"rotate(-90 18 {_f(y0 + h / 2)})")
    svg.text(WIDTH - 14, y0 + h / 2, "delta acc (pp)", transform=f"rotate(90 {WIDTH - 14} {_f(y0 + h / 2)})")
    svg.text(x0 + w / 2, HEIGHT - 18, "maximum prediction time (s)")

    group = w / max(1, len(preds))
    bar = 0.8 * group / max(1, len(archs))
    by_key = {(r["arch"], r["max_pred_time_s"]): r for r in rows}
    for gi, p in enumerate(preds):
        gx = x0 + gi * group
        svg.text(gx + group / 2, base + 18, f"{p:g}")
        for ai, a in enumerate(archs):
            r = by_key.get((a, p))
            if r is None:
                continue
            acc = r["metrics"]["acc"]
            bx = gx + 0.1 * group + ai * bar
            svg.rect(bx, ya(acc), bar * 0.9, base - ya(acc), _PALETTE[ai % len(_PALETTE)], 0.8)
    for ai, a in enumerate(archs):
        color = _PALETTE[ai % len(_PALETTE)]
        pts = [
            (x0 + gi * group + group / 2, yd(by_key[(a, p)]["metrics"]["delta_acc"]))
            for gi, p in enumerate(preds)
            if (a, p) in by_key
        ]
        for (xa, ya_), (xb, yb) in zip(pts, pts[1:]):
            svg.line(xa, ya_, xb, yb, stroke=color, width=2, dash="6 3")
        for xp, yp in pts:
            svg.add(f'<circle cx="{_f(xp)}" cy="{_f(yp)}" r="4" fill="{color}"/>')
        lx = x0 + 10 + ai * 110
        svg.rect(lx, y0 - 16, 12, 12, color, 0.8)
        svg.text(lx + 16, y0 - 6, a, anchor="start")
    return svg.render()


def histogram_chart(row) -> str:
    """Total and correctly classified LC samples per prediction-time bin."""
    hist = PredictionTimeHistogram.from_dict(row["histogram"])
    svg = _Svg(
        f"Prediction times of LC samples, {row['arch']}, "
        f"{row['obs_window_s']:g} s / {row['max_pred_time_s']:g} s"
    )
    x0, y0, w, h = _plot_box()
    base = y0 + h
    top = max(1, int(max(hist.total_counts, default=0)))
    svg.line(x0, y0, x0, base)
    svg.line(x0, base, x0 + w, base)
    for t in _ticks(0, top):
        yy = base - h * t / top
        svg.line(x0 - 4, yy, x0, yy)
        svg.text(x0 - 8, yy + 4, f"{t:.0f}", anchor="end")
    edges = hist.bin_edges
    span = float(edges[-1] - edges[0]) or 1.0
    for a, b, tot, cor in hist.rows():
        bx = x0 + w * (a - edges[0]) / span
        bw = w * (b - a) / span
        svg.rect(bx + 1, base - h * tot / top, bw - 2, h * tot / top, "#bbbbbb")
        svg.rect(bx + 1, base - h * cor / top, bw - 2, h * cor / top, "#1f77b4", 0.85)
    for e in edges[:: max(1, len(edges) // 12)]:
        xx = x0 + w * (e - edges[0]) / span
        svg.line(xx, base, xx, base + 4)
        svg.text(xx, base + 18, f"{e:g}")
    svg.text(x0 + w / 2, HEIGHT - 18, "prediction time (s)")
    svg.text(18, y0 + h / 2, "samples", transform=f"rotate(-90 18 {_f(y0 + h / 2)})")
    svg.rect(x0 + 10, y0 - 16, 12, 12, "#bbbbbb")
    svg.text(x0 + 26, y0 - 6, "total", anchor="start")
    svg.rect(x0 + 90, y0 - 16, 12, 12, "#1f77b4", 0.85)
    svg.text(x0 + 106, y0 - 6, "correct", anchor="start")
    return svg.render()


def write_report(results_dir, out_dir) -> list[Path]:
    """Result table, confusion matrices and charts.

    The top level holds ``results.csv``, one confusion CSV per result and one
    accuracy chart per observation window; histograms go to ``histograms/``.
    """
    rows = load_results(results_dir)
    out = Path(out_dir)
    (out / "histograms").mkdir(parents=True, exist_ok=True)
    written = []

    def put(path: Path, text: str):
        path.write_text(text)
        written.append(path)

    put(out / "results.csv", results_csv(rows))
    for r in rows:
        name = cell_name(r["arch"], r["obs_window_s"], r["max_pred_time_s"])
        put(out / f"confusion_{name}.csv", confusion_csv(r))
        hist = PredictionTimeHistogram.from_dict(r["histogram"])
        put(out / "histograms" / f"{name}.csv", histogram_csv(hist))
        put(out / "histograms" / f"{name}.svg", histogram_chart(r))
    for obs in sorted({r["obs_window_s"] for r in rows}):
        put(out / f"accuracy_o{obs:g}.svg", accuracy_chart(rows, obs))
    return written
