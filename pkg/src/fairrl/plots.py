"""Self-contained SVG charts built from the metrics CSV."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .fileio import atomic_write_text
from .metrics import aggregate

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22")
W, H = 640, 400
ML, MR, MT, MB = 70, 180, 40, 50


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.floor(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * step:
        if v >= lo - 1e-12 * step:
            out.append(round(v, 12))
        v += step
    return out


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xr, yr):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            'font-family="sans-serif" font-size="11">',
            '<rect width="100%" height="100%" fill="white"/>',
            f'<text x="{ML + (W - ML - MR) / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        ]
        self.x0, self.x1 = xr
        self.y0, self.y1 = yr
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1e-9 if self.y0 else 1.0
        self._axes(xlabel, ylabel)
        self.legend = 0

    def px(self, x: float) -> float:
        return ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)

    def py(self, y: float) -> float:
        return H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)

    def _axes(self, xlabel: str, ylabel: str) -> None:
        p = self.parts
        p.append(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="#444"/>')
        for t in _ticks(self.x0, self.x1):
            x = self.px(t)
            p.append(f'<line x1="{x:.1f}" y1="{H - MB}" x2="{x:.1f}" y2="{H - MB + 4}" stroke="#444"/>')
            p.append(f'<text x="{x:.1f}" y="{H - MB + 16}" text-anchor="middle">{t:g}</text>')
        for t in _ticks(self.y0, self.y1):
            y = self.py(t)
            p.append(f'<line x1="{ML - 4}" y1="{y:.1f}" x2="{ML}" y2="{y:.1f}" stroke="#444"/>')
            p.append(f'<text x="{ML - 6}" y="{y + 4:.1f}" text-anchor="end">{t:g}</text>')
        p.append(f'<text x="{ML + (W - ML - MR) / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
        p.append(
            f'<text x="16" y="{MT + (H - MT - MB) / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {MT + (H - MT - MB) / 2})">{escape(ylabel)}</text>'
        )

    def band(self, xs, lo, hi, color: str) -> None:
        pts = [(self.px(x), self.py(y)) for x, y in zip(xs, hi)] + [
            (self.px(x), self.py(y)) for x, y in zip(reversed(xs), reversed(lo))
        ]
        d = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
        self.parts.append(f'<polygon points="{d}" fill="{color}" fill-opacity="0.15" stroke="none"/>')

    def line(self, xs, ys, color: str) -> None:
        d = " ".join(f"{self.px(x):.1f},{self.py(y):.1f}" for x, y in zip(xs, ys))
        self.parts.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        for x, y in zip(xs, ys):
            self.parts.append(f'<circle cx="{self.px(x):.1f}" cy="{self.py(y):.1f}" r="2" fill="{color}"/>')

    def point(self, x: float, y: float, color: str, hollow: bool = False) -> None:
        fill = "white" if hollow else color
        self.parts.append(
            f'<circle cx="{self.px(x):.1f}" cy="{self.py(y):.1f}" r="4" fill="{fill}" stroke="{color}" stroke-width="1.5"/>'
        )

    def key(self, label: str, color: str) -> None:
        y = MT + 10 + 16 * self.legend
        x = W - MR + 12
        self.parts.append(f'<rect x="{x}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
        self.parts.append(f'<text x="{x + 14}" y="{y + 1}">{escape(label)}</text>')
        self.legend += 1

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _label(method: str, lam: str) -> str:
    return f"{method} (lambda={lam})" if lam not in ("", "nan") else method


def _pad(lo: float, hi: float) -> tuple[float, float]:
    span = hi - lo
    pad = 0.05 * span if span > 0 else max(abs(hi), 1.0) * 0.05
    return lo - pad, hi + pad


def training_chart(summary: dict, column: str, title: str) -> str:
    methods = summary["methods"]
    xs_all = [math.log2(k) for m in methods for k in m["episode_k"]]
    ys_all = [v for m in methods for key in ("lower", "upper") for v in m["bands"][column][key]]
    ys_all = [y for y in ys_all if math.isfinite(y)] or [0.0, 1.0]
    c = _Canvas(title, "log2 episode k", column, (min(xs_all), max(xs_all)), _pad(min(ys_all), max(ys_all)))
    for i, m in enumerate(methods):
        color = PALETTE[i % len(PALETTE)]
        xs = [math.log2(k) for k in m["episode_k"]]
        b = m["bands"][column]
        c.band(xs, b["lower"], b["upper"], color)
        c.line(xs, b["mean"], color)
        c.key(_label(m["method"], m["lambda"]), color)
    return c.svg()


def pareto_chart(summary: dict, notion: str) -> str:
    pts = summary["pareto"][notion]
    vs = [p["violation"] for p in pts if math.isfinite(p["violation"])] or [0.0]
    rs = [p["return"] for p in pts] or [0.0]
    c = _Canvas(f"final-checkpoint trade-off ({notion})", f"step-average {notion} violation", "episodic return",
                _pad(min(vs), max(vs)), _pad(min(rs), max(rs)))
    for i, p in enumerate(pts):
        color = PALETTE[i % len(PALETTE)]
        if math.isfinite(p["violation"]):
            c.point(p["violation"], p["return"], color, hollow=not p["on_front"])
        c.key(_label(p["method"], p["lambda"]), color)
    return c.svg()


CHARTS = (
    ("return", "episodic return (true model)"),
    ("regret", "reward regret per step"),
    ("dp_violation", "step-average DP violation"),
    ("eqopt_violation", "step-average EqOpt violation"),
)


def render_all(metrics_csv: str | Path, out_dir: str | Path, summary: dict | None = None) -> list[Path]:
    """Write one training chart per metric and one trade-off chart per fairness notion."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summary or aggregate(read_metrics(metrics_csv))
    written = []
    for col, title in CHARTS:
        path = out / f"training_{col}.svg"
        atomic_write_text(path, training_chart(summary, col, title))
        written.append(path)
    for notion in ("dp", "eqopt"):
        path = out / f"pareto_{notion}.svg"
        atomic_write_text(path, pareto_chart(summary, notion))
        written.append(path)
    return written
