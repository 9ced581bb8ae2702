"""Minimal dependency-free SVG figures with the plotted data embedded as comments.

Output is a pure function of the inputs (fixed float formatting, no
timestamps), so re-running a command reproduces identical files.
"""
from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=80, right=150, top=40, bottom=60)
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def _fmt(v):
    return f"{v:.6g}"


def _ticks(lo, hi, n=5):
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [float(t) for t in np.arange(start, hi + 0.5 * step, step) if lo - 1e-12 * step <= t <= hi]


def _limits(arrays):
    vals = np.concatenate([np.asarray(a, float).ravel() for a in arrays]) if arrays else np.array([])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Frame:
    def __init__(self, xlim, ylim):
        self.xlim, self.ylim = xlim, ylim
        self.x0, self.x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        self.y0, self.y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def px(self, x):
        return self.x0 + (np.asarray(x, float) - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * (self.x1 - self.x0)

    def py(self, y):
        return self.y0 + (np.asarray(y, float) - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * (self.y1 - self.y0)

    def axes(self, xlabel, ylabel, title):
        out = [
            f'<rect x="{self.x0}" y="{self.y1}" width="{self.x1 - self.x0}" height="{self.y0 - self.y1}" '
            'fill="none" stroke="black"/>',
            f'<text x="{(self.x0 + self.x1) / 2}" y="{HEIGHT - 15}" text-anchor="middle">{xlabel}</text>',
            f'<text x="18" y="{(self.y0 + self.y1) / 2}" text-anchor="middle" '
            f'transform="rotate(-90 18 {(self.y0 + self.y1) / 2})">{ylabel}</text>',
            f'<text x="{(self.x0 + self.x1) / 2}" y="24" text-anchor="middle">{title}</text>',
        ]
        for t in _ticks(*self.xlim):
            x = self.px(t)
            out.append(f'<line x1="{x:.2f}" y1="{self.y0}" x2="{x:.2f}" y2="{self.y0 + 5}" stroke="black"/>')
            out.append(f'<text x="{x:.2f}" y="{self.y0 + 20}" text-anchor="middle" font-size="11">{_fmt(t)}</text>')
        for t in _ticks(*self.ylim):
            y = self.py(t)
            out.append(f'<line x1="{self.x0 - 5}" y1="{y:.2f}" x2="{self.x0}" y2="{y:.2f}" stroke="black"/>')
            out.append(f'<text x="{self.x0 - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="11">{_fmt(t)}</text>')
        return out


def _data_comment(series):
    lines = ["<!-- data"]
    for label, (x, y) in series.items():
        lines.append(f"series: {label}")
        lines.extend(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(np.ravel(x), np.ravel(y)))
    lines.append("-->")
    return "\n".join(lines)


def _document(body, comment):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'font-family="sans-serif" font-size="13">')
    return "\n".join([head, comment, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"


def line_plot(series, path, xlabel="", ylabel="", title="", markers=False, header=""):
    """Write ``{label: (x, y)}`` as lines (or markers) to ``path``."""
    xlim = _limits([x for x, _ in series.values()])
    ylim = _limits([y for _, y in series.values()])
    fr = _Frame(xlim, ylim)
    body = fr.axes(xlabel, ylabel, title)
    for k, (label, (x, y)) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        xs, ys = fr.px(x[ok]), fr.py(y[ok])
        if markers:
            body.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>' for a, b in zip(xs, ys))
        elif xs.size:
            pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))
            body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 18 * (k + 1)
        body.append(f'<rect x="{fr.x1 + 10}" y="{ly - 9}" width="12" height="4" fill="{color}"/>')
        body.append(f'<text x="{fr.x1 + 28}" y="{ly - 3}" font-size="11">{label}</text>')
    comment = (f"<!-- {header} -->\n" if header else "") + _data_comment(series)
    with open(path, "w") as fh:
        fh.write(_document(body, comment))


def kymograph_plot(kymo, path, overlays=None, trap_position=None, title="", header="", max_cells=160):
    """Grey-scale kymograph (time right, position up) with optional trajectory overlays.

    The image is block-averaged to at most ``max_cells`` per axis.
    """
    m = np.asarray(kymo.matrix, float)
    t, z = kymo.t_axis, kymo.z_axis
    fr = _Frame((t[0], t[-1] + kymo.frame_interval if t.size else 1.0),
                (z[0], z[-1] + kymo.pixel_pitch if z.size else 1.0))
    body = []
    if m.size:
        bt = max(1, int(np.ceil(m.shape[0] / max_cells)))
        bz = max(1, int(np.ceil(m.shape[1] / max_cells)))
        nt, nz = m.shape[0] // bt, m.shape[1] // bz
        if nt and nz:
            blocks = m[:nt * bt, :nz * bz].reshape(nt, bt, nz, bz).mean(axis=(1, 3))
            top = blocks.max() or 1.0
            w = (fr.x1 - fr.x0) / nt
            h = (fr.y0 - fr.y1) / nz
            for i in range(nt):
                for j in range(nz):
                    g = int(255 * (1 - np.clip(blocks[i, j] / top, 0, 1)))
                    body.append(f'<rect x="{fr.x0 + i * w:.2f}" y="{fr.y0 - (j + 1) * h:.2f}" '
                                f'width="{w + 0.3:.2f}" height="{h + 0.3:.2f}" fill="rgb({g},{g},{g})"/>')
    body.extend(fr.axes("time (s)", "z (m)", title))
    series = {}
    for k, (label, (tt, zz)) in enumerate((overlays or {}).items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(fr.px(tt), fr.py(zz)))
        if pts:
            body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        series[label] = (tt, zz)
    if trap_position is not None and np.isfinite(trap_position):
        y = float(fr.py(trap_position))
        body.append(f'<line x1="{fr.x0}" y1="{y:.2f}" x2="{fr.x1}" y2="{y:.2f}" '
                    'stroke="#d62728" stroke-dasharray="6,4"/>')
    comment = (f"<!-- {header} -->\n" if header else "") + _data_comment(series)
    with open(path, "w") as fh:
        fh.write(_document(body, comment))
