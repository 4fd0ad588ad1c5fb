"""Minimal SVG charts (no plotting dependency): training curves and
strategy comparison bars. Output is a plain SVG string; save_svg writes it."""

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN = dict(left=64, right=16, top=34, bottom=44)


def _fmt(v):
    return f"{v:g}"


def _ticks(lo, hi, count=5):
    if lo == hi:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, count)
    return raw


def _frame(width, height, title, xlabel, ylabel):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2}" y="20" text-anchor="middle" '
                     f'font-size="14">{escape(title)}</text>')
    if xlabel:
        parts.append(f'<text x="{width / 2}" y="{height - 8}" '
                     f'text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        y = height / 2
        parts.append(f'<text x="14" y="{y}" text-anchor="middle" '
                     f'transform="rotate(-90 14 {y})">{escape(ylabel)}</text>')
    return parts


class _Axes:
    def __init__(self, width, height, x_range, y_range):
        m = _MARGIN
        self.x0, self.y0 = m["left"], m["top"]
        self.x1, self.y1 = width - m["right"], height - m["bottom"]
        self.xr, self.yr = x_range, y_range

    def px(self, x):
        lo, hi = self.xr
        f = 0.5 if hi == lo else (x - lo) / (hi - lo)
        return self.x0 + f * (self.x1 - self.x0)

    def py(self, y):
        lo, hi = self.yr
        f = 0.5 if hi == lo else (y - lo) / (hi - lo)
        return self.y1 - f * (self.y1 - self.y0)

    def grid(self, x_tick_labels=None):
        parts = [f'<rect x="{self.x0}" y="{self.y0}" '
                 f'width="{self.x1 - self.x0}" height="{self.y1 - self.y0}" '
                 f'fill="none" stroke="#444"/>']
        for v in _ticks(*self.yr):
            py = self.py(v)
            parts.append(f'<line x1="{self.x0}" y1="{py:.1f}" x2="{self.x1}" '
                         f'y2="{py:.1f}" stroke="#ddd"/>')
            parts.append(f'<text x="{self.x0 - 6}" y="{py + 4:.1f}" '
                         f'text-anchor="end">{_fmt(v)}</text>')
        if x_tick_labels is None:
            for v in _ticks(*self.xr):
                px = self.px(v)
                parts.append(f'<text x="{px:.1f}" y="{self.y1 + 16}" '
                             f'text-anchor="middle">{_fmt(v)}</text>')
        return parts


def _legend(parts, names, x, y):
    for i, name in enumerate(names):
        c = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{x}" y="{y + 16 * i}" width="10" height="10" '
                     f'fill="{c}"/>')
        parts.append(f'<text x="{x + 14}" y="{y + 16 * i + 9}">'
                     f'{escape(str(name))}</text>')


def line_plot(series, title="", xlabel="", ylabel="", logy=False,
              width=720, height=440):
    """series: {name: (xs, ys)}. With logy the ys must be positive."""
    if not series:
        raise ValueError("line_plot needs at least one series")
    data = {}
    for name, (xs, ys) in series.items():
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.shape != ys.shape or xs.ndim != 1 or xs.size == 0:
            raise ValueError(f"series {name!r} needs equal-length 1-d x and y")
        if logy:
            if (ys <= 0).any():
                raise ValueError(f"series {name!r} has non-positive values, "
                                 "cannot draw a log axis")
            ys = np.log10(ys)
        data[name] = (xs, ys)

    all_x = np.concatenate([v[0] for v in data.values()])
    all_y = np.concatenate([v[1] for v in data.values()])
    ax = _Axes(width, height, (all_x.min(), all_x.max()),
               (all_y.min(), all_y.max()))
    parts = _frame(width, height, title,
                   xlabel, f"log10 {ylabel}".strip() if logy else ylabel)
    parts += ax.grid()
    for i, (name, (xs, ys)) in enumerate(data.items()):
        pts = " ".join(f"{ax.px(x):.1f},{ax.py(y):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5"/>')
    _legend(parts, list(data), ax.x0 + 8, ax.y0 + 8)
    parts.append("</svg>")
    return "\n".join(parts)


def bar_chart(labels, groups, title="", ylabel="", width=720, height=440):
    """labels: category names; groups: {name: values aligned with labels}."""
    if not labels or not groups:
        raise ValueError("bar_chart needs labels and at least one group")
    for name, vals in groups.items():
        if len(vals) != len(labels):
            raise ValueError(f"group {name!r} has {len(vals)} values for "
                             f"{len(labels)} labels")
    vals = np.array([list(v) for v in groups.values()], dtype=float)
    top = max(vals.max(), 0.0)
    ax = _Axes(width, height, (0.0, float(len(labels))), (0.0, top or 1.0))
    parts = _frame(width, height, title, "", ylabel)
    parts += ax.grid(x_tick_labels=[])
    slot = (ax.x1 - ax.x0) / len(labels)
    bar_w = slot * 0.8 / len(groups)
    for j, label in enumerate(labels):
        cx = ax.x0 + (j + 0.5) * slot
        parts.append(f'<text x="{cx:.1f}" y="{ax.y1 + 16}" '
                     f'text-anchor="middle">{escape(str(label))}</text>')
        for i, (name, gv) in enumerate(groups.items()):
            v = float(gv[j])
            x = cx - slot * 0.4 + i * bar_w
            py = ax.py(max(v, 0.0))
            parts.append(f'<rect x="{x:.1f}" y="{py:.1f}" width="{bar_w:.1f}" '
                         f'height="{ax.y1 - py:.1f}" '
                         f'fill="{PALETTE[i % len(PALETTE)]}"/>')
    _legend(parts, list(groups), ax.x0 + 8, ax.y0 + 8)
    parts.append("</svg>")
    return "\n".join(parts)


def training_curves(records_by_name, title="training loss", logy=True):
    """Loss-vs-epoch curves from per-run epoch records."""
    series = {name: ([r.epoch for r in recs], [r.loss_total for r in recs])
              for name, recs in records_by_name.items()}
    return line_plot(series, title=title, xlabel="epoch", ylabel="loss",
                     logy=logy)


def save_svg(path, svg_text):
    with open(path, "w") as fh:
        fh.write(svg_text)
        if not svg_text.endswith("\n"):
            fh.write("\n")
