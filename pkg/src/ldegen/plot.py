"""Dependency-free SVG figures and binary PGM image grids."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

CANVAS = 800
MARGIN = 60
TARGET_COLOR = "#ff7f0e"
MODEL_COLOR = "#1f77b4"
LINE_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


class _Axes:
    def __init__(self, xlim, ylim):
        self.xlim = xlim
        self.ylim = ylim
        self.span = CANVAS - 2 * MARGIN

    def px(self, x):
        lo, hi = self.xlim
        return MARGIN + (np.asarray(x) - lo) / (hi - lo) * self.span

    def py(self, y):
        lo, hi = self.ylim
        return CANVAS - MARGIN - (np.asarray(y) - lo) / (hi - lo) * self.span

    def frame(self, title: str, xlabel: str, ylabel: str) -> list[str]:
        parts = [
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{self.span}" height="{self.span}" '
            'fill="none" stroke="black"/>',
            f'<text x="{CANVAS / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="18">{escape(title)}</text>',
            f'<text x="{CANVAS / 2}" y="{CANVAS - 12}" text-anchor="middle" font-size="14">{escape(xlabel)}</text>',
            f'<text x="16" y="{CANVAS / 2}" text-anchor="middle" font-size="14" '
            f'transform="rotate(-90 16 {CANVAS / 2})">{escape(ylabel)}</text>',
        ]
        for t in _nice_ticks(*self.xlim):
            x = float(self.px(t))
            parts.append(f'<line x1="{x:.2f}" y1="{CANVAS - MARGIN}" x2="{x:.2f}" y2="{CANVAS - MARGIN + 5}" stroke="black"/>')
            parts.append(f'<text x="{x:.2f}" y="{CANVAS - MARGIN + 20}" text-anchor="middle" font-size="12">{t:g}</text>')
        for t in _nice_ticks(*self.ylim):
            y = float(self.py(t))
            parts.append(f'<line x1="{MARGIN - 5}" y1="{y:.2f}" x2="{MARGIN}" y2="{y:.2f}" stroke="black"/>')
            parts.append(f'<text x="{MARGIN - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="12">{t:g}</text>')
        return parts


def _limits(arrays: Sequence[np.ndarray], pad: float = 0.05) -> tuple[float, float]:
    vals = np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.array([])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return (0.0, 1.0)
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    margin = (hi - lo) * pad
    return (lo - margin, hi + margin)


def _document(parts: list[str]) -> str:
    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" '
            f'viewBox="0 0 {CANVAS} {CANVAS}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def scatter_svg(model_points=None, target_points=None, title: str = "",
                xlabel: str = "x1", ylabel: str = "x2", radius: float = 1.2) -> str:
    """Target points (orange) are drawn first, model points (blue) on top."""
    sets = [np.atleast_2d(p)[:, :2] for p in (target_points, model_points) if p is not None and len(p)]
    axes = _Axes(_limits([s[:, 0] for s in sets]), _limits([s[:, 1] for s in sets]))
    parts = axes.frame(title, xlabel, ylabel)
    for pts, color, cls in ((target_points, TARGET_COLOR, "target"), (model_points, MODEL_COLOR, "model")):
        if pts is None or not len(pts):
            continue
        pts = np.atleast_2d(pts)
        xs, ys = axes.px(pts[:, 0]), axes.py(pts[:, 1])
        parts.append(f'<g class="{cls}" fill="{color}" fill-opacity="0.5">')
        parts.extend(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}"/>' for x, y in zip(xs, ys))
        parts.append("</g>")
    return _document(parts)


def line_svg(x, series: dict[str, np.ndarray], title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    x = np.asarray(x, dtype=np.float64)
    ys = [np.asarray(v, dtype=np.float64) for v in series.values()]
    axes = _Axes(_limits([x]), _limits(ys))
    parts = axes.frame(title, xlabel, ylabel)
    for i, (name, y) in enumerate(zip(series, ys)):
        color = LINE_COLORS[i % len(LINE_COLORS)]
        ok = np.isfinite(y)
        pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in zip(axes.px(x[ok]), axes.py(y[ok])))
        parts.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{CANVAS - MARGIN - 8}" y="{MARGIN + 18 * (i + 1)}" text-anchor="end" '
                     f'font-size="13" fill="{color}">{escape(name)}</text>')
    return _document(parts)


def image_grid(images: np.ndarray, image_shape: tuple[int, int], columns: int = 10,
               value_range: tuple[float, float] = (0.0, 1.0), gap: int = 2) -> np.ndarray:
    """Tile flattened images into one uint8 canvas."""
    images = np.asarray(images, dtype=np.float64).reshape(-1, *image_shape)
    h, w = image_shape
    n = len(images)
    cols = max(1, min(columns, n))
    rows = max(1, math.ceil(n / cols))
    canvas = np.zeros((rows * (h + gap) - gap, cols * (w + gap) - gap), dtype=np.uint8)
    lo, hi = value_range
    scaled = np.clip(np.rint((images - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    for i, img in enumerate(scaled):
        r, c = divmod(i, cols)
        canvas[r * (h + gap):r * (h + gap) + h, c * (w + gap):c * (w + gap) + w] = img
    return canvas


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + image.tobytes())
