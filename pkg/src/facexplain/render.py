"""Diverging purple-neutral-orange rendering of similarity maps and charts."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image, ImageDraw, ImageFont  # noqa: E402

PURPLE = np.array([94.0, 60.0, 153.0])    # -1: dissimilar
NEUTRAL = np.array([247.0, 247.0, 247.0])  # 0
ORANGE = np.array([230.0, 97.0, 1.0])     # +1: similar
# smallest rendered magnitude for a nonzero value, so tiny values keep their
# hue after rounding to uint8 (purple needs blue-red >= 2 levels)
MIN_VISIBLE = 2.0 / 59.0


def colorize(values) -> np.ndarray:
    """Map values in [-1, 1] to uint8 RGB; linear on each side of zero.

    Nonzero magnitudes below ``MIN_VISIBLE`` are lifted to it, which keeps the
    map weakly monotone while guaranteeing the sign is visible.
    """
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    v = (np.sign(v) * np.maximum(np.abs(v), MIN_VISIBLE * (v != 0)))[..., None]
    pos = NEUTRAL + v * (ORANGE - NEUTRAL)
    neg = NEUTRAL + (-v) * (PURPLE - NEUTRAL)
    rgb = np.where(v >= 0, pos, neg)
    return np.rint(rgb).astype(np.uint8)


def hue_family(rgb) -> str:
    """Classify a rendered color as ``orange``, ``purple`` or ``neutral``."""
    r, g, b = (int(c) for c in rgb)
    if r == g == b:
        return "neutral"
    return "orange" if r > b else "purple"


def legend_strip(height: int, width: int = 18) -> np.ndarray:
    vals = np.linspace(1.0, -1.0, height)[:, None].repeat(width, axis=1)
    strip = colorize(vals)
    img = Image.fromarray(strip)
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    for label, y in (("+1", 0), ("0", height // 2 - 5), ("-1", height - 11)):
        draw.text((2, y), label, fill=(0, 0, 0), font=font)
    return np.asarray(img)


def overlay(image: np.ndarray, values: np.ndarray, alpha: float = 0.5, legend: bool = True) -> np.ndarray:
    """Blend the colorized map over the image; optionally append a legend strip."""
    base = np.asarray(image, dtype=np.float64)
    blended = np.rint((1.0 - alpha) * base + alpha * colorize(values)).astype(np.uint8)
    if not legend:
        return blended
    gap = np.full((blended.shape[0], 2, 3), 255, dtype=np.uint8)
    return np.concatenate([blended, gap, legend_strip(blended.shape[0])], axis=1)


def side_by_side(panels, gap: int = 4) -> np.ndarray:
    h = max(p.shape[0] for p in panels)
    padded = []
    for i, p in enumerate(panels):
        if p.shape[0] < h:
            p = np.concatenate([p, np.full((h - p.shape[0],) + p.shape[1:], 255, np.uint8)])
        padded.append(p)
        if i < len(panels) - 1:
            padded.append(np.full((h, gap, 3), 255, np.uint8))
    return np.concatenate(padded, axis=1)


def _figure_png(fig) -> np.ndarray:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"))


def explanation_panel(image_a, image_b, explanation) -> np.ndarray:
    """Maps for both images (S0, S1, S_AVG) next to the per-region contribution chart."""
    fig = plt.figure(figsize=(11, 4.6))
    grid = fig.add_gridspec(2, 4, width_ratios=[1, 1, 1, 1.6])
    rows = [("A", image_a, 0), ("B", image_b, 1)]
    for r, (label, img, i) in enumerate(rows):
        for c, (name, maps) in enumerate((("S0", explanation.s0), ("S1", explanation.s1),
                                          ("S_AVG", explanation.s_avg))):
            ax = fig.add_subplot(grid[r, c])
            ax.imshow(overlay(img, maps[i].per_pixel, legend=False))
            ax.set_title(f"{name} ({label})", fontsize=9)
            ax.axis("off")
    ax = fig.add_subplot(grid[:, 3])
    rows_c = explanation.table.rows
    vals = np.array([r.c for r in rows_c])
    scale = np.abs(vals).max() or 1.0
    ax.barh([r.region for r in rows_c], vals, color=colorize(vals / scale) / 255.0, edgecolor="0.3")
    ax.axvline(0, color="0.3", lw=0.8)
    ax.invert_yaxis()
    ax.ticklabel_format(axis="x", style="sci", scilimits=(-2, 2))
    ax.locator_params(axis="x", nbins=5)
    ax.tick_params(labelsize=8)
    ax.set_title(f"contribution C_n (score {explanation.base_score:.4f})", fontsize=9)
    fig.tight_layout()
    return _figure_png(fig)


def concept_chart(ranking) -> np.ndarray:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    names = list(ranking.order)
    ax.bar(names, [ranking.borda_scores[n] for n in names], color="#e66101")
    ax.set_ylabel("Borda total")
    ax.set_title(f"top {len(names)} concepts over {ranking.n_images} images", fontsize=10)
    ax.tick_params(axis="x", labelrotation=45, labelsize=8)
    fig.tight_layout()
    return _figure_png(fig)
