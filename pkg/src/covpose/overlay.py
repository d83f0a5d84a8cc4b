"""8-bit grayscale pose overlays on the depth channel."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .data.types import DEPTH_RANGE_MM
from .pose import SKELETON_EDGES

BACKGROUND_MAX = 150     # depth is drawn in [0, 150] so both skeletons stay distinguishable
GT_INTENSITY = 255
PRED_INTENSITY = 200
JOINT_RADIUS = 2


def _draw(draw: ImageDraw.ImageDraw, joints: np.ndarray, value: int, dashed: bool) -> None:
    for a, b in SKELETON_EDGES:
        (x0, y0), (x1, y1) = joints[a], joints[b]
        if not dashed:
            draw.line([(x0, y0), (x1, y1)], fill=value, width=1)
            continue
        n = max(int(np.hypot(x1 - x0, y1 - y0) // 3), 1)
        for i in range(0, n, 2):
            t0, t1 = i / n, min(i + 1, n) / n
            draw.line([(x0 + t0 * (x1 - x0), y0 + t0 * (y1 - y0)), (x0 + t1 * (x1 - x0), y0 + t1 * (y1 - y0))],
                      fill=value, width=1)
    r = JOINT_RADIUS
    for x, y in joints:
        if dashed:
            draw.rectangle([x - r, y - r, x + r, y + r], outline=value)
        else:
            draw.ellipse([x - r, y - r, x + r, y + r], fill=value)


def render_overlay(depth: np.ndarray, gt: np.ndarray, pred: np.ndarray | None = None) -> np.ndarray:
    """Ground truth as solid bright lines, prediction as dashed dimmer lines, over scaled depth."""
    base = np.clip(np.asarray(depth, dtype=np.float64) / DEPTH_RANGE_MM, 0.0, 1.0) * BACKGROUND_MAX
    img = Image.fromarray(np.round(base).astype(np.uint8), mode="L")
    draw = ImageDraw.Draw(img)
    if pred is not None:
        _draw(draw, np.asarray(pred, dtype=np.float64), PRED_INTENSITY, dashed=True)
    _draw(draw, np.asarray(gt, dtype=np.float64), GT_INTENSITY, dashed=False)
    return np.asarray(img)


def save_png(path, image: np.ndarray) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(p, format="PNG")
    return p
