"""Image augmentation for policy training: seeded crop and color jitter.

The crop window is floor(side * ratio) per side at a random offset, resized
back to the original resolution with bilinear interpolation. Jitter scales
brightness, contrast, and saturation by independent uniform factors.
Proprioceptive inputs and actions are never touched by augmentation.
"""

from __future__ import annotations

import numpy as np

CROP_RATIO = 0.95
JITTER_RANGE = (0.9, 1.1)


def crop_window(side: int, ratio: float) -> int:
    return int(np.floor(side * ratio))


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def random_crop(img: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    ch, cw = crop_window(h, ratio), crop_window(w, ratio)
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return bilinear_resize(img[top:top + ch, left:left + cw], h, w)


def center_crop(img: np.ndarray, ratio: float) -> np.ndarray:
    """Deterministic inference-time counterpart of the training crop."""
    h, w = img.shape[:2]
    ch, cw = crop_window(h, ratio), crop_window(w, ratio)
    top, left = (h - ch) // 2, (w - cw) // 2
    return bilinear_resize(img[top:top + ch, left:left + cw], h, w)


def color_jitter(img: np.ndarray, rng: np.random.Generator,
                 lo: float = JITTER_RANGE[0], hi: float = JITTER_RANGE[1]) -> np.ndarray:
    brightness, contrast, saturation = rng.uniform(lo, hi, size=3)
    out = img * brightness
    mean = out.mean()
    out = (out - mean) * contrast + mean
    gray = out.mean(axis=2, keepdims=True)
    out = gray + (out - gray) * saturation
    return np.clip(out, 0.0, 1.0)


def augment_image(img: np.ndarray, rng: np.random.Generator,
                  ratio: float = CROP_RATIO) -> np.ndarray:
    return color_jitter(random_crop(img, ratio, rng), rng)
