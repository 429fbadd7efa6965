"""Point sampling and resizing shared by preprocessing and augmentation."""

from __future__ import annotations

import numpy as np


def quantize_u8(a: np.ndarray) -> np.ndarray:
    """Round half away from zero, clip to [0, 255]."""
    a = np.asarray(a, dtype=np.float64)
    return np.clip(np.sign(a) * np.floor(np.abs(a) + 0.5), 0, 255).astype(np.uint8)


def sample_bilinear(image: np.ndarray, rows: np.ndarray, cols: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Bilinear lookup at real-valued (rows, cols); neighbours outside the
    image contribute ``fill``. ``image`` is (H, W) or (H, W, C)."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    if img.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]

    def tap(dr, dc):
        rr, cc = r0 + dr, c0 + dc
        inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = img[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
        if img.ndim == 3:
            inside = inside[..., None]
        return np.where(inside, vals, fill)

    # lerp form keeps constant regions exactly constant
    top = tap(0, 0)
    top = top + fc * (tap(0, 1) - top)
    bot = tap(1, 0)
    bot = bot + fc * (tap(1, 1) - bot)
    out = top + fr * (bot - top)
    return out


def sample_nearest(image: np.ndarray, rows: np.ndarray, cols: np.ndarray, fill=0) -> np.ndarray:
    img = np.asarray(image)
    h, w = img.shape[:2]
    rr = np.floor(rows + 0.5).astype(np.int64)
    cc = np.floor(cols + 0.5).astype(np.int64)
    inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    vals = img[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
    if img.ndim == 3:
        inside = inside[..., None]
    return np.where(inside, vals, np.asarray(fill, dtype=img.dtype))


def _aligned_coords(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1 or n_in == 1:
        return np.zeros(n_out) if n_in == 1 else np.full(n_out, (n_in - 1) / 2.0)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize(image: np.ndarray, height: int, width: int, mode: str = "bilinear") -> np.ndarray:
    """Corner-aligned resize of an (H, W) or (H, W, C) image.

    ``nearest`` never creates new values and is the only mode allowed for
    masks. bilinear on uint8 input returns rounded uint8; on floats, floats.
    """
    if height < 1 or width < 1:
        raise ValueError(f"target size must be >= 1x1, got {height}x{width}")
    img = np.asarray(image)
    h, w = img.shape[:2]
    rows = _aligned_coords(h, height)[:, None] * np.ones((1, width))
    cols = _aligned_coords(w, width)[None, :] * np.ones((height, 1))
    if mode == "nearest":
        return sample_nearest(img, rows, cols)
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    if img.dtype == bool:
        raise TypeError("boolean masks must be resized with mode='nearest'")
    # clamp so the far edge samples exactly the last pixel
    rows = np.minimum(rows, h - 1)
    cols = np.minimum(cols, w - 1)
    out = sample_bilinear(img, rows, cols)
    if img.dtype == np.uint8:
        return quantize_u8(out)
    return out
