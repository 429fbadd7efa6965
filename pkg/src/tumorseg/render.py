"""Prediction overlays: darkened anatomy, TP/FP/FN region tints and the
ground-truth border in red."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_mask
from .metrics import boundary_mask
from .resample import quantize_u8


@dataclass(frozen=True)
class OverlaySpec:
    tp_color: tuple[int, int, int] = (0, 255, 0)
    fp_color: tuple[int, int, int] = (255, 255, 0)
    fn_color: tuple[int, int, int] = (255, 128, 192)
    boundary_color: tuple[int, int, int] = (255, 0, 0)
    background_darken: float = 0.5
    region_alpha: float = 0.5

    def __post_init__(self):
        for name in ("tp_color", "fp_color", "fn_color", "boundary_color"):
            c = getattr(self, name)
            if len(c) != 3 or any(not 0 <= v <= 255 for v in c):
                raise ValueError(f"{name} must be 3 components in [0, 255], got {c}")
        for name in ("background_darken", "region_alpha"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")


def classify(gt, pred) -> dict[str, np.ndarray]:
    g, p = as_mask(gt), as_mask(pred)
    return {"tp": g & p, "fp": ~g & p, "fn": g & ~p}


def render_overlay(background, gt, pred, spec: OverlaySpec = OverlaySpec()) -> np.ndarray:
    bg = np.asarray(background, dtype=np.float64)
    g, p = as_mask(gt), as_mask(pred)
    if g.shape != p.shape or bg.shape[:2] != g.shape:
        raise ValueError(f"dims differ: background {bg.shape[:2]}, gt {g.shape}, pred {p.shape}")
    if bg.ndim == 2:
        bg = np.repeat(bg[..., None], 3, axis=2)
    elif bg.ndim != 3 or bg.shape[2] != 3:
        raise ValueError(f"background must be grayscale or RGB, got {bg.shape}")
    out = np.clip(bg, 0, 255) * spec.background_darken
    a = spec.region_alpha
    classes = classify(g, p)
    for name, color in (("tp", spec.tp_color), ("fp", spec.fp_color), ("fn", spec.fn_color)):
        sel = classes[name]
        out[sel] = (1.0 - a) * out[sel] + a * np.asarray(color, dtype=np.float64)
    out[boundary_mask(g)] = spec.boundary_color
    return quantize_u8(out)
