"""Seeded on-the-fly augmentation: random rotation and elastic deformation.

Every sample's randomness comes from ``derive_sample_seed(master, epoch,
index)``, so results do not depend on processing order or parallelism.
Images use bilinear sampling, masks nearest-neighbour; pixels that map
outside the source are filled with 0 / False.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .resample import quantize_u8, sample_bilinear, sample_nearest

MASK64 = (1 << 64) - 1

#: splitmix64 finaliser constants: (increment, multiplier 1, multiplier 2).
MIX_CONSTANTS = (0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB)


def _mix64(x: int) -> int:
    inc, m1, m2 = MIX_CONSTANTS
    z = (x + inc) & MASK64
    z = ((z ^ (z >> 30)) * m1) & MASK64
    z = ((z ^ (z >> 27)) * m2) & MASK64
    return z ^ (z >> 31)


def derive_sample_seed(master_seed: int, epoch: int, sample_index: int) -> int:
    """Stateless 64-bit seed for one (epoch, sample) position.

    Each input is folded in with a bijective mix, so two tuples differing
    only in ``sample_index`` can never collide.
    """
    h = _mix64(master_seed & MASK64)
    h = _mix64(h ^ (epoch & MASK64))
    return _mix64(h ^ (sample_index & MASK64))


@dataclass(frozen=True)
class AugmentationConfig:
    rotation_max_deg: float = 20.0
    p_rotate: float = 0.5
    p_elastic: float = 0.5
    elastic_alpha: float = 30.0
    elastic_sigma: float = 4.0
    master_seed: int = 0

    def __post_init__(self):
        for name in ("p_rotate", "p_elastic"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.rotation_max_deg < 0:
            raise ValueError("rotation_max_deg must be >= 0")
        if self.elastic_sigma <= 0:
            raise ValueError("elastic_sigma must be > 0")
        if self.elastic_alpha < 0:
            raise ValueError("elastic_alpha must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DisplacementField:
    dx: np.ndarray  # column displacement
    dy: np.ndarray  # row displacement


def _restore_dtype(out: np.ndarray, like: np.ndarray) -> np.ndarray:
    if like.dtype == np.uint8:
        return quantize_u8(out)
    return out


def rotate(image, mask, angle_deg: float):
    """Rotate about the image centre; positive angles turn counter-clockwise
    as displayed (matching ``np.rot90`` at +90)."""
    img, msk = np.asarray(image), np.asarray(mask, dtype=bool)
    if abs(angle_deg) > 180:
        raise ValueError(f"|angle| must be <= 180, got {angle_deg}")
    if angle_deg == 0:
        return img.copy(), msk.copy()
    h, w = img.shape[:2]
    if msk.shape != (h, w):
        raise ValueError(f"mask dims {msk.shape} differ from image dims {(h, w)}")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(angle_deg)
    cos, sin = math.cos(th), math.sin(th)
    yo, xo = np.mgrid[0:h, 0:w].astype(np.float64)
    yo -= cy
    xo -= cx
    rows = cos * yo + sin * xo + cy
    cols = -sin * yo + cos * xo + cx
    out = sample_bilinear(img, rows, cols, 0.0)
    return _restore_dtype(out, img), sample_nearest(msk, rows, cols, False)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth(plane: np.ndarray, sigma: float) -> np.ndarray:
    """Separable truncated Gaussian; the kernel is renormalised over the
    in-image taps at the borders."""
    k = gaussian_kernel(sigma)
    num = plane
    den = np.ones_like(plane)
    for axis in (0, 1):
        num = ndimage.correlate1d(num, k, axis=axis, mode="constant", cval=0.0)
        den = ndimage.correlate1d(den, k, axis=axis, mode="constant", cval=0.0)
    return num / den


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


def elastic_field(h: int, w: int, alpha: float, sigma: float, seed) -> DisplacementField:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    rng = _as_rng(seed)
    dx = rng.uniform(-1.0, 1.0, size=(h, w))
    dy = rng.uniform(-1.0, 1.0, size=(h, w))
    if alpha == 0:
        return DisplacementField(np.zeros((h, w)), np.zeros((h, w)))
    return DisplacementField(smooth(dx, sigma) * alpha, smooth(dy, sigma) * alpha)


def elastic_deform(image, mask, field: DisplacementField):
    """Backward warp: ``out(p) = in(p + d(p))``."""
    img, msk = np.asarray(image), np.asarray(mask, dtype=bool)
    h, w = img.shape[:2]
    if field.dx.shape != (h, w) or field.dy.shape != (h, w) or msk.shape != (h, w):
        raise ValueError(f"field {field.dx.shape}, image {(h, w)} and mask {msk.shape} dims must match")
    yo, xo = np.mgrid[0:h, 0:w].astype(np.float64)
    rows = yo + field.dy
    cols = xo + field.dx
    out = sample_bilinear(img, rows, cols, 0.0)
    return _restore_dtype(out, img), sample_nearest(msk, rows, cols, False)


@dataclass(frozen=True)
class AugmentationDraw:
    """The random choices for one sample, in draw order."""

    seed: int
    rotate: bool
    angle_deg: float
    elastic: bool
    field_seed: int

    def to_json(self) -> dict:
        return asdict(self)


def draw_augmentation(config: AugmentationConfig, epoch: int, sample_index: int) -> AugmentationDraw:
    seed = derive_sample_seed(config.master_seed, epoch, sample_index)
    rng = _as_rng(seed)
    u1 = rng.random()
    angle = rng.uniform(-config.rotation_max_deg, config.rotation_max_deg)
    u2 = rng.random()
    field_seed = int(rng.integers(0, 1 << 63))
    return AugmentationDraw(seed, bool(u1 < config.p_rotate), float(angle), bool(u2 < config.p_elastic), field_seed)


def apply_augmentation(image, mask, config: AugmentationConfig, draw: AugmentationDraw):
    img, msk = image, mask
    if draw.rotate:
        img, msk = rotate(img, msk, draw.angle_deg)
    if draw.elastic:
        h, w = np.asarray(img).shape[:2]
        field = elastic_field(h, w, config.elastic_alpha, config.elastic_sigma, draw.field_seed)
        img, msk = elastic_deform(img, msk, field)
    return img, msk


def augment_sample(image, mask, config: AugmentationConfig, epoch: int, sample_index: int):
    """Rotation then elastic deformation, each gated by its probability."""
    return apply_augmentation(image, mask, config, draw_augmentation(config, epoch, sample_index))


def augment_batch(
    images: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    config: AugmentationConfig,
    epoch: int,
    start_index: int = 0,
    workers: int = 1,
) -> list[tuple[np.ndarray, np.ndarray]]:
    if len(images) != len(masks):
        raise ValueError("images and masks differ in length")
    jobs = [(img, msk, start_index + i) for i, (img, msk) in enumerate(zip(images, masks))]
    if workers <= 1:
        return [augment_sample(img, msk, config, epoch, i) for img, msk, i in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda j: augment_sample(j[0], j[1], config, epoch, j[2]), jobs))
