"""Volume normalisation, axial slicing, 3-channel packing and resizing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import (
    SINGLE_ROIS,
    EmptyMaskError,
    LabelVolume,
    Modality,
    MultimodalVolume,
    PromptRecord,
    Roi,
    bounding_box_prompt,
    extract_roi_mask,
)
from .metrics import percentiles
from .pca import PcaModel, fit_pca, pca_fuse
from .resample import quantize_u8, resize

# a PCA plane whose range is below this (in [0, 255] units) counts as constant
CONSTANT_PLANE_TOL = 1e-6


class PackingConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NormalizationParams:
    p_low: float = 0.5
    p_high: float = 99.5

    def __post_init__(self):
        if not 0 <= self.p_low < self.p_high <= 100:
            raise ValueError(f"need 0 <= p_low < p_high <= 100, got {self.p_low}, {self.p_high}")

    def to_json(self) -> dict:
        return {"p_low": self.p_low, "p_high": self.p_high, "range": [0, 255]}


def normalize_intensity(volume: MultimodalVolume, params: NormalizationParams = NormalizationParams()) -> MultimodalVolume:
    """Per-modality percentile clip over the whole volume, then map to [0, 255]."""
    out = np.empty_like(volume.data)
    for m in range(volume.data.shape[0]):
        x = volume.data[m]
        lo, hi = percentiles(x, [params.p_low, params.p_high])
        if hi == lo:
            out[m] = 0.0
            continue
        y = (np.clip(x, lo, hi) - lo) * (255.0 / (hi - lo))
        out[m] = np.clip(y, 0.0, 255.0)
    return MultimodalVolume(out, volume.modalities, volume.spacing)


def slice_axial(volume: MultimodalVolume, z: int) -> np.ndarray:
    """(Y, X, 4) plane at index ``z`` with the volume's modality order."""
    nz = volume.shape[0]
    if not 0 <= z < nz:
        raise IndexError(f"slice index {z} out of range [0, {nz})")
    return np.moveaxis(volume.data[:, z], 0, -1)


@dataclass(frozen=True)
class PackingMethod:
    kind: str  # "combined" | "repeated" | "pca2d"
    modality: Modality | None = None

    def __post_init__(self):
        if self.kind not in ("combined", "repeated", "pca2d"):
            raise PackingConfigError(f"unknown packing method {self.kind!r}")
        if self.kind == "repeated":
            mod = self.modality if self.modality is not None else Modality.T1GD
            try:
                mod = Modality.parse(mod) if isinstance(mod, str) else Modality(mod)
            except ValueError as exc:
                raise PackingConfigError(str(exc)) from None
            object.__setattr__(self, "modality", mod)
        elif self.modality is not None:
            raise PackingConfigError(f"method {self.kind!r} takes no modality")

    @property
    def tag(self) -> str:
        return f"repeated:{self.modality.value}" if self.kind == "repeated" else self.kind

    @classmethod
    def parse(cls, text: str) -> "PackingMethod":
        kind, _, mod = text.strip().lower().partition(":")
        kind = {"method1": "combined", "method2": "repeated", "method3": "pca2d", "pca": "pca2d"}.get(kind, kind)
        if kind == "repeated":
            return cls("repeated", mod or None)
        if mod:
            raise PackingConfigError(f"method {kind!r} takes no modality")
        return cls(kind)


COMBINED = PackingMethod("combined")
PCA2D = PackingMethod("pca2d")


def repeated(modality: Modality | str = Modality.T1GD) -> PackingMethod:
    return PackingMethod("repeated", modality)


#: Channel order for the combined method.
COMBINED_ORDER = (Modality.FLAIR, Modality.T1GD, Modality.T2W)


@dataclass(frozen=True)
class PackedSlice:
    channels: np.ndarray  # (H, W, 3) uint8
    method: str
    case_id: str = ""
    z: int = -1

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[2] != 3 or self.channels.dtype != np.uint8:
            raise ValueError("PackedSlice needs (H, W, 3) uint8 channels")


def rescale_plane(plane: np.ndarray) -> np.ndarray:
    lo, hi = float(plane.min()), float(plane.max())
    if hi - lo <= CONSTANT_PLANE_TOL:
        return np.zeros_like(plane, dtype=np.float64)
    return (plane - lo) * (255.0 / (hi - lo))


def pack_channels(
    slice4,
    method: PackingMethod = COMBINED,
    modalities: tuple[Modality, ...] = (Modality.FLAIR, Modality.T1W, Modality.T1GD, Modality.T2W),
    case_id: str = "",
    z: int = -1,
    pca_model: PcaModel | None = None,
) -> PackedSlice:
    """Pack an (H, W, 4) normalised slice into three 8-bit channels."""
    s = np.asarray(slice4, dtype=np.float64)
    if s.ndim != 3 or s.shape[2] != 4:
        raise ValueError(f"expected (H, W, 4) slice, got {s.shape}")
    if isinstance(method, str):
        method = PackingMethod.parse(method)
    mods = [Modality(m) for m in modalities]
    if method.kind == "combined":
        planes = s[..., [mods.index(m) for m in COMBINED_ORDER]]
    elif method.kind == "repeated":
        if method.modality not in mods:
            raise PackingConfigError(f"modality {method.modality} not present in slice")
        planes = np.repeat(s[..., mods.index(method.modality)][..., None], 3, axis=2)
    else:
        fused = pca_fuse(s, pca_model)
        planes = np.stack([rescale_plane(fused[..., k]) for k in range(3)], axis=-1)
    return PackedSlice(quantize_u8(planes), method.tag, case_id, z)


def resize_packed(packed: PackedSlice, size: int) -> PackedSlice:
    if packed.channels.shape[:2] == (size, size):
        return packed
    return PackedSlice(resize(packed.channels, size, size, "bilinear"), packed.method, packed.case_id, packed.z)


@dataclass
class CaseSlices:
    """Everything preprocessing emits for one case."""

    case_id: str
    packed: list[PackedSlice] = field(default_factory=list)
    masks: dict[tuple[int, Roi], np.ndarray] = field(default_factory=dict)
    prompts: list[PromptRecord] = field(default_factory=list)


def iter_case_slices(
    case_id: str,
    volume: MultimodalVolume,
    labels: LabelVolume,
    method: PackingMethod,
    params: NormalizationParams = NormalizationParams(),
    size: int = 1024,
    pca_scope: str = "slice",
    prompt_margin: int = 0,
) -> Iterator[tuple[PackedSlice, dict[Roi, np.ndarray], list[PromptRecord]]]:
    """normalise -> slice -> pack -> resize, one axial slice at a time.

    Yields the packed slice, its resized ground-truth masks for every ROI,
    and the box prompts for each non-empty mask.
    """
    if volume.shape != labels.shape:
        raise ValueError(f"volume dims {volume.shape} differ from label dims {labels.shape}")
    norm = normalize_intensity(volume, params)
    model = None
    if method.kind == "pca2d" and pca_scope == "volume":
        model = fit_pca(np.moveaxis(norm.data, 0, -1).reshape(-1, 4))
    for z in range(volume.shape[0]):
        packed = pack_channels(slice_axial(norm, z), method, norm.modalities, case_id, z, model)
        packed = resize_packed(packed, size)
        masks, prompts = {}, []
        for roi in (*SINGLE_ROIS, Roi.WHOLE_TUMOR):
            m = extract_roi_mask(labels, z, roi)
            if m.shape != (size, size):
                m = resize(m, size, size, "nearest")
            masks[roi] = m
            try:
                prompts.append(PromptRecord(case_id, z, roi, bounding_box_prompt(m, prompt_margin)))
            except EmptyMaskError:
                pass
        yield packed, masks, prompts
