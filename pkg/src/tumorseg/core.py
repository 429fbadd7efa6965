"""Shared domain types and elementary mask operations.

Coordinates are (row, col) = (y, x), row-major, origin top-left. Boxes are
inclusive on every side.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np


class Modality(str, enum.Enum):
    FLAIR = "FLAIR"
    T1W = "T1w"
    T1GD = "T1Gd"
    T2W = "T2w"

    @classmethod
    def parse(cls, name: str) -> "Modality":
        key = name.strip().lower().replace("-", "").replace("_", "")
        for m in cls:
            if m.value.lower() == key or m.name.lower() == key:
                return m
        raise ValueError(f"unknown modality {name!r}")


#: Canonical in-memory modality order.
CANONICAL_MODALITIES: tuple[Modality, ...] = (
    Modality.FLAIR,
    Modality.T1W,
    Modality.T1GD,
    Modality.T2W,
)


class Roi(str, enum.Enum):
    EDEMA = "edema"
    NON_ENHANCING = "non_enhancing"
    ENHANCING = "enhancing"
    WHOLE_TUMOR = "whole_tumor"

    @classmethod
    def parse(cls, name: str) -> "Roi":
        key = name.strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "nonenhancing": cls.NON_ENHANCING,
            "wholetumor": cls.WHOLE_TUMOR,
            "wt": cls.WHOLE_TUMOR,
        }
        if key in aliases:
            return aliases[key]
        for r in cls:
            if r.value == key or r.name.lower() == key:
                return r
        raise ValueError(f"unknown ROI {name!r}")


#: The three labelled sub-regions, in label-code order.
SINGLE_ROIS: tuple[Roi, ...] = (Roi.EDEMA, Roi.NON_ENHANCING, Roi.ENHANCING)

#: Decathlon label codes.
ROI_CODES: dict[Roi, int] = {Roi.EDEMA: 1, Roi.NON_ENHANCING: 2, Roi.ENHANCING: 3}

#: Row order of the result tables.
TABLE_ROI_ORDER: tuple[Roi, ...] = (
    Roi.ENHANCING,
    Roi.NON_ENHANCING,
    Roi.EDEMA,
    Roi.WHOLE_TUMOR,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultimodalVolume:
    """Four co-registered modalities, ``data[modality, z, y, x]``."""

    data: np.ndarray
    modalities: tuple[Modality, ...] = CANONICAL_MODALITIES
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] != 4:
            raise ValueError(f"expected (4, Z, Y, X) data, got shape {data.shape}")
        if min(data.shape[1:]) < 1:
            raise ValueError("spatial dims must be >= 1")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite intensities")
        if len(self.modalities) != 4:
            raise ValueError("exactly 4 modalities are required")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "modalities", tuple(Modality(m) for m in self.modalities))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])

    def modality_index(self, m: Modality) -> int:
        return self.modalities.index(Modality(m))


@dataclass(frozen=True)
class LabelVolume:
    """Integer ROI codes, ``labels[z, y, x]``."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3:
            raise ValueError(f"expected (Z, Y, X) labels, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            if not np.all(np.equal(np.mod(lab, 1), 0)):
                raise ValueError("label codes must be integers")
        lab = lab.astype(np.uint8)
        bad = ~np.isin(lab, (0, 1, 2, 3))
        if bad.any():
            raise ValueError(f"label codes outside {{0,1,2,3}}: {sorted(set(np.unique(lab[bad]).tolist()))}")
        object.__setattr__(self, "labels", _frozen(lab))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.labels.shape)

    @classmethod
    def from_codes(cls, codes: np.ndarray, remap: Mapping[int, int] | None = None) -> "LabelVolume":
        """Build from raw dataset codes, translating through ``remap`` first."""
        codes = np.asarray(codes)
        if remap:
            out = np.zeros(codes.shape, dtype=np.uint8)
            seen = np.zeros(codes.shape, dtype=bool)
            for src, dst in remap.items():
                hit = codes == src
                out[hit] = dst
                seen |= hit
            passthrough = ~seen
            out[passthrough] = codes[passthrough]
            codes = out
        return cls(codes)


@dataclass(frozen=True)
class BoundingBox:
    row_min: int
    col_min: int
    row_max: int
    col_max: int

    def __post_init__(self):
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise ValueError(f"degenerate box {self.as_list()}")

    def as_list(self) -> list[int]:
        return [self.row_min, self.col_min, self.row_max, self.col_max]

    def contains(self, row: int, col: int) -> bool:
        return self.row_min <= row <= self.row_max and self.col_min <= col <= self.col_max


class EmptyMaskError(ValueError):
    pass


def as_mask(a) -> np.ndarray:
    m = np.asarray(a)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    return m.astype(bool, copy=False)


def roi_mask_from_slice(plane: np.ndarray, roi: Roi) -> np.ndarray:
    roi = Roi(roi)
    if roi is Roi.WHOLE_TUMOR:
        return plane > 0
    return plane == ROI_CODES[roi]


def extract_roi_mask(labels: LabelVolume, z: int, roi: Roi) -> np.ndarray:
    nz = labels.shape[0]
    if not 0 <= z < nz:
        raise IndexError(f"slice index {z} out of range [0, {nz})")
    return roi_mask_from_slice(labels.labels[z], roi)


def count_pixels(mask) -> int:
    return int(np.count_nonzero(mask))


def bounding_box_prompt(mask, margin: int = 0) -> BoundingBox:
    """Tight box around the true pixels, optionally grown by ``margin`` and
    clipped to the image."""
    m = as_mask(mask)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("empty mask: no bounding-box prompt defined")
    cols = np.flatnonzero(m.any(axis=0))
    h, w = m.shape
    return BoundingBox(
        max(int(rows[0]) - margin, 0),
        max(int(cols[0]) - margin, 0),
        min(int(rows[-1]) + margin, h - 1),
        min(int(cols[-1]) + margin, w - 1),
    )


@dataclass(frozen=True)
class PromptRecord:
    case_id: str
    z: int
    roi: Roi
    box: BoundingBox

    def to_json(self) -> dict:
        return {"case_id": self.case_id, "z": self.z, "roi": Roi(self.roi).value, "box": self.box.as_list()}

    @classmethod
    def from_json(cls, d: Mapping) -> "PromptRecord":
        return cls(str(d["case_id"]), int(d["z"]), Roi.parse(d["roi"]), BoundingBox(*map(int, d["box"])))


def prompts_to_json(records: Iterable[PromptRecord]) -> str:
    return json.dumps([r.to_json() for r in records], indent=2) + "\n"


def prompts_from_json(text: str) -> list[PromptRecord]:
    return [PromptRecord.from_json(d) for d in json.loads(text)]
