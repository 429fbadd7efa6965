"""Overlap and boundary-distance metrics for 2-D binary masks.

Distances are Euclidean between 4-connected boundary pixels; ``spacing`` is
(row, col) physical size per pixel. HD95 is the 95th percentile of the
pooled directed distances from both boundaries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _edt
from .core import SINGLE_ROIS, LabelVolume, Roi, as_mask, count_pixels, extract_roi_mask, roi_mask_from_slice
from .resample import resize


class UndefinedHausdorffError(ValueError):
    pass


class MissingPredictionError(LookupError):
    def __init__(self, missing: Sequence[tuple[str, int, str]]):
        self.missing = list(missing)
        shown = ", ".join(f"({c}, z={z}, {r})" for c, z, r in self.missing)
        super().__init__(f"missing predictions for {len(self.missing)} kept slice(s): {shown}")


def percentiles(values, qs: Sequence[float]) -> list[float]:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    if n == 0:
        raise ValueError("percentile of an empty list")
    out = []
    for q in qs:
        if not 0 <= q <= 100:
            raise ValueError(f"percentile q={q} outside [0, 100]")
        r = (n - 1) * q / 100.0
        lo = int(np.floor(r))
        hi = min(lo + 1, n - 1)
        frac = r - lo
        out.append(float(v[lo] + (v[hi] - v[lo]) * frac) if frac else float(v[lo]))
    return out


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile: rank ``(n - 1) * q / 100``."""
    return percentiles(values, [q])[0]


def boundary_mask(mask) -> np.ndarray:
    m = as_mask(mask)
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def boundary(mask) -> np.ndarray:
    """(k, 2) array of (row, col) boundary pixels, row-major order."""
    return np.argwhere(boundary_mask(mask))


def distance_transform(mask, spacing: Sequence[float] = (1.0, 1.0)) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest true pixel."""
    m = as_mask(mask)
    if not m.any():
        raise ValueError("distance transform of an empty mask")
    sy, sx = (float(s) for s in spacing)
    return np.sqrt(_edt.squared_edt_2d(np.ascontiguousarray(m), sy, sx))


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")


def dice(gt, pred) -> float:
    x, y = as_mask(gt), as_mask(pred)
    _check_dims(x, y)
    nx, ny = count_pixels(x), count_pixels(y)
    if nx + ny == 0:
        return 1.0
    return 2.0 * count_pixels(x & y) / (nx + ny)


def directed_distances(src, dst, spacing=(1.0, 1.0)) -> np.ndarray:
    """Distance from each boundary pixel of ``src`` to the boundary of ``dst``."""
    dt = distance_transform(boundary_mask(dst), spacing)
    return dt[boundary_mask(src)]


def hausdorff(gt, pred, spacing: Sequence[float] = (1.0, 1.0), q: float = 95.0) -> tuple[float, float]:
    """Return ``(hd, hd_q)``; raises if either mask is empty."""
    x, y = as_mask(gt), as_mask(pred)
    _check_dims(x, y)
    if not x.any() or not y.any():
        raise UndefinedHausdorffError("Hausdorff distance undefined for an empty mask")
    d1 = directed_distances(x, y, spacing)
    d2 = directed_distances(y, x, spacing)
    pooled = np.concatenate([d1, d2])
    return float(max(d1.max(), d2.max())), percentile(pooled, q)


@dataclass(frozen=True)
class MetricResult:
    dice: float
    hd: float | None
    hd95: float | None
    gt_pixels: int
    pred_pixels: int
    defined_hd: bool


def compute_metrics(gt, pred, spacing=(1.0, 1.0), q: float = 95.0) -> MetricResult:
    x, y = as_mask(gt), as_mask(pred)
    d = dice(x, y)
    try:
        hd, hdq = hausdorff(x, y, spacing, q)
        defined = True
    except UndefinedHausdorffError:
        hd = hdq = None
        defined = False
    return MetricResult(d, hd, hdq, count_pixels(x), count_pixels(y), defined)


class FilterMode(str, enum.Enum):
    ALL_ROIS = "all_rois"
    TARGET_ROI = "target_roi"


@dataclass(frozen=True)
class FilterPolicy:
    min_pixels: int = 250
    mode: FilterMode = FilterMode.ALL_ROIS

    def __post_init__(self):
        if self.min_pixels < 0:
            raise ValueError("min_pixels must be >= 0")
        object.__setattr__(self, "mode", FilterMode(self.mode))

    def to_json(self) -> dict:
        return {"min_pixels": self.min_pixels, "mode": self.mode.value}


def roi_counts(plane: np.ndarray) -> dict[Roi, int]:
    return {r: count_pixels(roi_mask_from_slice(plane, r)) for r in (*SINGLE_ROIS, Roi.WHOLE_TUMOR)}


def keep_by_counts(counts: Mapping[Roi, int], roi: Roi, policy: FilterPolicy) -> bool:
    if policy.mode is FilterMode.ALL_ROIS:
        return all(counts[r] >= policy.min_pixels for r in SINGLE_ROIS)
    return counts[Roi(roi)] >= policy.min_pixels


def filter_slice(labels: LabelVolume, z: int, roi: Roi, policy: FilterPolicy = FilterPolicy()) -> bool:
    """True if slice ``z`` is kept for scoring ``roi``."""
    if not 0 <= z < labels.shape[0]:
        raise IndexError(f"slice index {z} out of range [0, {labels.shape[0]})")
    return keep_by_counts(roi_counts(labels.labels[z]), roi, policy)


def kept_slices(labels: LabelVolume, roi: Roi, policy: FilterPolicy) -> list[int]:
    return [z for z in range(labels.shape[0]) if filter_slice(labels, z, roi, policy)]


@dataclass(frozen=True)
class SliceRecord:
    case_id: str
    z: int
    roi: Roi
    dice: float
    hd95: float | None
    defined_hd: bool
    gt_pixels: int
    pred_pixels: int
    model_tag: str
    hd: float | None = None

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.case_id, self.z, Roi(self.roi).value)

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "z": self.z,
            "roi": Roi(self.roi).value,
            "dice": self.dice,
            "hd": self.hd,
            "hd95": self.hd95,
            "defined_hd": self.defined_hd,
            "gt_pixels": self.gt_pixels,
            "pred_pixels": self.pred_pixels,
            "model_tag": self.model_tag,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "SliceRecord":
        return cls(
            case_id=str(d["case_id"]),
            z=int(d["z"]),
            roi=Roi.parse(d["roi"]),
            dice=float(d["dice"]),
            hd95=None if d.get("hd95") is None else float(d["hd95"]),
            defined_hd=bool(d["defined_hd"]),
            gt_pixels=int(d["gt_pixels"]),
            pred_pixels=int(d["pred_pixels"]),
            model_tag=str(d.get("model_tag", "")),
            hd=None if d.get("hd") is None else float(d["hd"]),
        )


PredictionSource = Mapping[int, np.ndarray] | Callable[[int], np.ndarray | None]


def evaluate_case(
    case_id: str,
    labels: LabelVolume,
    predictions: PredictionSource,
    roi: Roi,
    policy: FilterPolicy = FilterPolicy(),
    spacing: Sequence[float] = (1.0, 1.0),
    model_tag: str = "",
    q: float = 95.0,
) -> list[SliceRecord]:
    """Score every kept slice of one case for one ROI.

    ``predictions`` maps z to a predicted mask (or is a callable returning one
    or None). When a prediction's resolution differs from the label slice the
    ground truth is resized to it with nearest-neighbour sampling; the filter
    always uses native-resolution label counts.
    """
    roi = Roi(roi)
    get = predictions if callable(predictions) else predictions.get
    kept = kept_slices(labels, roi, policy)
    preds, missing = {}, []
    for z in kept:
        p = get(z)
        if p is None:
            missing.append((case_id, z, roi.value))
        else:
            preds[z] = as_mask(p)
    if missing:
        raise MissingPredictionError(missing)
    records = []
    for z in kept:
        gt = extract_roi_mask(labels, z, roi)
        pred = preds[z]
        if pred.shape != gt.shape:
            gt = resize(gt, pred.shape[0], pred.shape[1], mode="nearest")
        m = compute_metrics(gt, pred, spacing, q)
        records.append(
            SliceRecord(case_id, z, roi, m.dice, m.hd95, m.defined_hd, m.gt_pixels, m.pred_pixels, model_tag, m.hd)
        )
    return records
