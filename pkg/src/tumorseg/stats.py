"""Aggregation of per-slice records: Dice tables, box-plot summaries, the
Wilcoxon signed-rank comparison and tumour-size scatter data."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import TABLE_ROI_ORDER, Roi
from .metrics import SliceRecord, percentiles

EXACT_MAX_N = 25

TABLE_LABELS = {
    Roi.ENHANCING: "Enhancing",
    Roi.NON_ENHANCING: "Non-enhancing",
    Roi.EDEMA: "Edema",
    Roi.WHOLE_TUMOR: "Whole Tumor",
}


class MissingCellError(LookupError):
    pass


class DegenerateTestError(ValueError):
    pass


class KeyMismatchError(ValueError):
    def __init__(self, only_a: Sequence, only_b: Sequence):
        self.only_a, self.only_b = list(only_a), list(only_b)
        super().__init__(f"record keys differ: {len(self.only_a)} only in A {self.only_a[:10]}, "
                         f"{len(self.only_b)} only in B {self.only_b[:10]}")


def fmt2(x: float) -> str:
    return f"{x:.2f}"


@dataclass(frozen=True)
class DiceTable:
    rois: tuple[Roi, ...]
    models: tuple[str, ...]
    cells: Mapping[tuple[Roi, str], float]
    counts: Mapping[tuple[Roi, str], int]

    def cell(self, roi: Roi, model: str) -> float:
        return self.cells[(Roi(roi), model)]

    def display(self, roi: Roi, model: str) -> str:
        return fmt2(self.cell(roi, model))

    def to_text(self, title: str = "") -> str:
        lines = ["\t".join([title, *self.models])]
        for r in self.rois:
            lines.append("\t".join([TABLE_LABELS[r], *(self.display(r, m) for m in self.models)]))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["roi", "model", "mean_dice", "mean_dice_2dp", "n"])
        for r in self.rois:
            for m in self.models:
                w.writerow([r.value, m, repr(self.cell(r, m)), self.display(r, m), self.counts[(r, m)]])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "rois": [r.value for r in self.rois],
            "models": list(self.models),
            "cells": [
                {"roi": r.value, "model": m, "mean_dice": self.cell(r, m),
                 "display": self.display(r, m), "n": self.counts[(r, m)]}
                for r in self.rois for m in self.models
            ],
        }


def aggregate_table(
    records: Iterable[SliceRecord],
    rois: Sequence[Roi] = TABLE_ROI_ORDER,
    models: Sequence[str] | None = None,
) -> DiceTable:
    """Mean Dice per (ROI, model); rows follow TABLE_ROI_ORDER."""
    groups: dict[tuple[Roi, str], list[float]] = defaultdict(list)
    for rec in records:
        groups[(Roi(rec.roi), rec.model_tag)].append(rec.dice)
    if models is None:
        models = sorted({m for _, m in groups})
    rois = tuple(r for r in TABLE_ROI_ORDER if r in {Roi(x) for x in rois})
    cells, counts = {}, {}
    missing = []
    for r in rois:
        for m in models:
            vals = groups.get((r, m))
            if not vals:
                missing.append((r.value, m))
                continue
            # math.fsum keeps the mean independent of record order
            cells[(r, m)] = math.fsum(vals) / len(vals)
            counts[(r, m)] = len(vals)
    if missing:
        raise MissingCellError(f"no records for table cells {missing}")
    return DiceTable(rois, tuple(models), cells, counts)


@dataclass(frozen=True)
class BoxSummary:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: list[float] = field(default_factory=list)
    n: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def box_summary(values: Iterable[float]) -> BoxSummary:
    """Tukey box: whiskers at the most extreme points within 1.5 IQR."""
    v = np.sort(np.asarray(list(values), dtype=np.float64))
    if v.size == 0:
        raise ValueError("box summary of an empty list")
    q1, med, q3 = percentiles(v, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    outliers = [float(x) for x in v if x < lo_fence or x > hi_fence]
    return BoxSummary(med, q1, q3, float(inside.min()), float(inside.max()), outliers, int(v.size))


@dataclass(frozen=True)
class PairedTestResult:
    statistic: float  # W = min(W+, W-)
    w_plus: float
    w_minus: float
    n_effective: int
    p_value: float
    method: str  # "exact" | "normal-approx"
    n_pairs: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, ties receive the mean of the ranks they span."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def exact_signed_rank_pvalue(ranks: np.ndarray, w: float) -> float:
    """Two-sided exact p for W = min(W+, W-) by counting sign assignments.

    Ranks are doubled to integers (average ranks are multiples of 1/2) and
    the number of subsets attaining each rank sum is built by dynamic
    programming over the 2^n assignments.
    """
    r2 = [int(round(2 * r)) for r in ranks]
    total = sum(r2)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in r2:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    w2 = int(round(2 * w))
    tail = sum(counts[: w2 + 1])
    return min(1.0, 2.0 * tail / (1 << len(r2)))


def normal_signed_rank_pvalue(ranks: np.ndarray, w_plus: float) -> float:
    """Normal approximation with tie and continuity corrections."""
    n = len(ranks)
    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    if var <= 0:
        return 1.0
    z = max(abs(w_plus - mu) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], exact_max_n: int = EXACT_MAX_N) -> PairedTestResult:
    """Two-sided paired test on ``a - b``; zero differences are dropped."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be 1-D of equal length, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise ValueError("need at least one pair")
    d = a - b
    d = d[d != 0]
    n = int(d.size)
    if n == 0:
        raise DegenerateTestError("all paired differences are zero")
    ranks = average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= exact_max_n:
        p, method = exact_signed_rank_pvalue(ranks, w), "exact"
    else:
        p, method = normal_signed_rank_pvalue(ranks, w_plus), "normal-approx"
    return PairedTestResult(w, w_plus, w_minus, n, p, method, int(a.size))


SCATTER_COLUMNS = ("case_id", "z", "roi", "gt_pixels", "dice")


def scatter_export(records: Iterable[SliceRecord], sort_by_size: bool = False) -> list[tuple]:
    rows = [(r.case_id, r.z, Roi(r.roi).value, r.gt_pixels, r.dice) for r in records]
    if sort_by_size:
        rows.sort(key=lambda t: (t[3], t[0], t[1], t[2]))
    return rows


def scatter_csv(records: Iterable[SliceRecord], sort_by_size: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCATTER_COLUMNS)
    for row in scatter_export(records, sort_by_size):
        w.writerow([*row[:4], repr(row[4])])
    return buf.getvalue()


def _per_case_means(records: Sequence[SliceRecord], attr: str) -> list[float]:
    groups = defaultdict(list)
    for r in records:
        v = getattr(r, attr)
        if v is not None:
            groups[r.case_id].append(v)
    return [math.fsum(v) / len(v) for _, v in sorted(groups.items())]


def summaries(records: Sequence[SliceRecord], per_case: bool = False) -> dict[str, dict]:
    """Box summaries of Dice and HD95 per (ROI, model), keyed ``roi/model``."""
    groups = defaultdict(list)
    for r in records:
        groups[(Roi(r.roi), r.model_tag)].append(r)
    out = {}
    for roi in TABLE_ROI_ORDER:
        for model in sorted({m for _, m in groups}):
            recs = groups.get((roi, model))
            if not recs:
                continue
            if per_case:
                dice_vals = _per_case_means(recs, "dice")
                hd_vals = _per_case_means(recs, "hd95")
            else:
                dice_vals = [r.dice for r in recs]
                hd_vals = [r.hd95 for r in recs if r.defined_hd]
            out[f"{roi.value}/{model}"] = {
                "dice": box_summary(dice_vals).to_json(),
                "hd95": box_summary(hd_vals).to_json() if hd_vals else None,
                "hd95_undefined": sum(1 for r in recs if not r.defined_hd),
            }
    return out


def build_report(
    records: Sequence[SliceRecord],
    policy: Mapping,
    spacing: Sequence[float],
    resolution,
    per_case: bool = False,
    extra: Mapping | None = None,
) -> dict:
    recs = sorted(records, key=lambda r: (r.model_tag, r.case_id, r.z, Roi(r.roi).value))
    present = {Roi(r.roi) for r in recs}
    report = {
        "policy": dict(policy),
        "spacing": list(spacing),
        "resolution": resolution,
        "summary_mode": "per_case" if per_case else "per_slice",
        "records": [r.to_json() for r in recs],
        "summaries": summaries(recs, per_case),
        "tables": aggregate_table(recs, [r for r in TABLE_ROI_ORDER if r in present]).to_json() if recs else None,
    }
    if extra:
        report.update(extra)
    return report


def report_records(report: Mapping, model: str | None = None) -> list[SliceRecord]:
    recs = [SliceRecord.from_json(d) for d in report["records"]]
    tags = sorted({r.model_tag for r in recs})
    if model is None:
        if len(tags) > 1:
            raise ValueError(f"report holds several models {tags}; choose one")
        return recs
    if model not in tags:
        raise ValueError(f"model {model!r} not in report (has {tags})")
    return [r for r in recs if r.model_tag == model]


def compare_records(a: Sequence[SliceRecord], b: Sequence[SliceRecord], metric: str = "dice") -> dict:
    """Wilcoxon tests per ROI and overall, pairing records by (case, z, roi)."""
    ka = {r.key: r for r in a}
    kb = {r.key: r for r in b}
    if len(ka) != len(a) or len(kb) != len(b):
        raise ValueError("duplicate (case, z, roi) keys within a report")
    if ka.keys() != kb.keys():
        raise KeyMismatchError(sorted(ka.keys() - kb.keys()), sorted(kb.keys() - ka.keys()))
    keys = sorted(ka)

    def run(sel):
        pairs = [(getattr(ka[k], metric), getattr(kb[k], metric)) for k in sel]
        pairs = [(x, y) for x, y in pairs if x is not None and y is not None]
        if not pairs:
            return {"error": "no pairs with a defined metric"}
        try:
            res = wilcoxon_signed_rank([x for x, _ in pairs], [y for _, y in pairs])
        except DegenerateTestError as exc:
            return {"error": f"degenerate test: {exc}", "n_pairs": len(pairs)}
        return res.to_json()

    per_roi = {}
    for roi in TABLE_ROI_ORDER:
        sel = [k for k in keys if k[2] == roi.value]
        if sel:
            per_roi[roi.value] = run(sel)
    return {"metric": metric, "per_roi": per_roi, "overall": run(keys)}
