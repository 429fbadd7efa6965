"""Regenerate the mini-dataset, synthetic predictions and golden metric files.

    python3 tests/fixtures/make_fixtures.py

Metric goldens come from the brute-force oracles in ``tests/oracles.py``,
not from the package's kernels. Output checksums for preprocess and render
are regression locks written by ``--lock-checksums`` after a reviewed run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

import oracles  # noqa: E402
from tumorseg.core import LabelVolume, MultimodalVolume  # noqa: E402
from tumorseg.fileutil import write_png  # noqa: E402
from tumorseg.nifti import write_nifti  # noqa: E402

CASES = [f"mini_{i:03d}" for i in range(1, 5)]
SHAPE = (8, 16, 16)  # z, y, x
MIN_PIXELS = 8
MODELS = ("improved", "pretrained")
ROIS = ("enhancing", "non_enhancing", "edema", "whole_tumor")
CODES = {"edema": (1,), "non_enhancing": (2,), "enhancing": (3,), "whole_tumor": (1, 2, 3)}

DATA = HERE / "mini"
PREDS = HERE / "mini_preds"
GOLDEN = HERE / "golden"


def _ellipse(cy, cx, ry, rx):
    yy, xx = np.mgrid[0:SHAPE[1], 0:SHAPE[2]]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def make_labels(k: int) -> np.ndarray:
    lab = np.zeros(SHAPE, np.uint8)
    cy, cx = 7.5 + 0.5 * (k % 2), 7.0 + 0.5 * k
    lab[1][_ellipse(cy, cx, 3.0, 4.0)] = 1
    for z in range(2, 6):
        s = 1.0 + 0.15 * (z - 2) - 0.1 * k
        lab[z][_ellipse(cy, cx, 5.5 * s, 6.0 * s)] = 1
        lab[z][_ellipse(cy, cx - 0.5, 3.6 * s, 3.8 * s)] = 2
        lab[z][_ellipse(cy + 0.5, cx, 2.1 * s, 2.2 * s)] = 3
    lab[6][_ellipse(cy, cx, 5.0, 5.0)] = 1
    lab[6][_ellipse(cy, cx, 3.0, 3.0)] = 2
    lab[6, int(cy), int(cx):int(cx) + 2] = 3
    return lab


def make_image(k: int, lab: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(100 + k)
    base = np.array([200.0, 300.0, 250.0, 400.0])
    # FLAIR, T1w, T1Gd, T2w responses to (background, edema, non-enh, enh)
    gain = np.array([[0, 500, 300, 250], [0, -50, -80, -20], [0, 40, 60, 700], [0, 450, 380, 200]], float)
    img = base[:, None, None, None] + gain[:, lab] + rng.integers(0, 40, size=(4, *SHAPE))
    return img.astype(np.float32)


def _shift(m, dy, dx):
    out = np.zeros_like(m)
    h, w = m.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = m[ys, xs]
    return out


def _dilate(m):
    out = m.copy()
    out[1:] |= m[:-1]
    out[:-1] |= m[1:]
    out[:, 1:] |= m[:, :-1]
    out[:, :-1] |= m[:, 1:]
    return out


def _erode(m):
    return ~_dilate(~m)


def predict(model: str, gt: np.ndarray, k: int, z: int, roi: str) -> np.ndarray:
    j = (k * 7 + z * 3 + ROIS.index(roi)) % 4
    if model == "improved":
        return [gt, _shift(gt, 0, 1), _dilate(gt), _shift(gt, 1, 0)][j]
    if (k, z, roi) == (2, 3, "enhancing"):
        return np.zeros_like(gt)
    return [_shift(gt, 1, 1), _erode(_dilate(_shift(gt, -1, 0))), _shift(_erode(gt), 0, -1), _dilate(_shift(gt, 2, 0))][j]


def roi_mask(lab2d, roi):
    return np.isin(lab2d, CODES[roi])


def kept(lab2d) -> bool:
    return all(int(np.isin(lab2d, c).sum()) >= MIN_PIXELS for c in ((1,), (2,), (3,)))


def write_dataset():
    for d in (DATA / "imagesTr", DATA / "labelsTr", PREDS / "improved", PREDS / "pretrained"):
        d.mkdir(parents=True, exist_ok=True)
    labels = {}
    for k, case in enumerate(CASES):
        lab = make_labels(k)
        labels[case] = lab
        write_nifti(MultimodalVolume(make_image(k, lab).astype(np.float64)), DATA / "imagesTr" / f"{case}.nii.gz")
        write_nifti(LabelVolume(lab), DATA / "labelsTr" / f"{case}.nii.gz")
        for roi in ROIS:
            vol = np.zeros(SHAPE, np.uint8)
            for z in range(SHAPE[0]):
                gt = roi_mask(lab[z], roi)
                write_png(PREDS / "improved" / f"{case}_z{z:03d}_{roi}.png", predict("improved", gt, k, z, roi))
                vol[z] = predict("pretrained", gt, k, z, roi)
            write_nifti(vol, PREDS / "pretrained" / f"{case}_{roi}.nii.gz")
    return labels


def golden_records(labels):
    recs = []
    for model in MODELS:
        for k, case in enumerate(CASES):
            lab = labels[case]
            for z in range(SHAPE[0]):
                if not kept(lab[z]):
                    continue
                for roi in ROIS:
                    gt = roi_mask(lab[z], roi)
                    pred = predict(model, gt, k, z, roi)
                    g, p = gt.tolist(), pred.tolist()
                    rec = {"model_tag": model, "case_id": case, "z": z, "roi": roi,
                           "dice": oracles.dice_sets(g, p), "gt_pixels": int(gt.sum()), "pred_pixels": int(pred.sum())}
                    if gt.any() and pred.any():
                        hd, hd95 = oracles.hausdorff_pairs(g, p)
                        rec.update(hd=hd, hd95=hd95, defined_hd=True)
                    else:
                        rec.update(hd=None, hd95=None, defined_hd=False)
                    recs.append(rec)
    return recs


def golden_tables(recs):
    cells = {}
    for model in MODELS:
        for roi in ROIS:
            vals = [r["dice"] for r in recs if r["model_tag"] == model and r["roi"] == roi]
            mean = math.fsum(vals) / len(vals)
            cells[f"{roi}/{model}"] = {"mean_dice": mean, "display": f"{mean:.2f}", "n": len(vals)}
    return cells


def _signed_rank_sums(diffs):
    mags = [abs(d) for d in diffs]
    ranks = [sum(1 for x in mags if x < m) + (sum(1 for x in mags if x == m) + 1) / 2.0 for m in mags]
    return (sum(r for r, d in zip(ranks, diffs) if d > 0), sum(r for r, d in zip(ranks, diffs) if d < 0))


def golden_compare(recs):
    by = {(r["model_tag"], r["case_id"], r["z"], r["roi"]): r["dice"] for r in recs}
    out = {}
    for roi in ROIS:
        keys = sorted((c, z) for (m, c, z, r) in by if m == MODELS[0] and r == roi)
        diffs = [by[(MODELS[0], c, z, roi)] - by[(MODELS[1], c, z, roi)] for c, z in keys]
        diffs = [d for d in diffs if d != 0]
        w_plus, w_minus = _signed_rank_sums(diffs)
        out[roi] = {"n_effective": len(diffs), "w_plus": w_plus, "w_minus": w_minus,
                    "p_value": oracles.wilcoxon_enumeration(diffs)}
    return out


def tree_checksums(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


PREPROCESS_ARGS = ["--method", "combined", "--size", "32"]
RENDER_MODEL = "pretrained"


def run_locks():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cli = [sys.executable, "-m", "tumorseg.cli"]
        subprocess.run([*cli, "preprocess", "--dataset", str(DATA), "--out", str(tmp / "pre"), *PREPROCESS_ARGS], check=True)
        subprocess.run([*cli, "evaluate", "--dataset", str(DATA), "--out", str(tmp / "ev"), "--min-pixels", str(MIN_PIXELS),
                        "--pred", f"improved={PREDS / 'improved'}", "--pred", f"pretrained={PREDS / 'pretrained'}"],
                       check=True, capture_output=True)
        subprocess.run([*cli, "render", "--dataset", str(DATA), "--report", str(tmp / "ev" / "report.json"),
                        "--pred", f"{RENDER_MODEL}={PREDS / RENDER_MODEL}", "--out", str(tmp / "render")], check=True)
        pre = {k: v for k, v in tree_checksums(tmp / "pre").items() if not k.startswith("meta/")}
        return {"preprocess_args": PREPROCESS_ARGS, "preprocess": pre,
                "render_model": RENDER_MODEL, "render": tree_checksums(tmp / "render")}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lock-checksums", action="store_true")
    args = ap.parse_args()
    labels = write_dataset()
    GOLDEN.mkdir(exist_ok=True)
    recs = golden_records(labels)
    doc = {"min_pixels": MIN_PIXELS, "records": recs, "tables": golden_tables(recs), "compare": golden_compare(recs)}
    (GOLDEN / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if args.lock_checksums:
        (GOLDEN / "checksums.json").write_text(json.dumps(run_locks(), indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
