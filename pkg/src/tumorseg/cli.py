"""Command-line entry point: ``tumorseg <command> [options]``.

Options resolve as built-in defaults < JSON ``--config`` file < flags.
Exit codes: 0 success, 1 validation error, 2 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .augment import AugmentationConfig, apply_augmentation, draw_augmentation
from .core import TABLE_ROI_ORDER, Modality, Roi, extract_roi_mask, prompts_to_json
from .dataset import DatasetManifest, read_split, scan_dataset, split_dataset, write_split
from .fileutil import atomic_write_text, dump_json, read_json, read_mask_png, read_png, write_json, write_png
from .metrics import FilterMode, FilterPolicy, MissingPredictionError, evaluate_case
from .nifti import NiftiError, load_labels, load_multimodal, read_nifti
from .preprocess import NormalizationParams, PackingMethod, iter_case_slices, normalize_intensity
from .render import OverlaySpec, render_overlay
from .resample import quantize_u8, resize
from .stats import KeyMismatchError, build_report, compare_records, report_records, scatter_csv, aggregate_table

log = logging.getLogger("tumorseg")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2

DEFAULTS: dict[str, dict] = {
    "preprocess": {
        "method": "combined",
        "clip_low": 0.5,
        "clip_high": 99.5,
        "size": 1024,
        "source_order": "FLAIR,T1w,T1Gd,T2w",
        "label_remap": None,
        "pca_scope": "slice",
        "prompt_margin": 0,
        "workers": 1,
    },
    "split": {"train_frac": 0.8, "seed": 0},
    "augment-preview": {
        "rotation_max": 20.0,
        "p_rotate": 0.5,
        "p_elastic": 0.5,
        "elastic_alpha": 30.0,
        "elastic_sigma": 4.0,
        "seed": 0,
        "epoch": 0,
        "start_index": 0,
        "count": 4,
    },
    "evaluate": {
        "pred": [],
        "split_file": None,
        "subset": None,
        "rois": "enhancing,non_enhancing,edema,whole_tumor",
        "min_pixels": 250,
        "filter_mode": "all_rois",
        "spacing": "1,1",
        "per_case": False,
        "label_remap": None,
        "workers": 1,
    },
    "compare": {"model_a": None, "model_b": None, "metric": "dice", "out": None},
    "render": {
        "model": None,
        "background_modality": "FLAIR",
        "source_order": "FLAIR,T1w,T1Gd,T2w",
        "clip_low": 0.5,
        "clip_high": 99.5,
        "darken": 0.5,
        "alpha": 0.5,
        "label_remap": None,
    },
}

REQUIRED = {
    "preprocess": ("dataset", "out"),
    "split": ("dataset", "out"),
    "augment-preview": ("image", "mask", "out"),
    "evaluate": ("dataset", "out"),
    "compare": ("report_a", "report_b"),
    "render": ("dataset", "report", "pred", "out"),
}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- helpers


def _parse_remap(text) -> dict[int, int] | None:
    if not text:
        return None
    if isinstance(text, dict):
        return {int(k): int(v) for k, v in text.items()}
    out = {}
    for part in str(text).split(","):
        src, _, dst = part.partition(":")
        out[int(src)] = int(dst)
    return out


def _parse_spacing(text) -> tuple[float, float]:
    vals = [float(v) for v in (text.split(",") if isinstance(text, str) else text)]
    if len(vals) != 2 or min(vals) <= 0:
        raise UsageError(f"spacing needs two positive values 'row,col', got {text!r}")
    return vals[0], vals[1]


def _parse_preds(items) -> dict[str, Path]:
    out = {}
    for item in items or []:
        tag, sep, path = str(item).partition("=")
        if not sep or not tag:
            raise UsageError(f"--pred expects TAG=DIR, got {item!r}")
        out[tag] = Path(path)
    return out


def _source_order(text) -> list[Modality]:
    return [Modality.parse(s) for s in (text.split(",") if isinstance(text, str) else text)]


def _map_cases(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class PredictionStore:
    """Predicted masks in a directory: ``{case}_z{z:03}_{roi}.png`` files or
    ``{case}_{roi}.nii[.gz]`` uint8 volumes."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._volumes: dict[tuple[str, str], np.ndarray | None] = {}

    def _volume(self, case_id: str, roi: str):
        key = (case_id, roi)
        if key not in self._volumes:
            vol = None
            for ext in (".nii.gz", ".nii"):
                p = self.root / f"{case_id}_{roi}{ext}"
                if p.exists():
                    _, vol = read_nifti(p)
                    break
            self._volumes[key] = vol
        return self._volumes[key]

    def get(self, case_id: str, z: int, roi: Roi) -> np.ndarray | None:
        roi = Roi(roi).value
        png = self.root / f"{case_id}_z{z:03d}_{roi}.png"
        if png.exists():
            return read_mask_png(png)
        vol = self._volume(case_id, roi)
        if vol is not None and 0 <= z < vol.shape[0]:
            return vol[z] > 0
        return None


def _load_manifest(cfg) -> DatasetManifest:
    manifest = scan_dataset(cfg["dataset"])
    if cfg.get("split_file"):
        manifest = read_split(manifest, cfg["split_file"])
    return manifest


# ---------------------------------------------------------------- commands


def cmd_preprocess(cfg: dict) -> int:
    method = PackingMethod.parse(cfg["method"])
    params = NormalizationParams(float(cfg["clip_low"]), float(cfg["clip_high"]))
    size = int(cfg["size"])
    order = _source_order(cfg["source_order"])
    remap = _parse_remap(cfg["label_remap"])
    out = Path(cfg["out"])
    manifest = scan_dataset(cfg["dataset"])

    def run(case):
        try:
            volume = load_multimodal(case.image, order)
            labels = load_labels(case.label, remap)
        except NiftiError as exc:
            raise NiftiError(exc.field, f"case {case.case_id}: {exc}") from exc
        slices, prompts = [], []
        for packed, masks, recs in iter_case_slices(
            case.case_id, volume, labels, method, params, size, cfg["pca_scope"], int(cfg["prompt_margin"])
        ):
            name = f"{case.case_id}_z{packed.z:03d}"
            write_png(out / "slices" / f"{name}.png", packed.channels)
            for roi, m in masks.items():
                write_png(out / "masks" / f"{name}_{roi.value}.png", m)
            slices.append({"z": packed.z, "file": f"slices/{name}.png"})
            prompts.extend(recs)
        atomic_write_text(out / "prompts" / f"{case.case_id}.json", prompts_to_json(prompts))
        write_json(out / "meta" / f"{case.case_id}.json", {
            "case_id": case.case_id,
            "method": method.tag,
            "normalization": params.to_json(),
            "source_dims": list(volume.shape),
            "size": [size, size],
            "slices": slices,
            "config": cfg,
        })
        return len(slices)

    counts = _map_cases(run, manifest.cases, int(cfg["workers"]))
    log.info("preprocessed %d cases, %d slices", len(counts), sum(counts))
    return EXIT_OK


def cmd_split(cfg: dict) -> int:
    manifest = split_dataset(scan_dataset(cfg["dataset"]), float(cfg["train_frac"]), int(cfg["seed"]))
    write_split(manifest, cfg["out"])
    n_train = sum(1 for v in manifest.split.values() if v == "train")
    log.info("split %d cases: %d train, %d test", len(manifest.cases), n_train, len(manifest.cases) - n_train)
    return EXIT_OK


def cmd_augment_preview(cfg: dict) -> int:
    conf = AugmentationConfig(
        rotation_max_deg=float(cfg["rotation_max"]),
        p_rotate=float(cfg["p_rotate"]),
        p_elastic=float(cfg["p_elastic"]),
        elastic_alpha=float(cfg["elastic_alpha"]),
        elastic_sigma=float(cfg["elastic_sigma"]),
        master_seed=int(cfg["seed"]),
    )
    image = read_png(cfg["image"])
    mask = read_mask_png(cfg["mask"])
    if image.shape[:2] != mask.shape:
        raise UsageError(f"image {image.shape[:2]} and mask {mask.shape} dims differ")
    out = Path(cfg["out"])
    epoch = int(cfg["epoch"])
    draws = []
    for k in range(int(cfg["count"])):
        idx = int(cfg["start_index"]) + k
        draw = draw_augmentation(conf, epoch, idx)
        img2, mask2 = apply_augmentation(image, mask, conf, draw)
        stem = f"e{epoch:03d}_s{idx:05d}"
        write_png(out / f"{stem}_before.png", image)
        write_png(out / f"{stem}_after.png", quantize_u8(img2))
        write_png(out / f"{stem}_mask_before.png", mask)
        write_png(out / f"{stem}_mask_after.png", mask2)
        draws.append({"epoch": epoch, "sample_index": idx, **draw.to_json()})
    write_json(out / "params.json", {"config": conf.to_json(), "draws": draws})
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    preds = _parse_preds(cfg["pred"])
    if not preds:
        raise UsageError("evaluate needs at least one --pred TAG=DIR")
    for tag, d in preds.items():
        if not d.is_dir():
            raise FileNotFoundError(f"prediction directory for {tag!r} not found: {d}")
    policy = FilterPolicy(int(cfg["min_pixels"]), FilterMode(cfg["filter_mode"]))
    spacing = _parse_spacing(cfg["spacing"])
    rois = [Roi.parse(r) for r in (cfg["rois"].split(",") if isinstance(cfg["rois"], str) else cfg["rois"])]
    remap = _parse_remap(cfg["label_remap"])
    manifest = _load_manifest(cfg)
    subset = cfg["subset"] or ("test" if manifest.split is not None else "all")
    cases = manifest.subset(subset)
    stores = {tag: PredictionStore(d) for tag, d in preds.items()}

    def run(case):
        labels = load_labels(case.label, remap)
        recs, missing, shapes = [], [], set()
        for tag, store in stores.items():
            for roi in rois:
                def get(z, store=store, roi=roi):
                    m = store.get(case.case_id, z, roi)
                    if m is not None:
                        shapes.add(m.shape)
                    return m
                try:
                    recs.extend(evaluate_case(case.case_id, labels, get, roi, policy, spacing, tag))
                except MissingPredictionError as exc:
                    missing.extend((tag, *k) for k in exc.missing)
        return recs, missing, shapes

    results = _map_cases(run, cases, int(cfg["workers"]))
    missing = [m for _, ms, _ in results for m in ms]
    if missing:
        for tag, case_id, z, roi in missing:
            print(f"missing prediction: model={tag} case={case_id} z={z} roi={roi}", file=sys.stderr)
        print(f"{len(missing)} missing prediction(s)", file=sys.stderr)
        return EXIT_VALIDATION
    records = [r for recs, _, _ in results for r in recs]
    shapes = sorted({s for _, _, ss in results for s in ss})
    resolution = list(shapes[0]) if len(shapes) == 1 else [list(s) for s in shapes]
    report = build_report(
        records, policy.to_json(), spacing, resolution, bool(cfg["per_case"]),
        extra={"subset": subset, "cases": [c.case_id for c in cases], "models": sorted(preds), "config": cfg},
    )
    out = Path(cfg["out"])
    write_json(out / "report.json", report)
    atomic_write_text(out / "scatter.csv", scatter_csv(records, sort_by_size=True))
    if records:
        present = [r for r in TABLE_ROI_ORDER if r in {rec.roi for rec in records}]
        table = aggregate_table(records, present, sorted(preds))
        atomic_write_text(out / "table.csv", table.to_csv())
        atomic_write_text(out / "table.txt", table.to_text("ROI"))
        print(table.to_text("ROI"), end="")
    return EXIT_OK


def cmd_compare(cfg: dict) -> int:
    ra, rb = read_json(cfg["report_a"]), read_json(cfg["report_b"])
    a = report_records(ra, cfg["model_a"])
    b = report_records(rb, cfg["model_b"])
    try:
        result = compare_records(a, b, cfg["metric"])
    except KeyMismatchError as exc:
        for k in exc.only_a:
            print(f"only in A: {k}", file=sys.stderr)
        for k in exc.only_b:
            print(f"only in B: {k}", file=sys.stderr)
        return EXIT_VALIDATION
    result["model_a"] = a[0].model_tag if a else cfg["model_a"]
    result["model_b"] = b[0].model_tag if b else cfg["model_b"]
    text = dump_json(result)
    if cfg["out"]:
        atomic_write_text(cfg["out"], text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_render(cfg: dict) -> int:
    report = read_json(cfg["report"])
    preds = _parse_preds(cfg["pred"] if isinstance(cfg["pred"], list) else [cfg["pred"]])
    model = cfg["model"] or (next(iter(preds)) if len(preds) == 1 else None)
    if model is None or model not in preds:
        raise UsageError(f"choose one of the prediction models {sorted(preds)} with --model")
    records = report_records(report, model)
    spec = OverlaySpec(background_darken=float(cfg["darken"]), region_alpha=float(cfg["alpha"]))
    params = NormalizationParams(float(cfg["clip_low"]), float(cfg["clip_high"]))
    bg_mod = Modality.parse(cfg["background_modality"])
    manifest = scan_dataset(cfg["dataset"])
    store = PredictionStore(preds[model])
    out = Path(cfg["out"])
    remap = _parse_remap(cfg["label_remap"])
    by_case: dict[str, list] = {}
    for r in records:
        by_case.setdefault(r.case_id, []).append(r)
    for case_id, recs in sorted(by_case.items()):
        case = manifest.get(case_id)
        vol = normalize_intensity(load_multimodal(case.image, _source_order(cfg["source_order"])), params)
        labels = load_labels(case.label, remap)
        m_idx = vol.modality_index(bg_mod)
        for r in sorted(recs, key=lambda r: (r.z, Roi(r.roi).value)):
            pred = store.get(case_id, r.z, r.roi)
            if pred is None:
                raise MissingPredictionError([(case_id, r.z, Roi(r.roi).value)])
            gt = extract_roi_mask(labels, r.z, r.roi)
            bg = quantize_u8(vol.data[m_idx, r.z])
            if pred.shape != gt.shape:
                gt = resize(gt, *pred.shape, mode="nearest")
                bg = resize(bg, *pred.shape, mode="bilinear")
            img = render_overlay(bg, gt, pred, spec)
            write_png(out / f"{case_id}_z{r.z:03d}_{Roi(r.roi).value}_{model}.png", img)
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "augment-preview": cmd_augment_preview,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "render": cmd_render,
}


# ---------------------------------------------------------------- parsing


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="tumorseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=S)
        p.add_argument("--config", help="JSON file of option values; flags override it")
        return p

    p = command("preprocess", "normalise, slice, pack and resize every case")
    p.add_argument("--dataset", help="Decathlon-style root with imagesTr/ and labelsTr/")
    p.add_argument("--out")
    p.add_argument("--method", help="combined | repeated[:MODALITY] | pca2d (default combined)")
    p.add_argument("--clip-low", type=float, help="lower clipping percentile (default 0.5)")
    p.add_argument("--clip-high", type=float, help="upper clipping percentile (default 99.5)")
    p.add_argument("--size", type=int, help="output side length (default 1024)")
    p.add_argument("--source-order", help="modality stored at each 4th-axis index (default FLAIR,T1w,T1Gd,T2w)")
    p.add_argument("--label-remap", help="SRC:DST code pairs, e.g. 1:2,2:3,4:1")
    p.add_argument("--pca-scope", choices=["slice", "volume"])
    p.add_argument("--prompt-margin", type=int)
    p.add_argument("--workers", type=int)

    p = command("split", "write the persisted train/test split")
    p.add_argument("--dataset")
    p.add_argument("--out", help="split JSON path")
    p.add_argument("--train-frac", type=float, help="default 0.8")
    p.add_argument("--seed", type=int)

    p = command("augment-preview", "write before/after pairs of augmented samples")
    p.add_argument("--image", help="PNG slice")
    p.add_argument("--mask", help="PNG mask")
    p.add_argument("--out")
    p.add_argument("--rotation-max", type=float, help="default 20")
    p.add_argument("--p-rotate", type=float)
    p.add_argument("--p-elastic", type=float)
    p.add_argument("--elastic-alpha", type=float)
    p.add_argument("--elastic-sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epoch", type=int)
    p.add_argument("--start-index", type=int)
    p.add_argument("--count", type=int)

    p = command("evaluate", "score predicted masks against ground truth")
    p.add_argument("--dataset")
    p.add_argument("--pred", action="append", help="TAG=DIR, repeatable")
    p.add_argument("--out")
    p.add_argument("--split-file")
    p.add_argument("--subset", choices=["train", "test", "all"])
    p.add_argument("--rois", help="comma list (default all four)")
    p.add_argument("--min-pixels", type=int, help="slice filter threshold (default 250)")
    p.add_argument("--filter-mode", choices=[m.value for m in FilterMode])
    p.add_argument("--spacing", help="row,col pixel size (default 1,1)")
    p.add_argument("--per-case", action="store_true", help="box summaries over per-case means")
    p.add_argument("--label-remap")
    p.add_argument("--workers", type=int)

    p = command("compare", "Wilcoxon signed-rank test between two reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--model-a")
    p.add_argument("--model-b")
    p.add_argument("--metric", choices=["dice", "hd95"])
    p.add_argument("--out")

    p = command("render", "overlay images for the records of a report")
    p.add_argument("--dataset")
    p.add_argument("--report")
    p.add_argument("--pred", action="append", help="TAG=DIR")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--background-modality")
    p.add_argument("--source-order")
    p.add_argument("--clip-low", type=float)
    p.add_argument("--clip-high", type=float)
    p.add_argument("--darken", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--label-remap")
    return parser


def resolve_config(command: str, flags: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    cfg_path = flags.pop("config", None)
    if cfg_path:
        doc = read_json(cfg_path)
        merged = {k: v for k, v in doc.items() if k not in COMMANDS}
        merged.update(doc.get(command) or {})
        for k, v in merged.items():
            cfg[k.replace("-", "_")] = v
    cfg.update(flags)
    missing = [k for k in REQUIRED[command] if not cfg.get(k)]
    if missing:
        raise UsageError(f"{command}: missing required option(s) {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    verbose = args.pop("verbose")
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(command, args)
        return COMMANDS[command](cfg)
    except (NiftiError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
