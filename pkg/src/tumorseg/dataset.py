"""Decathlon-style dataset scanning and the persisted train/test split."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping

import numpy as np

from .fileutil import read_json, write_json
from .nifti import nifti_stem


class UnpairedCaseError(ValueError):
    def __init__(self, stems: list[str]):
        super().__init__("unpaired cases (image without label or vice versa): " + ", ".join(stems))
        self.stems = stems


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class CaseEntry:
    case_id: str
    image: Path
    label: Path


@dataclass(frozen=True)
class DatasetManifest:
    cases: tuple[CaseEntry, ...]
    split: Mapping[str, str] | None = None
    split_seed: int | None = None

    @property
    def case_ids(self) -> list[str]:
        return [c.case_id for c in self.cases]

    def subset(self, which: str) -> list[CaseEntry]:
        if which == "all":
            return list(self.cases)
        if self.split is None:
            raise SplitError(f"manifest has no split; cannot select {which!r}")
        return [c for c in self.cases if self.split[c.case_id] == which]

    def get(self, case_id: str) -> CaseEntry:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        raise KeyError(case_id)


def _list_images(directory: Path) -> dict[str, Path]:
    out = {}
    for entry in os.scandir(directory):
        if entry.name.startswith(".") or not entry.is_file():
            continue
        stem = nifti_stem(entry.name)
        if stem is not None:
            out[stem] = Path(entry.path)
    return out


def scan_dataset(root) -> DatasetManifest:
    root = Path(root)
    images_dir, labels_dir = root / "imagesTr", root / "labelsTr"
    for d in (images_dir, labels_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"missing dataset directory {d}")
    images, labels = _list_images(images_dir), _list_images(labels_dir)
    unpaired = sorted(set(images) ^ set(labels))
    if unpaired:
        raise UnpairedCaseError(unpaired)
    cases = tuple(CaseEntry(s, images[s], labels[s]) for s in sorted(images))
    return DatasetManifest(cases)


def train_count(n: int, train_frac: float) -> int:
    # exact decimal arithmetic so that e.g. 0.29 * 100 floors to 29
    return math.floor(Fraction(repr(float(train_frac))) * n)


def split_dataset(manifest: DatasetManifest, train_frac: float = 0.8, seed: int = 0) -> DatasetManifest:
    """Per-case split: Fisher-Yates shuffle, first ``floor(frac * N)`` train."""
    if not 0 < train_frac < 1:
        raise SplitError(f"train_frac must be in (0, 1), got {train_frac}")
    n = len(manifest.cases)
    if n < 2:
        raise SplitError(f"too few cases to split: {n}")
    rng = np.random.Generator(np.random.PCG64(seed & (2**64 - 1)))
    order = manifest.case_ids
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    k = train_count(n, train_frac)
    split = {cid: ("train" if pos < k else "test") for pos, cid in enumerate(order)}
    return replace(manifest, split=split, split_seed=seed)


def split_to_json(manifest: DatasetManifest) -> dict:
    if manifest.split is None:
        raise SplitError("manifest has no split")
    ids = manifest.case_ids
    return {
        "seed": manifest.split_seed,
        "train": [c for c in ids if manifest.split[c] == "train"],
        "test": [c for c in ids if manifest.split[c] == "test"],
    }


def write_split(manifest: DatasetManifest, path) -> None:
    write_json(path, split_to_json(manifest))


def apply_split(manifest: DatasetManifest, doc: Mapping) -> DatasetManifest:
    """Attach a previously persisted split; the file is authoritative."""
    train, test = list(doc["train"]), list(doc["test"])
    overlap = set(train) & set(test)
    if overlap:
        raise SplitError(f"cases in both train and test: {sorted(overlap)}")
    listed = set(train) | set(test)
    ids = set(manifest.case_ids)
    if listed != ids:
        raise SplitError(
            f"split file does not match dataset: missing {sorted(ids - listed)}, unknown {sorted(listed - ids)}"
        )
    split = {c: "train" for c in train} | {c: "test" for c in test}
    return replace(manifest, split=split, split_seed=doc.get("seed"))


def read_split(manifest: DatasetManifest, path) -> DatasetManifest:
    return apply_split(manifest, read_json(path))
