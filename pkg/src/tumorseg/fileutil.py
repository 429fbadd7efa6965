"""Atomic file writes and 8-bit PNG I/O."""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dump_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def encode_png(array: np.ndarray) -> bytes:
    a = np.asarray(array)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    if a.dtype != np.uint8:
        raise TypeError(f"PNG export needs uint8 data, got {a.dtype}")
    if a.ndim == 2:
        img = Image.fromarray(a, mode="L")
    elif a.ndim == 3 and a.shape[2] == 3:
        img = Image.fromarray(a, mode="RGB")
    else:
        raise ValueError(f"unsupported PNG shape {a.shape}")
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def write_png(path, array: np.ndarray) -> None:
    atomic_write_bytes(path, encode_png(array))


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        img.load()
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB" if img.mode in ("RGBA", "P") else "L")
        return np.asarray(img).copy()


def read_mask_png(path) -> np.ndarray:
    """Single-channel mask PNG; any value >= 128 reads as true."""
    a = read_png(path)
    if a.ndim == 3:
        a = a[..., 0]
    return a >= 128
