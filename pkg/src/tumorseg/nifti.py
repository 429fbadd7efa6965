"""Reader/writer for single-file NIfTI-1 images (``.nii`` / ``.nii.gz``).

Only the subset needed for multimodal brain volumes is supported: 3-D and
4-D images, datatypes uint8/int16/int32/float32/float64, either byte order.
Arrays are returned with the slowest-varying axis first, i.e. ``[z, y, x]``
for 3-D and ``[t, z, y, x]`` for 4-D images.
"""

from __future__ import annotations

import gzip
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import CANONICAL_MODALITIES, LabelVolume, Modality, MultimodalVolume
from .fileutil import atomic_write_bytes

log = logging.getLogger(__name__)

HEADER_SIZE = 348
SINGLE_FILE_OFFSET = 352
MAX_DIM = 32767

#: NIfTI datatype code -> numpy dtype (native byte order).
DATATYPES: dict[int, np.dtype] = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
DTYPE_CODES = {dt: code for code, dt in DATATYPES.items()}


class NiftiError(ValueError):
    """Base class for parse errors. ``field`` names the offending header field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class BadMagicError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class TruncatedDataError(NiftiError):
    pass


class DimensionError(NiftiError):
    pass


class DimensionOverflowError(NiftiError):
    pass


@dataclass(frozen=True)
class NiftiHeader:
    dims: tuple[int, ...]
    datatype: int
    bitpix: int
    vox_offset: float
    scl_slope: float
    scl_inter: float
    spacing: tuple[float, ...]
    endianness: str
    magic: bytes
    qform_code: int = 0
    sform_code: int = 0
    quatern: tuple[float, float, float] = (0.0, 0.0, 0.0)
    srow: tuple[tuple[float, ...], ...] = ()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def ndim(self) -> int:
        return len(self.dims)


# (name, struct format) in on-disk order; the struct is 348 bytes.
_FIELDS = [
    ("sizeof_hdr", "i"), ("data_type", "10s"), ("db_name", "18s"),
    ("extents", "i"), ("session_error", "h"), ("regular", "c"),
    ("dim_info", "B"), ("dim", "8h"), ("intent_p1", "f"), ("intent_p2", "f"),
    ("intent_p3", "f"), ("intent_code", "h"), ("datatype", "h"),
    ("bitpix", "h"), ("slice_start", "h"), ("pixdim", "8f"),
    ("vox_offset", "f"), ("scl_slope", "f"), ("scl_inter", "f"),
    ("slice_end", "h"), ("slice_code", "B"), ("xyzt_units", "B"),
    ("cal_max", "f"), ("cal_min", "f"), ("slice_duration", "f"),
    ("toffset", "f"), ("glmax", "i"), ("glmin", "i"), ("descrip", "80s"),
    ("aux_file", "24s"), ("qform_code", "h"), ("sform_code", "h"),
    ("quatern_b", "f"), ("quatern_c", "f"), ("quatern_d", "f"),
    ("qoffset_x", "f"), ("qoffset_y", "f"), ("qoffset_z", "f"),
    ("srow_x", "4f"), ("srow_y", "4f"), ("srow_z", "4f"),
    ("intent_name", "16s"), ("magic", "4s"),
]
_FMT = "".join(f for _, f in _FIELDS)
assert struct.calcsize("<" + _FMT) == HEADER_SIZE


def _unpack(raw: bytes, endian: str) -> dict:
    values = struct.unpack(endian + _FMT, raw[:HEADER_SIZE])
    out, i = {}, 0
    for name, fmt in _FIELDS:
        n = int(fmt[:-1]) if fmt[:-1].isdigit() and fmt[-1] != "s" else 1
        if n == 1:
            out[name] = values[i]
        else:
            out[name] = tuple(values[i:i + n])
        i += n
    return out


def _pack(fields: Mapping, endian: str) -> bytes:
    flat = []
    for name, fmt in _FIELDS:
        v = fields[name]
        if fmt[-1] != "s" and fmt[:-1].isdigit():
            flat.extend(v)
        else:
            flat.append(v)
    return struct.pack(endian + _FMT, *flat)


def _axis_permutation_warning(kind: str, mat: np.ndarray) -> str | None:
    if not np.all(np.isfinite(mat)) or not np.any(mat):
        return None
    perm = np.argmax(np.abs(mat), axis=0)
    if tuple(perm.tolist()) != (0, 1, 2):
        return f"{kind} implies axis permutation {tuple(perm.tolist())}; stored axis order is used as-is"
    return None


def _quaternion_matrix(b: float, c: float, d: float) -> np.ndarray:
    a = math.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])


def parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedDataError("sizeof_hdr", f"file holds {len(raw)} bytes, header needs {HEADER_SIZE}")
    for endian in ("<", ">"):
        if struct.unpack(endian + "i", raw[:4])[0] == HEADER_SIZE:
            break
    else:
        raise NiftiError("sizeof_hdr", "does not decode to 348 in either byte order")
    h = _unpack(raw, endian)

    magic = h["magic"]
    if magic == b"ni1\x00":
        raise BadMagicError("magic", "paired .hdr/.img NIfTI is not supported; single-file 'n+1' required")
    if magic != b"n+1\x00":
        raise BadMagicError("magic", f"expected b'n+1\\x00', got {magic!r}")

    dim = h["dim"]
    ndim = dim[0]
    if ndim not in (3, 4):
        raise DimensionError("dim", f"dim[0]={ndim}; only 3-D and 4-D images are supported")
    dims = tuple(int(d) for d in dim[1:ndim + 1])
    if any(d < 1 for d in dims):
        raise DimensionError("dim", f"non-positive dimension in {dims}")

    code = h["datatype"]
    if code not in DATATYPES:
        raise UnsupportedDatatypeError("datatype", f"code {code} not in supported set {sorted(DATATYPES)}")
    bitpix = h["bitpix"]
    if bitpix != DATATYPES[code].itemsize * 8:
        raise NiftiError("bitpix", f"{bitpix} inconsistent with datatype {code}")

    vox_offset = h["vox_offset"]
    if not vox_offset >= SINGLE_FILE_OFFSET:
        raise NiftiError("vox_offset", f"{vox_offset} < {SINGLE_FILE_OFFSET} for a single-file image")

    notes = []
    if h["qform_code"] > 0:
        msg = _axis_permutation_warning("qform", _quaternion_matrix(h["quatern_b"], h["quatern_c"], h["quatern_d"]))
        if msg:
            notes.append(msg)
    srow = (h["srow_x"], h["srow_y"], h["srow_z"])
    if h["sform_code"] > 0:
        msg = _axis_permutation_warning("sform", np.array(srow)[:, :3])
        if msg:
            notes.append(msg)
    for msg in notes:
        log.warning(msg)

    slope = h["scl_slope"]
    return NiftiHeader(
        dims=dims,
        datatype=code,
        bitpix=bitpix,
        vox_offset=vox_offset,
        scl_slope=0.0 if math.isnan(slope) else slope,
        scl_inter=h["scl_inter"],
        spacing=tuple(float(p) for p in h["pixdim"][1:ndim + 1]),
        endianness=endian,
        magic=magic,
        qform_code=h["qform_code"],
        sform_code=h["sform_code"],
        quatern=(h["quatern_b"], h["quatern_c"], h["quatern_d"]),
        srow=srow,
        warnings=tuple(notes),
    )


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def decode(raw: bytes) -> tuple[NiftiHeader, np.ndarray]:
    hdr = parse_header(raw)
    dtype = DATATYPES[hdr.datatype].newbyteorder(hdr.endianness)
    count = math.prod(hdr.dims)
    start = int(hdr.vox_offset)
    need = count * dtype.itemsize
    if len(raw) - start < need:
        raise TruncatedDataError("vox_offset", f"data section holds {max(len(raw) - start, 0)} bytes, expected {need}")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
    # on disk x varies fastest; reverse to [.., z, y, x]
    arr = flat.reshape(hdr.dims, order="F").transpose(tuple(range(hdr.ndim))[::-1])
    arr = arr.astype(dtype.newbyteorder("="))
    if hdr.scl_slope != 0 and not (hdr.scl_slope == 1 and hdr.scl_inter == 0):
        arr = arr.astype(np.float64) * hdr.scl_slope + hdr.scl_inter
    return hdr, arr


def read_nifti(path) -> tuple[NiftiHeader, np.ndarray]:
    """Read a ``.nii`` or ``.nii.gz`` file. gzip is detected from content."""
    return decode(_read_bytes(path))


def encode(
    data: np.ndarray,
    dtype=None,
    spacing: Sequence[float] | None = None,
    endianness: str = "<",
) -> bytes:
    """Serialise an array laid out ``[z, y, x]`` or ``[t, z, y, x]``."""
    arr = np.asarray(data)
    if arr.ndim not in (3, 4):
        raise DimensionError("dim", f"array has {arr.ndim} dims; only 3-D and 4-D are supported")
    dt = np.dtype(dtype) if dtype is not None else arr.dtype
    dt = dt.newbyteorder("=")
    if dt not in DTYPE_CODES:
        raise UnsupportedDatatypeError("datatype", f"dtype {dt} is not supported")
    if endianness not in ("<", ">"):
        raise ValueError("endianness must be '<' or '>'")
    dims = arr.shape[::-1]
    for d in dims:
        if d > MAX_DIM:
            raise DimensionOverflowError("dim", f"dimension {d} exceeds the 16-bit limit {MAX_DIM}")
    ndim = len(dims)
    if spacing is None:
        spacing = (1.0,) * ndim
    spacing = tuple(float(s) for s in spacing) + (1.0,) * (ndim - len(spacing))

    fields = {name: 0 for name, _ in _FIELDS}
    fields.update(
        sizeof_hdr=HEADER_SIZE,
        data_type=b"",
        db_name=b"",
        regular=b"r",
        dim=(ndim, *dims, *(1,) * (7 - ndim)),
        intent_p1=0.0, intent_p2=0.0, intent_p3=0.0,
        datatype=DTYPE_CODES[dt],
        bitpix=dt.itemsize * 8,
        pixdim=(1.0, *spacing[:ndim], *(1.0,) * (7 - ndim)),
        vox_offset=float(SINGLE_FILE_OFFSET),
        scl_slope=1.0,
        scl_inter=0.0,
        cal_max=0.0, cal_min=0.0, slice_duration=0.0, toffset=0.0,
        descrip=b"",
        aux_file=b"",
        quatern_b=0.0, quatern_c=0.0, quatern_d=0.0,
        qoffset_x=0.0, qoffset_y=0.0, qoffset_z=0.0,
        srow_x=(0.0, 0.0, 0.0, 0.0), srow_y=(0.0, 0.0, 0.0, 0.0), srow_z=(0.0, 0.0, 0.0, 0.0),
        intent_name=b"",
        magic=b"n+1\x00",
        xyzt_units=2,
    )
    body = np.ascontiguousarray(arr.astype(dt).transpose(tuple(range(ndim))[::-1]).ravel(order="F"))
    buf = io.BytesIO()
    buf.write(_pack(fields, endianness))
    buf.write(b"\x00\x00\x00\x00")
    buf.write(body.astype(dt.newbyteorder(endianness)).tobytes())
    return buf.getvalue()


def write_nifti(obj, path, dtype=None, spacing=None, endianness: str = "<") -> None:
    """Write a ``MultimodalVolume`` (float32, 4-D), a ``LabelVolume`` (uint8,
    3-D) or a raw array. A ``.gz`` suffix selects gzip compression."""
    if isinstance(obj, MultimodalVolume):
        data = obj.data
        dtype = dtype or np.float32
        spacing = spacing or obj.spacing[::-1] + (1.0,)
    elif isinstance(obj, LabelVolume):
        data = obj.labels
        dtype = dtype or np.uint8
    else:
        data = obj
    raw = encode(data, dtype=dtype, spacing=spacing, endianness=endianness)
    if str(path).endswith(".gz"):
        raw = gzip.compress(raw, compresslevel=6, mtime=0)
    atomic_write_bytes(path, raw)


def load_multimodal(path, source_order: Sequence[Modality | str] = CANONICAL_MODALITIES) -> MultimodalVolume:
    """Load a 4-D image and reorder its 4th axis into canonical modality order.

    ``source_order`` names the modality stored at each index of the file's
    4th dimension.
    """
    hdr, arr = read_nifti(path)
    if arr.ndim != 4 or arr.shape[0] != 4:
        raise DimensionError("dim", f"expected a 4-D image with 4 modalities, got dims {hdr.dims}")
    src = [Modality.parse(m) if isinstance(m, str) else Modality(m) for m in source_order]
    if sorted(m.value for m in src) != sorted(m.value for m in CANONICAL_MODALITIES):
        raise ValueError(f"source order must name each modality once, got {src}")
    idx = [src.index(m) for m in CANONICAL_MODALITIES]
    sx, sy, sz = hdr.spacing[:3]
    return MultimodalVolume(arr[idx], CANONICAL_MODALITIES, spacing=(sz, sy, sx))


def load_labels(path, remap: Mapping[int, int] | None = None) -> LabelVolume:
    hdr, arr = read_nifti(path)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3:
        raise DimensionError("dim", f"expected a 3-D label image, got dims {hdr.dims}")
    return LabelVolume.from_codes(arr, remap)



def nifti_stem(name: str) -> str | None:
    """File name without ``.nii[.gz]``, or None for other files."""
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            return name[: -len(ext)]
    return None
