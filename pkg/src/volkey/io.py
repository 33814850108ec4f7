"""File formats: raw volumes with a text header, NIfTI-1 input, feature sets.

raw_meta volumes are a text header (``key = value`` lines) next to a raw
little-endian binary blob in x-fastest order.  Header keys: dims, spacing,
origin, dtype (u8 | i16 | f32) and data (relative path of the blob, default
header name with a .raw suffix).

Feature files are a text preamble (magic line ``VOLKEYFEAT <version>``, then
``key = value`` lines, then ``END``) followed by fixed-size little-endian
records: location (3 f64), sigma (f64), frame (9 f64 row-major), sign (i8),
border flag (u8) and the four ranked descriptors (4 x 64 u8).
"""
from __future__ import annotations

import hashlib
import struct
import warnings
from pathlib import Path

import numpy as np

from .descriptors import Descriptor, ExtractionConfig, Feature
from .errors import ParseError, RejectedInputError
from .frames import Frame
from .keypoints import Keypoint
from .transforms import is_rotation
from .volume import ScalarVolume

_DTYPES = {"u8": np.uint8, "i16": np.dtype("<i2"), "f32": np.dtype("<f4")}

FEATURE_MAGIC = "VOLKEYFEAT"
FEATURE_VERSION = 1
_RECORD = struct.Struct("<3d d 9d b B 256B")


def _parse_header(path: Path) -> tuple[dict, dict]:
    """Key-value lines with the byte offset of each line start."""
    values: dict[str, str] = {}
    offsets: dict[str, int] = {}
    offset = 0
    raw = path.read_bytes()
    for line in raw.split(b"\n"):
        text = line.decode("ascii", errors="replace").strip()
        if text and not text.startswith("#"):
            if "=" not in text:
                raise ParseError(f"{path}: malformed header line at byte offset {offset}")
            key, _, value = text.partition("=")
            values[key.strip()] = value.strip()
            offsets[key.strip()] = offset
        offset += len(line) + 1
    return values, offsets


def read_volume(path: str | Path) -> ScalarVolume:
    """Read a raw_meta volume (header file plus binary blob)."""
    path = Path(path)
    values, offsets = _parse_header(path)
    for key in ("dims", "spacing", "origin", "dtype"):
        if key not in values:
            raise ParseError(f"{path}: missing header key {key!r} (byte offset 0)")

    def bad(key: str, why: str) -> ParseError:
        return ParseError(f"{path}: {why} at byte offset {offsets[key]}")

    def parse_triplet(key: str, cast):
        try:
            return tuple(cast(v) for v in values[key].split())
        except ValueError as exc:
            raise bad(key, f"non-numeric {key} field {values[key]!r}") from exc

    dims = parse_triplet("dims", int)
    spacing = parse_triplet("spacing", float)
    origin = parse_triplet("origin", float)
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise bad("dims", "dims, spacing and origin need three entries each")
    dtype_name = values["dtype"]
    if dtype_name not in _DTYPES:
        raise bad("dtype", f"unsupported dtype {dtype_name!r} (want u8, i16 or f32)")
    blob = path.with_suffix(".raw") if "data" not in values else path.parent / values["data"]
    if not blob.exists():
        raise ParseError(f"{path}: data file {blob} not found")
    raw = blob.read_bytes()
    dtype = np.dtype(_DTYPES[dtype_name])
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) != expected:
        raise ParseError(
            f"{blob}: size mismatch at byte offset {min(len(raw), expected)}: "
            f"expected {expected} bytes for dims {dims}, found {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype=dtype)
    data = flat.reshape(dims, order="F").astype(np.float64)
    return ScalarVolume(dims=dims, spacing=spacing, origin=origin, data=data)


def write_volume(path: str | Path, volume: ScalarVolume, dtype: str = "f32") -> None:
    """Write a raw_meta volume; intensities are cast (with rounding for ints)."""
    if dtype not in _DTYPES:
        raise RejectedInputError(f"unsupported dtype {dtype!r}")
    path = Path(path)
    blob = path.with_suffix(".raw")
    np_dtype = np.dtype(_DTYPES[dtype])
    data = volume.data
    if np_dtype.kind in "ui":
        info = np.iinfo(np_dtype)
        data = np.clip(np.rint(data), info.min, info.max)
    cast = np.asarray(data, dtype=np_dtype)
    lines = [
        f"dims = {volume.dims[0]} {volume.dims[1]} {volume.dims[2]}",
        f"spacing = {volume.spacing[0]!r} {volume.spacing[1]!r} {volume.spacing[2]!r}",
        f"origin = {volume.origin[0]!r} {volume.origin[1]!r} {volume.origin[2]!r}",
        f"dtype = {dtype}",
        f"data = {blob.name}",
    ]
    path.write_text("\n".join(lines) + "\n")
    blob.write_bytes(cast.ravel(order="F").tobytes())


_NIFTI_DTYPES = {2: np.uint8, 4: np.dtype("i2"), 16: np.dtype("f4")}


def read_nifti(path: str | Path) -> ScalarVolume:
    """Minimal single-file NIfTI-1 reader.

    Honors dims, pixdim, datatype (u8/i16/f32), scl_slope/scl_inter and
    vox_offset; every other header field (orientation included) is ignored
    with a warning and the origin is set to zero.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 348:
        raise ParseError(f"{path}: truncated header at byte offset {len(raw)} (need 348)")
    sizeof_hdr = struct.unpack_from("<i", raw, 0)[0]
    endian = "<"
    if sizeof_hdr != 348:
        if struct.unpack_from(">i", raw, 0)[0] == 348:
            endian = ">"
        else:
            raise ParseError(f"{path}: bad sizeof_hdr {sizeof_hdr} at byte offset 0")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise ParseError(f"{path}: bad magic {magic!r} at byte offset 344")
    dim = struct.unpack_from(endian + "8h", raw, 40)
    ndim = dim[0]
    if ndim < 3:
        raise ParseError(f"{path}: need a 3D image, header says {ndim}D")
    extra = [d for d in dim[4 : 1 + ndim] if d > 1]
    if extra:
        raise ParseError(f"{path}: need a 3D image, trailing dims {extra} exceed 1")
    dims = (int(dim[1]), int(dim[2]), int(dim[3]))
    datatype = struct.unpack_from(endian + "h", raw, 70)[0]
    if datatype not in _NIFTI_DTYPES:
        raise ParseError(
            f"{path}: unsupported datatype code {datatype} at byte offset 70 "
            "(supported: 2 = u8, 4 = i16, 16 = f32)"
        )
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    spacing = tuple(abs(float(p)) if p != 0.0 else 1.0 for p in pixdim[1:4])
    vox_offset = int(struct.unpack_from(endian + "f", raw, 108)[0])
    scl_slope, scl_inter = struct.unpack_from(endian + "2f", raw, 112)
    if magic == b"ni1\x00":
        raise ParseError(f"{path}: two-file images are not supported")
    warnings.warn(
        f"{path.name}: orientation and remaining header fields ignored; origin set to 0",
        stacklevel=2,
    )
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(endian)
    count = dims[0] * dims[1] * dims[2]
    need = vox_offset + count * dtype.itemsize
    if len(raw) < need:
        raise ParseError(f"{path}: truncated data at byte offset {len(raw)} (need {need})")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=vox_offset)
    data = flat.reshape(dims, order="F").astype(np.float64)
    slope = float(scl_slope) if scl_slope != 0.0 else 1.0
    if slope != 1.0 or scl_inter != 0.0:
        data = data * slope + float(scl_inter)
    return ScalarVolume(dims=dims, spacing=spacing, origin=(0.0, 0.0, 0.0), data=data)


def config_digest(config: ExtractionConfig) -> str:
    text = repr(sorted(vars(config).items()))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_features(
    path: str | Path,
    features: list[Feature],
    volume_id: str = "",
    config: ExtractionConfig | None = None,
    estimator: str | None = None,
) -> None:
    """Serialize features (geometry plus ranked descriptors) to one file."""
    path = Path(path)
    cfg = config or ExtractionConfig()
    est = estimator if estimator is not None else cfg.estimator
    header = (
        f"{FEATURE_MAGIC} {FEATURE_VERSION}\n"
        f"volume_id = {volume_id}\n"
        f"config_digest = {config_digest(cfg)}\n"
        f"estimator = {est}\n"
        f"count = {len(features)}\n"
        "END\n"
    )
    chunks = [header.encode("ascii")]
    for f in features:
        kp = f.keypoint
        ranks: list[int] = []
        for d in f.descriptors:
            ranks.extend(int(v) for v in d.ranked)
        chunks.append(
            _RECORD.pack(
                *kp.x.tolist(),
                kp.sigma,
                *f.frame.matrix.reshape(-1).tolist(),
                kp.sign,
                1 if f.border else 0,
                *ranks,
            )
        )
    Path(path).write_bytes(b"".join(chunks))


def read_features(path: str | Path) -> tuple[list[Feature], dict]:
    """Read a feature file; returns the features and the header metadata.

    Loaded descriptors carry ranks only (bins are not stored).
    """
    path = Path(path)
    raw = path.read_bytes()
    end = raw.find(b"END\n")
    if end < 0:
        raise ParseError(f"{path}: missing END marker in header (byte offset 0)")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    if not header_lines or not header_lines[0].startswith(FEATURE_MAGIC):
        raise ParseError(f"{path}: bad magic at byte offset 0")
    try:
        version = int(header_lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: malformed magic line at byte offset 0") from exc
    if version > FEATURE_VERSION:
        raise ParseError(
            f"{path}: file version {version} is newer than supported {FEATURE_VERSION}"
        )
    meta: dict[str, str] = {}
    for line in header_lines[1:]:
        if "=" in line:
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    if "count" not in meta:
        raise ParseError(f"{path}: header missing count (byte offset 0)")
    count = int(meta["count"])
    body = raw[end + 4 :]
    expected = count * _RECORD.size
    if len(body) != expected:
        raise ParseError(
            f"{path}: record block size mismatch at byte offset "
            f"{end + 4 + min(len(body), expected)}: expected {expected} bytes, found {len(body)}"
        )
    features: list[Feature] = []
    for i in range(count):
        fields = _RECORD.unpack_from(body, i * _RECORD.size)
        x = np.array(fields[0:3])
        sigma = fields[3]
        theta = np.array(fields[4:13]).reshape(3, 3)
        sign = int(fields[13])
        border = bool(fields[14])
        ranks = np.array(fields[15:], dtype=np.int16).reshape(4, 64)
        offset = end + 4 + i * _RECORD.size
        if not is_rotation(theta, tol=1e-6):
            raise ParseError(f"{path}: record {i} frame is not a rotation (byte offset {offset})")
        if sign not in (-1, 1):
            raise ParseError(f"{path}: record {i} has sign {sign} (byte offset {offset})")
        if not sigma > 0.0:
            raise ParseError(f"{path}: record {i} has sigma {sigma} (byte offset {offset})")
        kp = Keypoint(x=x, sigma=sigma, sign=sign, response=float(sign), border=border)
        descriptors = [Descriptor(bins=None, ranked=ranks[k]) for k in range(4)]
        features.append(
            Feature(keypoint=kp, frame=Frame(theta), descriptors=descriptors, border=border)
        )
    return features, meta
