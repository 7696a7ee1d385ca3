"""Volume containers and a minimal NIfTI-1 reader/writer.

All grids are indexed ``[x, y, z]`` with x varying fastest in the serialized
byte stream, matching the NIfTI voxel order. Spacing is physical, in
millimeters, one value per axis. The reader/writer supports uncompressed
single-file ``.nii`` only, with datatypes uint8 (code 2), int16 (code 4) and
float32 (code 16); qform/sform orientation is ignored and spacing is taken
from ``pixdim`` alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .errors import (
    MalformedHeaderError,
    TruncatedDataError,
    UnsupportedDatatypeError,
)

__all__ = [
    "Volume",
    "LabelVolume",
    "BinaryVolume",
    "AnyVolume",
    "read_nifti",
    "write_nifti",
    "crop_or_pad",
]

# NIfTI-1 datatype codes supported by this subset.
DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16

_DTYPES = {
    DT_UINT8: np.dtype("<u1"),
    DT_INT16: np.dtype("<i2"),
    DT_FLOAT32: np.dtype("<f4"),
}

_HEADER_SIZE = 348
_VOX_OFFSET = 352
_MAGIC = b"n+1\x00"

_HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert _HEADER_DTYPE.itemsize == _HEADER_SIZE


def _check_spacing(spacing) -> Tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ValueError("spacing must have three components")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be finite and positive, got {spacing}")
    return spacing


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, order="C")  # own copy, so callers' buffers stay writable
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume:
    """A 3D scalar intensity grid with per-axis physical spacing in mm.

    ``data`` is float32, shape ``(nx, ny, nz)``, indexed ``[x, y, z]``.
    Instances are immutable; the data buffer is marked read-only.
    """

    data: np.ndarray
    spacing: Tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got {data.ndim}D")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume data must be finite everywhere")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


@dataclass(frozen=True)
class LabelVolume:
    """Integer class-ID grid sharing a Volume's geometry.

    Values live in ``{0, ..., num_classes - 1}``; class 0 is background.
    ``storage_datatype`` optionally pins the on-disk NIfTI datatype code so
    a read/write round-trip preserves the source byte layout.
    """

    data: np.ndarray
    spacing: Tuple[float, float, float]
    num_classes: int
    storage_datatype: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"label data must be 3D, got {data.ndim}D")
        if data.size and data.min() < 0:
            raise ValueError("labels must be nonnegative")
        data = data.astype(np.uint16)
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if data.size and int(data.max()) >= self.num_classes:
            raise ValueError(
                f"label {int(data.max())} out of range for {self.num_classes} classes"
            )
        if self.storage_datatype not in (None, DT_UINT8, DT_INT16):
            raise UnsupportedDatatypeError(
                f"labels cannot be stored as datatype code {self.storage_datatype}"
            )
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BinaryVolume:
    """A {0,1}-valued grid (masks, confidence maps, edge volumes)."""

    data: np.ndarray
    spacing: Tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"mask data must be 3D, got {data.ndim}D")
        if data.dtype == bool:
            data = data.astype(np.uint8)
        else:
            data = data.astype(np.uint8, casting="unsafe")
        if data.size and not np.isin(np.unique(data), (0, 1)).all():
            raise ValueError("binary volume values must be 0 or 1")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape


AnyVolume = Union[Volume, LabelVolume, BinaryVolume]


def _parse_header(raw: bytes, path: str):
    if len(raw) < _HEADER_SIZE:
        raise MalformedHeaderError(f"{path}: file shorter than a NIfTI-1 header")
    hdr = np.frombuffer(raw[:_HEADER_SIZE], dtype=_HEADER_DTYPE)[0]
    if int(hdr["sizeof_hdr"]) != _HEADER_SIZE:
        raise MalformedHeaderError(
            f"{path}: sizeof_hdr is {int(hdr['sizeof_hdr'])}, expected 348 "
            "(big-endian or non-NIfTI file?)"
        )
    if raw[344:348] != _MAGIC:  # numpy S4 strips trailing nulls; check raw bytes
        raise MalformedHeaderError(f"{path}: bad magic {raw[344:348]!r}")
    dim = hdr["dim"]
    if int(dim[0]) != 3:
        raise MalformedHeaderError(f"{path}: dim[0] is {int(dim[0])}, expected 3")
    shape = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in shape):
        raise MalformedHeaderError(f"{path}: nonpositive dimension in {shape}")
    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise UnsupportedDatatypeError(f"{path}: datatype code {code} not supported")
    spacing = tuple(float(p) for p in hdr["pixdim"][1:4])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise MalformedHeaderError(f"{path}: nonpositive pixdim {spacing}")
    vox_offset = int(hdr["vox_offset"])
    if vox_offset < _HEADER_SIZE:
        raise MalformedHeaderError(f"{path}: vox_offset {vox_offset} < 348")
    return shape, spacing, code, vox_offset


def read_nifti(path, kind: str = "auto") -> AnyVolume:
    """Read an uncompressed single-file NIfTI-1 volume.

    Args:
        path: Path to a ``.nii`` file.
        kind: One of ``"auto"``, ``"image"``, ``"labels"``, ``"binary"``.
            ``auto`` maps float32 files to :class:`Volume` and integer files
            to :class:`LabelVolume`; the explicit kinds force a container.

    Returns:
        Volume, LabelVolume, or BinaryVolume depending on ``kind``/datatype.

    Raises:
        MalformedHeaderError: bad magic, size, dims, or pixdim.
        UnsupportedDatatypeError: datatype outside {uint8, int16, float32}.
        TruncatedDataError: payload shorter than the header declares.
    """
    if kind not in ("auto", "image", "labels", "binary"):
        raise ValueError(f"unknown kind {kind!r}")
    with open(path, "rb") as fh:
        raw = fh.read()
    shape, spacing, code, vox_offset = _parse_header(raw, str(path))
    dtype = _DTYPES[code]
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if len(raw) < vox_offset + nbytes:
        raise TruncatedDataError(
            f"{path}: expected {vox_offset + nbytes} bytes, file has {len(raw)}"
        )
    flat = np.frombuffer(raw[vox_offset : vox_offset + nbytes], dtype=dtype)
    data = flat.reshape(shape, order="F").copy()

    if kind == "image":
        return Volume(data.astype(np.float32), spacing)
    if kind == "binary":
        if not np.isin(np.unique(data), (0, 1)).all():
            raise ValueError(f"{path}: binary volume contains values outside {{0,1}}")
        return BinaryVolume(data.astype(np.uint8), spacing)
    if kind == "labels" or code in (DT_UINT8, DT_INT16):
        if data.size and data.min() < 0:
            raise UnsupportedDatatypeError(
                f"{path}: negative values cannot be labels; read with kind='image'"
            )
        if code == DT_FLOAT32:
            if data.size and not np.array_equal(data, np.round(data)):
                raise UnsupportedDatatypeError(
                    f"{path}: float payload has non-integer values; not a label map"
                )
            data = data.astype(np.int64)
            code = None  # let the writer pick a width for re-saved float labels
        num_classes = max(2, int(data.max()) + 1) if data.size else 2
        return LabelVolume(data.astype(np.uint16), spacing, num_classes, code)
    return Volume(data, spacing)


def _storage_code(vol: AnyVolume) -> int:
    if isinstance(vol, Volume):
        return DT_FLOAT32
    if isinstance(vol, BinaryVolume):
        return DT_UINT8
    if isinstance(vol, LabelVolume):
        if vol.storage_datatype is not None:
            code = vol.storage_datatype
        else:
            peak = int(vol.data.max()) if vol.data.size else 0
            code = DT_UINT8 if peak <= 255 else DT_INT16
        peak = int(vol.data.max()) if vol.data.size else 0
        limit = 255 if code == DT_UINT8 else 32767
        if peak > limit:
            raise UnsupportedDatatypeError(
                f"label value {peak} does not fit datatype code {code}"
            )
        return code
    raise TypeError(f"cannot write object of type {type(vol).__name__}")


def write_nifti(vol: AnyVolume, path) -> None:
    """Write a volume as uncompressed NIfTI-1 (352-byte header + raw voxels).

    Volume data is stored as float32, BinaryVolume as uint8, and LabelVolume
    as uint8 or int16 (honoring ``storage_datatype`` when set). Output is
    little-endian with x varying fastest.
    """
    code = _storage_code(vol)
    dtype = _DTYPES[code]
    hdr = np.zeros((), dtype=_HEADER_DTYPE)
    hdr["sizeof_hdr"] = _HEADER_SIZE
    hdr["dim"] = [3, *vol.shape, 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = dtype.itemsize * 8
    hdr["pixdim"] = [1.0, *vol.spacing, 0.0, 0.0, 0.0, 0.0]
    hdr["vox_offset"] = _VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # millimeters
    hdr["magic"] = _MAGIC
    payload = np.asarray(vol.data, dtype=dtype).tobytes(order="F")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(hdr.tobytes())
        fh.write(b"\x00" * (_VOX_OFFSET - _HEADER_SIZE))
        fh.write(payload)
    os.replace(tmp, path)


def _rebuild_like(template: AnyVolume, data: np.ndarray) -> AnyVolume:
    if isinstance(template, Volume):
        return Volume(data, template.spacing)
    if isinstance(template, BinaryVolume):
        return BinaryVolume(data, template.spacing)
    return LabelVolume(
        data, template.spacing, template.num_classes, template.storage_datatype
    )


def crop_or_pad(vol: AnyVolume, target_shape, origin="center") -> AnyVolume:
    """Crop and/or zero-pad a volume to ``target_shape``.

    ``origin`` places source voxel (0,0,0) at that index of the output grid
    (may be negative, which crops). ``"center"`` centers the overlap,
    rounding the offset toward zero. Voxels outside the source are zero;
    spacing is unchanged. Total function: any target and origin are valid.
    """
    target_shape = tuple(int(t) for t in target_shape)
    if len(target_shape) != 3 or any(t <= 0 for t in target_shape):
        raise ValueError(f"target shape must be three positive ints, got {target_shape}")
    src = vol.data
    if origin == "center":
        offsets = []
        for t, s in zip(target_shape, src.shape):
            d = t - s
            offsets.append(d // 2 if d >= 0 else -((-d) // 2))
        origin = tuple(offsets)
    else:
        origin = tuple(int(o) for o in origin)
        if len(origin) != 3:
            raise ValueError("origin must have three components")

    out = np.zeros(target_shape, dtype=src.dtype)
    src_lo, src_hi, dst_lo, dst_hi = [], [], [], []
    for axis in range(3):
        o = origin[axis]
        lo = max(0, -o)
        hi = min(src.shape[axis], target_shape[axis] - o)
        if lo >= hi:
            return _rebuild_like(vol, out)
        src_lo.append(lo)
        src_hi.append(hi)
        dst_lo.append(lo + o)
        dst_hi.append(hi + o)
    out[dst_lo[0] : dst_hi[0], dst_lo[1] : dst_hi[1], dst_lo[2] : dst_hi[2]] = src[
        src_lo[0] : src_hi[0], src_lo[1] : src_hi[1], src_lo[2] : src_hi[2]
    ]
    return _rebuild_like(vol, out)
