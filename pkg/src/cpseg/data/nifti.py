"""Minimal single-file NIfTI-1 (``.nii``) reader and writer.

Supports uncompressed little-endian images of datatype uint8 (2) or
float32 (16), with ``scl_slope`` in {0, 1} and ``scl_inter`` = 0.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .volume import Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

DT_UINT8, DT_FLOAT32 = 2, 16
_DTYPES = {DT_UINT8: np.dtype("u1"), DT_FLOAT32: np.dtype("<f4")}
_CODES = {np.dtype("u1"): DT_UINT8, np.dtype("f4"): DT_FLOAT32}

HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "<i4"), ("data_type", "S10"), ("db_name", "S18"), ("extents", "<i4"),
    ("session_error", "<i2"), ("regular", "S1"), ("dim_info", "u1"), ("dim", "<i2", (8,)),
    ("intent_p1", "<f4"), ("intent_p2", "<f4"), ("intent_p3", "<f4"), ("intent_code", "<i2"),
    ("datatype", "<i2"), ("bitpix", "<i2"), ("slice_start", "<i2"), ("pixdim", "<f4", (8,)),
    ("vox_offset", "<f4"), ("scl_slope", "<f4"), ("scl_inter", "<f4"), ("slice_end", "<i2"),
    ("slice_code", "u1"), ("xyzt_units", "u1"), ("cal_max", "<f4"), ("cal_min", "<f4"),
    ("slice_duration", "<f4"), ("toffset", "<f4"), ("glmax", "<i4"), ("glmin", "<i4"),
    ("descrip", "S80"), ("aux_file", "S24"), ("qform_code", "<i2"), ("sform_code", "<i2"),
    ("quatern_b", "<f4"), ("quatern_c", "<f4"), ("quatern_d", "<f4"), ("qoffset_x", "<f4"),
    ("qoffset_y", "<f4"), ("qoffset_z", "<f4"), ("srow_x", "<f4", (4,)), ("srow_y", "<f4", (4,)),
    ("srow_z", "<f4", (4,)), ("intent_name", "S16"), ("magic", "S4"),
])
assert HEADER_DTYPE.itemsize == HEADER_SIZE


class NiftiError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"NIfTI {field}: {message}")


def write_volume(volume: Volume, path) -> None:
    data = volume.data
    if data.dtype == np.bool_:
        data = data.astype(np.uint8)
    if data.dtype not in _CODES:
        if np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        else:
            raise NiftiError("datatype", f"cannot store {data.dtype}; use uint8 or float32")
    code = _CODES[data.dtype]
    hdr = np.zeros((), dtype=HEADER_DTYPE)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *data.shape, 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = data.dtype.itemsize * 8
    hdr["pixdim"] = [1.0, *volume.spacing, 0, 0, 0, 0]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["sform_code"] = 1
    aff = volume.affine.astype(np.float32)
    hdr["srow_x"], hdr["srow_y"], hdr["srow_z"] = aff[0], aff[1], aff[2]
    hdr["magic"] = MAGIC
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(hdr.tobytes())
        fh.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
        fh.write(np.asarray(data, dtype=_DTYPES[code]).tobytes(order="F"))


def parse_header(raw: bytes) -> np.ndarray:
    if len(raw) < HEADER_SIZE:
        raise NiftiError("sizeof_hdr", f"file holds {len(raw)} bytes, header needs {HEADER_SIZE}")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE)[0]
    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        raise NiftiError("sizeof_hdr", f"expected {HEADER_SIZE} (little-endian), got {int(hdr['sizeof_hdr'])}")
    if bytes(hdr["magic"]).ljust(4, b"\x00") != MAGIC:
        raise NiftiError("magic", f"expected single-file 'n+1', got {bytes(hdr['magic'])!r}")
    return hdr


def read_volume(path) -> Volume:
    raw = Path(path).read_bytes()
    hdr = parse_header(raw)
    dim = [int(d) for d in hdr["dim"]]
    if dim[0] != 3 and not (dim[0] > 3 and all(d == 1 for d in dim[4:dim[0] + 1])):
        raise NiftiError("dim", f"only 3-D images are supported, got dim={dim}")
    shape = tuple(dim[1:4])
    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise NiftiError("datatype", f"unsupported code {code} (need 2=uint8 or 16=float32)")
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope not in (0.0, 1.0):
        raise NiftiError("scl_slope", f"intensity scaling {slope} is not supported")
    if inter != 0.0:
        raise NiftiError("scl_inter", f"intensity offset {inter} is not supported")
    offset = int(hdr["vox_offset"])
    dt = _DTYPES[code]
    nbytes = int(np.prod(shape)) * dt.itemsize
    if len(raw) < offset + nbytes:
        raise NiftiError("payload", f"truncated: need {nbytes} bytes at offset {offset}, have {len(raw) - offset}")
    data = np.frombuffer(raw, dtype=dt, count=int(np.prod(shape)), offset=offset)
    data = data.reshape(shape, order="F").astype(dt.newbyteorder("="), order="C")
    spacing = tuple(float(p) for p in hdr["pixdim"][1:4])
    if int(hdr["sform_code"]) > 0:
        affine = np.eye(4)
        affine[0], affine[1], affine[2] = hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]
    else:
        affine = np.diag([*spacing, 1.0])
    return Volume(data, spacing, affine)
