"""Minimal NIfTI-1 reader: fixed 348-byte header plus the raw voxel block.

Covers single-file .nii and gzipped .nii.gz. No affine or orientation
handling; slicing is done in on-disk index space.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

HEADER_SIZE = 348

# NIfTI-1 datatype code -> numpy dtype (little-endian baseline)
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
}

# 8/16-bit integers and 32/64-bit floats; everything else is refused.
SUPPORTED_DATATYPES = {2, 4, 16, 64, 256, 512}


@dataclass(frozen=True)
class NiftiHeader:
    dims: tuple[int, int, int, int]  # (nx, ny, nz, nt), each >= 1
    datatype: int
    bitpix: int
    vox_offset: int
    byteorder: str  # "<" or ">"


def _open(path: Path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_header(path: str | Path) -> NiftiHeader:
    """Parse the fixed NIfTI-1 header; raises FormatError when it is not one."""
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path.name}: file shorter than a NIfTI-1 header")

    byteorder = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise FormatError(f"{path.name}: not a NIfTI-1 file (bad sizeof_hdr)")
        byteorder = ">"

    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(f"{path.name}: not a NIfTI-1 file (bad magic {magic!r})")

    dim = struct.unpack_from(byteorder + "8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"{path.name}: invalid dim[0]={ndim}")
    nx = max(1, dim[1])
    ny = max(1, dim[2]) if ndim >= 2 else 1
    nz = max(1, dim[3]) if ndim >= 3 else 1
    nt = max(1, dim[4]) if ndim >= 4 else 1

    datatype, bitpix = struct.unpack_from(byteorder + "2h", raw, 70)
    (vox_offset,) = struct.unpack_from(byteorder + "f", raw, 108)
    return NiftiHeader((nx, ny, nz, nt), datatype, bitpix, int(vox_offset), byteorder)


def read_volume(path: str | Path) -> np.ndarray:
    """Read the voxel block as an array indexed [t, z, y, x].

    Raises FormatError for voxel datatypes outside the supported set.
    """
    path = Path(path)
    header = read_header(path)
    if header.datatype not in SUPPORTED_DATATYPES:
        raise FormatError(
            f"{path.name}: unsupported NIfTI voxel datatype code {header.datatype}"
        )
    nx, ny, nz, nt = header.dims
    dtype = np.dtype(_DTYPES[header.datatype]).newbyteorder(header.byteorder)
    count = nx * ny * nz * nt
    with _open(path) as fh:
        fh.seek(max(header.vox_offset, HEADER_SIZE))
        raw = fh.read(count * dtype.itemsize)
    if len(raw) < count * dtype.itemsize:
        raise FormatError(f"{path.name}: voxel block truncated")
    return np.frombuffer(raw, dtype=dtype).reshape((nt, nz, ny, nx))
