"""Shared fixture builders.

The NIfTI writer here is deliberately independent of the package reader:
it packs the fixed NIfTI-1 header with struct so reader bugs cannot hide
behind a shared implementation.
"""

from __future__ import annotations

import gzip
import json
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

_DTYPE_CODES = {
    np.dtype(np.uint8): (2, 8),
    np.dtype(np.int16): (4, 16),
    np.dtype(np.int32): (8, 32),
    np.dtype(np.float32): (16, 32),
    np.dtype(np.float64): (64, 64),
    np.dtype(np.int8): (256, 8),
    np.dtype(np.uint16): (512, 16),
}


def nifti_bytes(data: np.ndarray, datatype_code: int | None = None) -> bytes:
    """Serialize an array (indexed [t,z,y,x] or [z,y,x]) as NIfTI-1 bytes."""
    if data.ndim == 3:
        data = data[np.newaxis, ...]
    nt, nz, ny, nx = data.shape
    code, bitpix = (
        (datatype_code, _DTYPE_CODES[data.dtype][1])
        if datatype_code is not None
        else _DTYPE_CODES[data.dtype]
    )
    ndim = 4 if nt > 1 else 3

    header = bytearray(352)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, ndim, nx, ny, nz, nt, 1, 1, 1)
    struct.pack_into("<2h", header, 70, code, bitpix)
    struct.pack_into("<f", header, 108, 352.0)
    header[344:348] = b"n+1\x00"
    return bytes(header) + data.astype(data.dtype.newbyteorder("<")).tobytes()


def write_nifti(path: Path, data: np.ndarray | None = None,
                dims: tuple = (4, 4, 2), datatype_code: int | None = None) -> Path:
    if data is None:
        nx, ny, nz = dims[:3]
        nt = dims[3] if len(dims) > 3 else 1
        rng = np.random.default_rng(zlib.crc32(path.name.encode()))
        data = rng.integers(0, 1000, size=(nt, nz, ny, nx)).astype(np.int16)
    raw = nifti_bytes(data, datatype_code)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.name.endswith(".gz"):
        path.write_bytes(gzip.compress(raw, mtime=0))
    else:
        path.write_bytes(raw)
    return path


def write_pair(directory: Path, stem: str, sidecar: dict,
               dims: tuple = (4, 4, 2)) -> tuple[Path, Path]:
    """One .nii.gz + .json sidecar pair."""
    nifti = write_nifti(directory / f"{stem}.nii.gz", dims=dims)
    json_path = directory / f"{stem}.json"
    json_path.write_text(json.dumps(sidecar, indent=1))
    return nifti, json_path


def build_clean_study(root: Path, n_subjects: int = 3, n_sessions: int = 2) -> Path:
    """A clean multi-subject fixture: T1w, task bold, and a field-map pair
    per subject/session, with path-pattern subject/session labels."""
    root.mkdir(parents=True, exist_ok=True)
    for s in range(1, n_subjects + 1):
        for ses in range(1, n_sessions + 1):
            day = f"2024-0{ses}-1{s}"
            base = root / f"sub-{s:02d}" / f"ses-{ses:02d}"
            write_pair(
                base / "anat", f"sub-{s:02d}_ses-{ses:02d}_T1",
                {
                    "SeriesDescription": "t1_mprage_sag",
                    "ImageType": ["ORIGINAL", "PRIMARY", "M", "ND"],
                    "RepetitionTime": 2.3,
                    "EchoTime": 0.00296,
                    "SeriesNumber": 2,
                    "AcquisitionDateTime": f"{day}T09:00:00",
                    "PatientName": f"patient{s}",
                    "PatientSex": "F" if s % 2 else "M",
                    "PatientAge": f"0{20 + s}Y",
                    "Manufacturer": "TestScanner",
                },
            )
            write_pair(
                base / "func", f"sub-{s:02d}_ses-{ses:02d}_bold",
                {
                    "SeriesDescription": "ep2d_bold_task-nback",
                    "ImageType": ["ORIGINAL", "PRIMARY", "M", "MB"],
                    "RepetitionTime": 2.0,
                    "EchoTime": 0.03,
                    "SeriesNumber": 5,
                    "AcquisitionDateTime": f"{day}T09:10:00",
                    "PatientName": f"patient{s}",
                    "Manufacturer": "TestScanner",
                },
                dims=(4, 4, 2, 3),
            )
            for direction, sn in (("AP", 7), ("PA", 8)):
                write_pair(
                    base / "fmap", f"sub-{s:02d}_ses-{ses:02d}_dir{direction}",
                    {
                        "SeriesDescription": f"SpinEchoFieldMap_dir-{direction}",
                        "ImageType": ["ORIGINAL", "PRIMARY", "M"],
                        "RepetitionTime": 8.0,
                        "EchoTime": 0.066,
                        "SeriesNumber": sn,
                        "AcquisitionDateTime": f"{day}T09:2{sn}:00",
                        "PatientName": f"patient{s}",
                        "PhaseEncodingDirection": "j-" if direction == "AP" else "j",
                    },
                )
    return root


@pytest.fixture
def clean_study(tmp_path: Path) -> Path:
    return build_clean_study(tmp_path / "study")
