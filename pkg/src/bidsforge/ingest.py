"""Upload intake: archive extraction, optional DICOM conversion via an
external binary, image discovery, and thumbnail rendering.

Nothing here writes outside the session working directory, and discovery
is a pure function of the file tree.
"""

from __future__ import annotations

import bz2
import gzip
import io
import logging
import shutil
import subprocess
import tarfile
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

import numpy as np
from PIL import Image

from . import niftiio
from .config import Config
from .errors import (
    ConfigurationError,
    ExtractionError,
    FormatError,
    UnsafeArchiveError,
)
from .model import SidecarMetadata, parse_sidecar

log = logging.getLogger(__name__)

# Accepted upload archive extensions. Plain .gz/.bz2 are single-file
# decompressions; a decompressed inner .tar is picked up by the one-level
# nested-archive pass.
ARCHIVE_SUFFIXES = (".tar.xz", ".tgz", ".tar", ".zip", ".gz", ".bz2", ".7z", ".rar")

EXTERNAL_DECODERS = {".7z": ("7z", "7za"), ".rar": ("unrar",)}


@dataclass
class ImageRecord:
    nifti_path: Path
    sidecar_path: Path
    sidecar: SidecarMetadata
    byte_size: int
    dims: tuple[int, int, int, int]


@dataclass
class DiscoveryReport:
    unpaired: list[str] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (path, reason)


@dataclass
class ConversionReport:
    converted_dirs: list[str] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)  # (dir, captured output)


def archive_suffix(path: Path) -> str | None:
    name = path.name.lower()
    for suffix in ARCHIVE_SUFFIXES:
        if name.endswith(suffix):
            return suffix
    return None


def _check_entry(name: str) -> None:
    pure = PurePosixPath(name.replace("\\", "/"))
    if pure.is_absolute() or ".." in pure.parts:
        raise UnsafeArchiveError(name)


def _extract_tar(archive: Path, dest: Path) -> None:
    try:
        with tarfile.open(archive) as tar:
            for member in tar.getmembers():
                _check_entry(member.name)
                if member.islnk() or member.issym():
                    # link targets can escape the root just like .. entries
                    _check_entry(member.linkname)
            tar.extractall(dest)
    except tarfile.TarError as exc:
        raise ExtractionError(f"{archive.name}: {exc}") from exc


def _extract_zip(archive: Path, dest: Path) -> None:
    try:
        with zipfile.ZipFile(archive) as zf:
            for info in zf.infolist():
                _check_entry(info.filename)
            zf.extractall(dest)
    except zipfile.BadZipFile as exc:
        raise ExtractionError(f"{archive.name}: {exc}") from exc


def _extract_single(archive: Path, dest: Path, opener) -> None:
    inner = dest / archive.name[: archive.name.rfind(".")]
    try:
        with opener(archive, "rb") as src, open(inner, "wb") as out:
            shutil.copyfileobj(src, out)
    except OSError as exc:
        inner.unlink(missing_ok=True)  # no partial output
        raise ExtractionError(f"{archive.name}: {exc}") from exc


def _extract_external(archive: Path, dest: Path, suffix: str) -> None:
    exe = None
    for candidate in EXTERNAL_DECODERS[suffix]:
        exe = shutil.which(candidate)
        if exe:
            break
    if exe is None:
        raise FormatError(
            f"no decoder available for {suffix} archives "
            f"(install one of: {', '.join(EXTERNAL_DECODERS[suffix])})"
        )
    if suffix == ".7z":
        cmd = [exe, "x", "-y", f"-o{dest}", str(archive)]
    else:
        cmd = [exe, "x", "-y", str(archive), str(dest) + "/"]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ExtractionError(f"{archive.name}: {proc.stderr.strip() or proc.stdout.strip()}")


def _extract(archive: Path, dest: Path) -> None:
    suffix = archive_suffix(archive)
    if suffix is None:
        raise FormatError(
            f"unsupported upload format {archive.name!r}; accepted: "
            + ", ".join(ARCHIVE_SUFFIXES)
        )
    dest.mkdir(parents=True, exist_ok=True)
    if suffix in (".tar", ".tgz", ".tar.xz"):
        _extract_tar(archive, dest)
    elif suffix == ".zip":
        _extract_zip(archive, dest)
    elif suffix == ".gz":
        _extract_single(archive, dest, gzip.open)
    elif suffix == ".bz2":
        _extract_single(archive, dest, bz2.open)
    else:
        _extract_external(archive, dest, suffix)


def unpack_upload(source: str | Path, workdir: str | Path | None = None) -> Path:
    """Return a directory holding the upload's file tree.

    Directories pass through unchanged. Archives are extracted into a
    private directory; archives found inside are extracted one level deep.
    """
    source = Path(source)
    if source.is_dir():
        return source
    if not source.exists():
        raise ExtractionError(f"upload source does not exist: {source}")

    root = Path(workdir) if workdir is not None else Path(tempfile.mkdtemp(prefix="bidsforge-"))
    extracted = root / "extracted"
    _extract(source, extracted)

    # one level of nesting: archives inside the upload are expanded in place;
    # .nii.gz files are imaging data, not archives
    nested = [
        p
        for p in sorted(extracted.rglob("*"))
        if p.is_file() and archive_suffix(p) and not p.name.lower().endswith(".nii.gz")
    ]
    for inner in nested:
        inner_dest = inner.parent / (inner.name + ".contents")
        try:
            _extract(inner, inner_dest)
        except (FormatError, ExtractionError) as exc:
            log.warning("nested archive %s not extracted: %s", inner.name, exc)
            if inner_dest.is_dir():
                shutil.rmtree(inner_dest, ignore_errors=True)
            continue
        inner.unlink()
    return extracted


# --------------------------------------------------------------------------
# External DICOM-to-NIfTI conversion
# --------------------------------------------------------------------------


def _looks_like_dicom(path: Path) -> bool:
    if path.suffix.lower() in (".dcm", ".ima"):
        return True
    try:
        with open(path, "rb") as fh:
            fh.seek(128)
            return fh.read(4) == b"DICM"
    except OSError:
        return False


def find_dicom_dirs(tree: Path) -> list[Path]:
    dirs = []
    for directory in sorted([tree] + [p for p in tree.rglob("*") if p.is_dir()]):
        files = [p for p in directory.iterdir() if p.is_file()]
        if any(_looks_like_dicom(f) for f in files):
            dirs.append(directory)
    return dirs


def run_external_converter(tree: str | Path, config: Config) -> ConversionReport:
    """Invoke the configured converter once per DICOM directory.

    Per-directory failures are collected into the report and never abort the
    run; a missing executable is a configuration error raised before any work.
    """
    tree = Path(tree)
    report = ConversionReport()
    dicom_dirs = find_dicom_dirs(tree)
    if not dicom_dirs:
        return report
    if not config.converter_path:
        raise ConfigurationError(
            "DICOM directories found but no converter executable is configured"
        )
    exe = shutil.which(config.converter_path) or (
        config.converter_path if Path(config.converter_path).is_file() else None
    )
    if exe is None:
        raise ConfigurationError(f"converter executable not found: {config.converter_path}")

    for directory in dicom_dirs:
        args = [a.format(out=str(directory), dir=str(directory)) for a in config.converter_args]
        proc = subprocess.run([exe, *args], capture_output=True, text=True)
        if proc.returncode != 0:
            report.errors.append(
                (str(directory), (proc.stderr or proc.stdout).strip())
            )
            log.warning("converter failed in %s (exit %d)", directory, proc.returncode)
        else:
            report.converted_dirs.append(str(directory))
    return report


# --------------------------------------------------------------------------
# Discovery
# --------------------------------------------------------------------------


def _nifti_stem(path: Path) -> str | None:
    name = path.name
    if name.endswith(".nii.gz"):
        return name[: -len(".nii.gz")]
    if name.endswith(".nii"):
        return name[: -len(".nii")]
    return None


def discover_images(tree: str | Path) -> tuple[list[ImageRecord], DiscoveryReport]:
    """Pair every NIfTI with its same-stem JSON sidecar, lexicographically.

    Returns the records plus a report of unpaired files and skipped records.
    """
    tree = Path(tree)
    report = DiscoveryReport()
    records: list[ImageRecord] = []

    niftis: dict[Path, Path] = {}  # sidecar path -> nifti path
    json_paths = set()
    for path in sorted(tree.rglob("*")):
        if not path.is_file():
            continue
        stem = _nifti_stem(path)
        if stem is not None:
            niftis[path.parent / (stem + ".json")] = path
        elif path.suffix == ".json":
            json_paths.add(path)

    for sidecar_path in sorted(niftis):
        nifti_path = niftis[sidecar_path]
        if sidecar_path not in json_paths:
            report.unpaired.append(str(nifti_path.relative_to(tree)))
            continue
        json_paths.discard(sidecar_path)
        try:
            sidecar = parse_sidecar(sidecar_path.read_bytes())
        except Exception as exc:
            report.skipped.append((str(nifti_path.relative_to(tree)), str(exc)))
            continue
        try:
            header = niftiio.read_header(nifti_path)
        except FormatError as exc:
            report.skipped.append((str(nifti_path.relative_to(tree)), str(exc)))
            continue
        records.append(
            ImageRecord(
                nifti_path=nifti_path,
                sidecar_path=sidecar_path,
                sidecar=sidecar,
                byte_size=nifti_path.stat().st_size,
                dims=header.dims,
            )
        )

    # leftover sidecars with no image are reported, not fatal
    for orphan in sorted(json_paths):
        report.unpaired.append(str(orphan.relative_to(tree)))
    return records, report


def render_thumbnail(nifti_path: str | Path) -> bytes:
    """Grayscale PNG of the middle axial slice (middle volume when 4-D).

    Intensities are min-max normalized; a constant image renders mid-gray.
    Raises FormatError for unsupported voxel datatypes (callers record a
    warning and move on).
    """
    volume = niftiio.read_volume(nifti_path)  # [t, z, y, x]
    nt, nz = volume.shape[0], volume.shape[1]
    slc = volume[nt // 2, nz // 2].astype(np.float64)
    lo, hi = float(slc.min()), float(slc.max())
    if hi > lo:
        gray = np.round((slc - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        gray = np.full(slc.shape, 128, dtype=np.uint8)
    image = Image.fromarray(gray, mode="L")
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()
