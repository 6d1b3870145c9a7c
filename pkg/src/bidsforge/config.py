"""Runtime configuration, resolved from environment variables and CLI flags."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

BIDS_VERSION = "1.8.0"  # version the embedded schema table was built against

ENV_DATA_DIR = "EZB_DATA_DIR"
ENV_RETENTION_DAYS = "EZB_RETENTION_DAYS"
ENV_PORT = "EZB_PORT"
ENV_CONVERTER_PATH = "EZB_CONVERTER_PATH"
ENV_KEYPHRASE_FILE = "EZB_KEYPHRASE_FILE"

DEFAULT_RETENTION_DAYS = 5.0
DEFAULT_PORT = 8383

# argv template for the external DICOM-to-NIfTI converter, per DICOM directory
DEFAULT_CONVERTER_ARGS = ("-b", "y", "-z", "y", "-o", "{out}", "{dir}")


@dataclass
class Config:
    data_dir: Path = field(default_factory=lambda: Path("bidsforge-data"))
    retention_days: float = DEFAULT_RETENTION_DAYS
    port: int = DEFAULT_PORT
    converter_path: str | None = None
    converter_args: tuple[str, ...] = DEFAULT_CONVERTER_ARGS
    keyphrase_file: Path | None = None
    session_gap_hours: float = 4.0
    singleton_run: bool = False  # assign run-1 to singleton acquisitions
    bids_version: str = BIDS_VERSION
    ui_dir: Path | None = None  # built web bundle served at /
    # optional external validator binary, run informationally on emitted trees
    external_validator: str | None = None

    @classmethod
    def from_env(cls, **overrides) -> "Config":
        cfg = cls()
        if ENV_DATA_DIR in os.environ:
            cfg.data_dir = Path(os.environ[ENV_DATA_DIR])
        if ENV_RETENTION_DAYS in os.environ:
            cfg.retention_days = float(os.environ[ENV_RETENTION_DAYS])
        if ENV_PORT in os.environ:
            cfg.port = int(os.environ[ENV_PORT])
        if ENV_CONVERTER_PATH in os.environ:
            cfg.converter_path = os.environ[ENV_CONVERTER_PATH]
        if ENV_KEYPHRASE_FILE in os.environ:
            cfg.keyphrase_file = Path(os.environ[ENV_KEYPHRASE_FILE])
        for name, value in overrides.items():
            if value is not None:
                setattr(cfg, name, value)
        return cfg
