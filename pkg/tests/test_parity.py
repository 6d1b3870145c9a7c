"""CLI and service runs over the same input must agree byte for byte."""

import hashlib
import io
import time
import zipfile
from pathlib import Path

from click.testing import CliRunner
from fastapi.testclient import TestClient

from bidsforge import cli
from bidsforge.config import Config
from bidsforge.service import create_app

from conftest import build_clean_study


def _zip_of(tree: Path) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for path in sorted(tree.rglob("*")):
            if path.is_file():
                zf.write(path, path.relative_to(tree).as_posix())
    return buf.getvalue()


def _tree_hashes(root: Path) -> dict[str, str]:
    return {
        p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_cli_and_service_produce_identical_documents_and_trees(tmp_path):
    study = build_clean_study(tmp_path / "study")

    # CLI route: propose (with thumbnails, as the service always renders them)
    runner = CliRunner()
    core = tmp_path / "core.json"
    result = runner.invoke(cli.main, [
        "propose", str(study), "--out", str(core),
        "--thumbnails", str(tmp_path / "thumbs"),
    ])
    assert result.exit_code == 0, result.output
    cli_document = core.read_bytes()

    bids_cli = tmp_path / "bids-cli"
    result = runner.invoke(cli.main, [
        "finalize", str(core), "--data", str(study), "--out", str(bids_cli),
    ])
    assert result.exit_code == 0, result.output

    # service route: upload -> analyze -> finalize -> emitted tree on disk
    config = Config(data_dir=tmp_path / "sessions")
    app = create_app(config)
    with TestClient(app) as client:
        token = client.post("/sessions").json()["token"]
        client.post(
            f"/sessions/{token}/upload",
            files=[("files", ("study.zip", _zip_of(study), "application/zip"))],
        )
        client.post(f"/sessions/{token}/analyze")
        deadline = time.time() + 20
        while time.time() < deadline:
            if client.get(f"/sessions/{token}/status").json()["state"] == "editable":
                break
            time.sleep(0.05)
        service_document = client.get(f"/sessions/{token}/document").content
        client.post(f"/sessions/{token}/finalize")
        while time.time() < deadline:
            if client.get(f"/sessions/{token}/status").json()["state"] == "done":
                break
            time.sleep(0.05)
        session = app.state.store.sessions[token]
        assert service_document == cli_document
        assert _tree_hashes(session.bids_dir) == _tree_hashes(bids_cli)
