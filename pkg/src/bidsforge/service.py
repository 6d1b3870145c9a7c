"""Token-scoped session service hosting the propose-and-revise lifecycle:
anonymous sessions, upload, analysis, document edits with optimistic
versioning, finalization, download, and retention-based purging.

Tokens are the only handle on a session; an unknown token is
indistinguishable from one that never existed.
"""

from __future__ import annotations

import logging
import secrets
import shutil
import threading
import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path, PurePosixPath

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import emitter, pipeline, subjects as subjects_mod
from . import series as series_mod
from .config import Config
from .errors import (
    BidsforgeError,
    ConfigurationError,
    EmissionRefusedError,
    EntityError,
    MappingError,
)
from .ingest import archive_suffix, unpack_upload
from .model import ProposalDocument, serialize_document
from .validation import load_schema, validate_document

log = logging.getLogger(__name__)

TOKEN_BYTES = 48  # 384 bits -> 64 url-safe characters


@dataclass
class Session:
    token: str
    workdir: Path
    state: str = "created"
    created_at: float = dataclass_field(default_factory=time.time)
    last_touched_at: float = dataclass_field(default_factory=time.time)
    document: ProposalDocument | None = None
    error: str | None = None
    report: dict = dataclass_field(default_factory=dict)
    lock: threading.Lock = dataclass_field(default_factory=threading.Lock)

    @property
    def upload_dir(self) -> Path:
        return self.workdir / "upload"

    @property
    def tree_dir(self) -> Path:
        return self.workdir / "tree"

    @property
    def thumbnails_dir(self) -> Path:
        return self.workdir / "thumbnails"

    @property
    def bids_dir(self) -> Path:
        return self.workdir / "bids"

    @property
    def archive_path(self) -> Path:
        return self.workdir / "download.zip"


class SessionStore:
    """All live sessions; every operation goes through the token."""

    def __init__(self, config: Config):
        self.config = config
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._sweeper: threading.Thread | None = None

    def create(self) -> Session:
        token = secrets.token_urlsafe(TOKEN_BYTES)
        workdir = self.config.data_dir / token
        try:
            workdir.mkdir(parents=True, exist_ok=False)
            (workdir / "upload").mkdir()
        except OSError as exc:
            raise HTTPException(status_code=503, detail=f"storage unavailable: {exc}")
        session = Session(token=token, workdir=workdir)
        with self._lock:
            self.sessions[token] = session
        return session

    def require(self, token: str) -> Session:
        with self._lock:
            session = self.sessions.get(token)
        if session is None:
            raise HTTPException(status_code=404, detail="not found")
        session.last_touched_at = time.time()
        return session

    def expire_sessions(self, now: float | None = None) -> list[str]:
        """Purge sessions idle past the retention window, workdirs included."""
        now = now if now is not None else time.time()
        horizon = self.config.retention_days * 86400.0
        purged: list[str] = []
        with self._lock:
            for token, session in list(self.sessions.items()):
                if now - session.last_touched_at > horizon:
                    shutil.rmtree(session.workdir, ignore_errors=True)
                    del self.sessions[token]
                    purged.append(token)
        return purged

    def start_sweeper(self, interval_seconds: float = 3600.0) -> None:
        if self._sweeper is not None:
            return

        def loop() -> None:
            while True:
                time.sleep(interval_seconds)
                try:
                    purged = self.expire_sessions()
                    if purged:
                        log.info("purged %d expired session(s)", len(purged))
                except Exception:
                    log.exception("session sweep failed")

        self._sweeper = threading.Thread(target=loop, daemon=True)
        self._sweeper.start()


def _safe_relpath(name: str) -> PurePosixPath:
    pure = PurePosixPath(name.replace("\\", "/"))
    if pure.is_absolute() or ".." in pure.parts or not pure.parts:
        raise HTTPException(status_code=400, detail=f"bad upload filename {name!r}")
    return pure


def _status_payload(session: Session) -> dict:
    return {
        "state": session.state,
        "version": session.document.version if session.document else None,
        "error": session.error,
        "report": session.report,
    }


def create_app(config: Config | None = None) -> FastAPI:
    config = config or Config.from_env()
    config.data_dir.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="bidsforge", version="0.1.0")
    store = SessionStore(config)
    app.state.store = store

    # ---- vocabulary for client dropdowns ------------------------------------

    @app.get("/schema")
    def schema() -> dict:
        table = load_schema()
        datatypes: dict[str, list[str]] = {}
        for datatype, suffix in table.pairs():
            datatypes.setdefault(datatype, []).append(suffix)
        return {
            "bidsVersion": table.bids_version,
            "entityOrder": table.entity_order,
            "datatypes": datatypes,
        }

    # ---- session lifecycle ------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session() -> dict:
        session = store.create()
        return {"token": session.token, "state": session.state}

    @app.get("/sessions/{token}/status")
    def status(token: str) -> dict:
        return _status_payload(store.require(token))

    @app.post("/sessions/{token}/upload", status_code=202)
    async def upload(token: str, request: Request) -> dict:
        session = store.require(token)
        with session.lock:
            if session.state not in ("created", "uploading"):
                raise HTTPException(409, f"cannot upload in state {session.state}")
            session.state = "uploading"
        stored: list[str] = []
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/"):
            form = await request.form()
            for item in form.getlist("files"):
                rel = _safe_relpath(item.filename or "upload.bin")
                dest = session.upload_dir / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_bytes(await item.read())
                stored.append(str(rel))
        else:
            name = request.query_params.get("filename", "upload.bin")
            rel = _safe_relpath(name)
            body = await request.body()
            if not body:
                raise HTTPException(400, "empty upload body")
            dest = session.upload_dir / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(body)
            stored.append(str(rel))
        return {"stored": stored, "state": session.state}

    def _build_tree(session: Session) -> Path:
        tree = session.tree_dir
        if tree.exists():
            shutil.rmtree(tree)
        tree.mkdir(parents=True)
        for path in sorted(session.upload_dir.rglob("*")):
            if not path.is_file():
                continue
            rel = path.relative_to(session.upload_dir)
            if archive_suffix(path):
                scratch = session.workdir / "scratch"
                if scratch.exists():
                    shutil.rmtree(scratch)
                extracted = unpack_upload(path, workdir=scratch)
                shutil.copytree(extracted, tree, dirs_exist_ok=True)
                shutil.rmtree(scratch)
            else:
                dest = tree / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(path, dest)
        return tree

    def _run_analysis(session: Session) -> None:
        try:
            tree = _build_tree(session)
            doc, report = pipeline.analyze_tree(
                tree, config, thumbnails_dir=session.thumbnails_dir
            )
            with session.lock:
                session.document = doc
                session.report = {
                    "unpaired": report.discovery.unpaired,
                    "skipped": report.discovery.skipped,
                    "converterErrors": report.conversion.errors,
                    "eventsErrors": report.events_errors,
                }
                (session.workdir / "core.json").write_bytes(serialize_document(doc))
                session.state = "editable"
        except Exception as exc:
            log.exception("analysis failed for session %s", session.token[:8])
            with session.lock:
                session.state = "failed"
                session.error = str(exc)

    @app.post("/sessions/{token}/analyze", status_code=202)
    def analyze(token: str) -> dict:
        session = store.require(token)
        with session.lock:
            if session.state not in ("created", "uploading", "editable", "failed"):
                raise HTTPException(409, f"cannot analyze in state {session.state}")
            if not any(p.is_file() for p in session.upload_dir.rglob("*")):
                raise HTTPException(400, "no files have been uploaded")
            session.state = "analyzing"
            session.error = None
        threading.Thread(target=_run_analysis, args=(session,), daemon=True).start()
        return {"state": "analyzing"}

    # ---- document ----------------------------------------------------------

    def _require_document(session: Session) -> ProposalDocument:
        if session.document is None:
            raise HTTPException(409, f"no document yet (state {session.state})")
        return session.document

    @app.get("/sessions/{token}/document")
    def get_document(token: str) -> Response:
        session = store.require(token)
        doc = _require_document(session)
        return Response(content=serialize_document(doc), media_type="application/json")

    @app.get("/sessions/{token}/validation")
    def get_validation(token: str) -> dict:
        session = store.require(token)
        doc = _require_document(session)
        items = validate_document(doc)
        return {
            "items": [i.to_dict() for i in items],
            "errors": sum(1 for i in items if i.severity == "error"),
            "warnings": sum(1 for i in items if i.severity == "warning"),
        }

    def _apply_edit(doc: ProposalDocument, edit: dict, session: Session) -> ProposalDocument:
        op = edit.get("op")
        if op == "series":
            return series_mod.propagate_series_edit(
                doc,
                int(edit["seriesId"]),
                datatype=edit.get("datatype"),
                suffix=edit.get("suffix"),
                entities=edit.get("entities"),
                schema=load_schema(),
                singleton_run=config.singleton_run,
            )
        if op == "object":
            return pipeline.apply_object_edit(
                doc,
                int(edit["objectId"]),
                overrides=edit.get("entityOverrides"),
                exclude=edit.get("exclude"),
                config=config,
                root=session.tree_dir,
            )
        if op == "remapSubjects":
            return subjects_mod.remap_subjects(doc, edit["strategy"])
        if op == "subjectLabel":
            return pipeline.apply_subject_label_edit(doc, int(edit["index"]), edit["label"])
        if op == "datasetDescription":
            return pipeline.apply_dataset_description(doc, edit.get("fields", {}))
        if op == "eventsMapping":
            return pipeline.apply_events_mapping(doc, edit["mapping"], session.tree_dir)
        if op == "linkEvents":
            return pipeline.apply_events_link_edit(
                doc, int(edit["objectId"]), edit.get("labels", {}), session.tree_dir
            )
        if op == "participants":
            return pipeline.apply_participants_edit(
                doc, columns=edit.get("columns"), values=edit.get("values")
            )
        raise HTTPException(400, f"unknown edit op {op!r}")

    @app.patch("/sessions/{token}/document")
    async def patch_document(token: str, request: Request) -> JSONResponse:
        session = store.require(token)
        body = await request.json()
        expected = body.get("expectedVersion")
        edits = body.get("edits", [])
        if not isinstance(edits, list) or expected is None:
            raise HTTPException(400, "body must carry expectedVersion and edits[]")
        with session.lock:
            if session.state != "editable":
                raise HTTPException(409, f"document is not editable in state {session.state}")
            doc = _require_document(session)
            if doc.version != expected:
                return JSONResponse(
                    status_code=409,
                    content={
                        "detail": "version conflict",
                        "currentVersion": doc.version,
                        "document": serialize_document(doc).decode(),
                    },
                )
            working = doc
            try:
                for edit in edits:
                    working = _apply_edit(working, edit, session)
            except (EntityError, MappingError) as exc:
                item = exc.item.to_dict() if isinstance(exc, EntityError) else None
                raise HTTPException(
                    status_code=422,
                    detail={"message": str(exc), "item": item},
                )
            except (KeyError, ValueError, TypeError, ConfigurationError, BidsforgeError) as exc:
                raise HTTPException(status_code=422, detail={"message": str(exc)})
            # one PATCH, one version step, regardless of how many ops it carried
            working.version = expected + 1
            session.document = working
        return JSONResponse({"version": working.version})

    # ---- events upload -------------------------------------------------------

    @app.post("/sessions/{token}/events", status_code=202)
    async def upload_events(token: str, request: Request) -> dict:
        session = store.require(token)
        form = await request.form()
        files = form.getlist("files")
        if not files:
            raise HTTPException(400, "no files")
        with session.lock:
            if session.state != "editable":
                raise HTTPException(409, f"cannot add events files in state {session.state}")
            doc = _require_document(session)
            rel_paths: list[str] = []
            for item in files:
                rel = PurePosixPath("events-uploads") / _safe_relpath(
                    item.filename or "events.tsv"
                ).name
                dest = session.tree_dir / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_bytes(await item.read())
                rel_paths.append(str(rel))
            session.document = pipeline.add_events_objects(doc, session.tree_dir, rel_paths)
        return {"stored": rel_paths, "version": session.document.version}

    # ---- finalize and download ------------------------------------------------

    def _run_finalize(session: Session) -> None:
        try:
            doc = session.document
            if session.bids_dir.exists():
                shutil.rmtree(session.bids_dir)
            report = emitter.emit(doc, session.tree_dir, session.bids_dir, config)
            if report.failed:
                raise BidsforgeError(f"write failed at {report.failed[0]}: {report.failed[1]}")
            emitter.archive_tree(session.bids_dir, session.archive_path)
            with session.lock:
                session.report = {
                    "written": report.written,
                    "notes": report.notes,
                    "postValidation": [i.to_dict() for i in report.post_validation],
                }
                session.state = "done"
        except Exception as exc:
            log.exception("finalize failed for session %s", session.token[:8])
            with session.lock:
                session.state = "failed"
                session.error = str(exc)

    @app.post("/sessions/{token}/finalize", status_code=202)
    def finalize(token: str) -> dict:
        session = store.require(token)
        with session.lock:
            if session.state != "editable":
                raise HTTPException(409, f"cannot finalize in state {session.state}")
            doc = _require_document(session)
            blockers = emitter.finalization_blockers(doc)
            if blockers:
                raise HTTPException(
                    status_code=412,
                    detail={
                        "message": "validation errors must be addressed before finalizing",
                        "errors": [i.to_dict() for i in blockers],
                    },
                )
            session.state = "finalizing"
        threading.Thread(target=_run_finalize, args=(session,), daemon=True).start()
        return {"state": "finalizing"}

    @app.get("/sessions/{token}/download")
    def download(token: str) -> FileResponse:
        session = store.require(token)
        if session.state != "done" or not session.archive_path.is_file():
            raise HTTPException(412, f"no finalized dataset yet (state {session.state})")
        return FileResponse(
            session.archive_path, media_type="application/zip", filename="bids.zip"
        )

    @app.get("/sessions/{token}/objects/{object_id}/thumbnail")
    def thumbnail(token: str, object_id: int) -> FileResponse:
        session = store.require(token)
        path = session.thumbnails_dir / f"obj-{object_id}.png"
        if not path.is_file():
            raise HTTPException(404, "not found")
        return FileResponse(path, media_type="image/png")

    # ---- static UI bundle -------------------------------------------------------

    ui_dir = getattr(config, "ui_dir", None)
    if ui_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = candidate if candidate.is_dir() else None
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def run_server(config: Config | None = None) -> None:
    """Blocking entry point used by the CLI serve subcommand."""
    import uvicorn

    config = config or Config.from_env()
    app = create_app(config)
    app.state.store.start_sweeper()
    uvicorn.run(app, host="127.0.0.1", port=config.port, log_level="info")
