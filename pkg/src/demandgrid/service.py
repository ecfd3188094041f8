"""Job-oriented HTTP service.

Uploads are either a trip file (queued for estimation) or a previously
downloaded result archive (restored for re-visualization without
re-estimation). Jobs run FIFO on a small worker pool; records and archives
live under a workspace directory keyed by job id, with state files written
atomically on every transition so a crash leaves an inspectable trail.
"""

from __future__ import annotations

import json
import os
import queue
import shutil
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.responses import FileResponse, JSONResponse

from . import archive as archive_mod
from . import pipeline

WORKSPACE_ENV = "DEMANDGRID_WORKSPACE"

STATE_QUEUED = "queued"
STATE_RUNNING = "running"
STATE_DONE = "done"
STATE_FAILED = "failed"


@dataclass
class JobRecord:
    id: str
    state: str = STATE_QUEUED
    created_at: float = 0.0
    started_at: float | None = None
    finished_at: float | None = None
    params: dict = field(default_factory=dict)
    filename: str = ""
    restored: bool = False
    stage: str = ""
    em_iteration: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class JobStore:
    """Workspace-backed job registry with a FIFO worker pool."""

    def __init__(self, root: Path, workers: int = 1):
        self.root = root
        self.jobs_dir = root / "jobs"
        self.jobs_dir.mkdir(parents=True, exist_ok=True)
        self._records: dict[str, JobRecord] = {}
        self._archives: dict[str, archive_mod.Archive] = {}
        self._lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue()
        self._load_existing()
        self._workers = [
            threading.Thread(target=self._worker, daemon=True) for _ in range(workers)
        ]
        for w in self._workers:
            w.start()

    def _load_existing(self) -> None:
        for state_file in self.jobs_dir.glob("*/job.json"):
            try:
                rec = JobRecord(**json.loads(state_file.read_text()))
            except (json.JSONDecodeError, TypeError):
                continue
            if rec.state in (STATE_QUEUED, STATE_RUNNING):
                rec.state = STATE_FAILED
                rec.error = "interrupted by service restart"
                self._persist(rec)
            self._records[rec.id] = rec

    def job_dir(self, job_id: str) -> Path:
        return self.jobs_dir / job_id

    def _persist(self, rec: JobRecord) -> None:
        path = self.job_dir(rec.id) / "job.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(rec.to_dict(), sort_keys=True, indent=1))
        tmp.replace(path)

    def get(self, job_id: str) -> JobRecord:
        with self._lock:
            rec = self._records.get(job_id)
        if rec is None:
            raise KeyError(job_id)
        return rec

    def submit(self, upload_path: Path, filename: str, params: pipeline.EstimateParams,
               restored: bool) -> JobRecord:
        job_id = uuid.uuid4().hex[:12]
        jdir = self.job_dir(job_id)
        jdir.mkdir(parents=True)
        dest = jdir / ("upload.zip" if restored else "trips.csv")
        shutil.move(str(upload_path), dest)
        rec = JobRecord(
            id=job_id, created_at=time.time(), params=params.to_dict(),
            filename=filename, restored=restored,
        )
        with self._lock:
            self._records[job_id] = rec
        self._persist(rec)
        self._queue.put(job_id)
        return rec

    def archive_path(self, job_id: str) -> Path:
        return self.job_dir(job_id) / "archive.zip"

    def archive(self, job_id: str) -> archive_mod.Archive:
        with self._lock:
            cached = self._archives.get(job_id)
        if cached is not None:
            return cached
        arc = archive_mod.read_archive(self.archive_path(job_id))
        with self._lock:
            self._archives[job_id] = arc
        return arc

    def _worker(self) -> None:
        while True:
            job_id = self._queue.get()
            if job_id is None:
                return
            try:
                self._run(job_id)
            finally:
                self._queue.task_done()

    def _run(self, job_id: str) -> None:
        rec = self.get(job_id)
        rec.state = STATE_RUNNING
        rec.started_at = time.time()
        self._persist(rec)
        try:
            if rec.restored:
                self._restore(rec)
            else:
                self._estimate(rec)
            rec.state = STATE_DONE
        except Exception as exc:  # noqa: BLE001 - failure is a job state
            rec.state = STATE_FAILED
            rec.error = str(exc)
        rec.finished_at = time.time()
        self._persist(rec)

    def _estimate(self, rec: JobRecord) -> None:
        def progress(stage: str = "", iteration: int | None = None, delta: float | None = None):
            if stage:
                rec.stage = stage
            if iteration is not None:
                rec.em_iteration = iteration

        params = pipeline.EstimateParams.from_dict(rec.params)
        bundle = pipeline.estimate_from_file(
            self.job_dir(rec.id) / "trips.csv", params, progress=progress
        )
        archive_mod.write_archive(bundle, self.archive_path(rec.id))

    def _restore(self, rec: JobRecord) -> None:
        rec.stage = "restore"
        src = self.job_dir(rec.id) / "upload.zip"
        arc = archive_mod.read_archive(src)
        manifest = dict(arc.manifest)
        manifest["reestimated"] = False
        archive_mod.write_archive_parts(manifest, arc.results, self.archive_path(rec.id))

    def shutdown(self) -> None:
        for _ in self._workers:
            self._queue.put(None)


def create_app(workspace=None, workers: int = 1, frontend_dir=None) -> FastAPI:
    root = Path(workspace or os.environ.get(WORKSPACE_ENV, "demandgrid-workspace"))
    store = JobStore(root, workers=workers)
    app = FastAPI(title="demandgrid", version="0.1.0")
    app.state.store = store

    @app.post("/jobs")
    async def create_job(file: UploadFile = File(...), params: str = Form("{}")):
        try:
            raw = json.loads(params) if params else {}
            if not isinstance(raw, dict):
                raise ValueError("params must be a JSON object")
            job_params = pipeline.EstimateParams.from_dict(raw)
            job_params.validate()
        except pipeline.ParamError as exc:
            return JSONResponse(status_code=400, content={"errors": exc.errors})
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            return JSONResponse(status_code=400, content={"errors": {"params": str(exc)}})

        tmp = store.root / f"upload-{uuid.uuid4().hex}.tmp"
        with tmp.open("wb") as out:
            shutil.copyfileobj(file.file, out)

        restored = archive_mod.is_archive(tmp)
        if restored:
            try:
                archive_mod.read_archive(tmp)
            except archive_mod.ArchiveError as exc:
                tmp.unlink(missing_ok=True)
                return JSONResponse(status_code=400, content={"errors": {"file": str(exc)}})
        rec = store.submit(tmp, file.filename or "upload", job_params, restored)
        return rec.to_dict()

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        try:
            return store.get(job_id).to_dict()
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")

    @app.get("/jobs/{job_id}/layers")
    def job_layers(job_id: str, period: str | None = None):
        rec = _done_job(store, job_id)
        try:
            return archive_mod.layer_set(store.archive(rec.id), period)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/jobs/{job_id}/archive")
    def job_archive(job_id: str):
        rec = _done_job(store, job_id)
        return FileResponse(
            store.archive_path(rec.id),
            media_type="application/zip",
            filename=f"demandgrid-{rec.id}.zip",
        )

    @app.get("/jobs/{job_id}/manifest")
    def job_manifest(job_id: str):
        rec = _done_job(store, job_id)
        return store.archive(rec.id).manifest

    if frontend_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")
    return app


def _done_job(store: JobStore, job_id: str) -> JobRecord:
    try:
        rec = store.get(job_id)
    except KeyError:
        raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
    if rec.state != STATE_DONE:
        raise HTTPException(
            status_code=409,
            detail=f"job {job_id} is {rec.state}" + (f": {rec.error}" if rec.error else ""),
        )
    return rec
