"""HTTP JSON API over the curation store, under /api/v1.

Endpoints:
  POST /api/v1/jobs                     run a synthesis job asynchronously
  GET  /api/v1/jobs/{job_id}            job status + report
  GET  /api/v1/dialogues                paged review queue with filters
  GET  /api/v1/dialogues/{record_id}    one record
  POST /api/v1/dialogues/{record_id}/review   approve / reject / edit
  GET  /api/v1/images/{digest}          raw image bytes
  GET  /api/v1/export                   streamed JSONL of current records

Errors are JSON {"code", "message"}: 404 unknown record/image/job, 409 for
duplicate records and invalid review transitions, 422 for payload problems.
"""

from __future__ import annotations

import logging
import threading
import uuid
from typing import Optional

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse
from pydantic import BaseModel

from .curation import (
    CurationStore,
    DuplicateRecord,
    EmptyEdit,
    InvalidTransition,
    UnknownRecord,
)
from .dataset import apply_structure_mode
from .domain import StructureMode, SynthesisJob, errors_only
from .synthesis import JobConfigurationError, SynthesisEngine

logger = logging.getLogger(__name__)


class ReviewBody(BaseModel):
    action: str
    turn_phase: Optional[str] = None
    edited_answer: Optional[str] = None
    reviewer: str
    note: Optional[str] = None


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def create_app(store: CurationStore, engine: Optional[SynthesisEngine] = None) -> FastAPI:
    app = FastAPI(title="sdft curation service", version="1")
    jobs: dict[str, dict] = {}
    jobs_lock = threading.Lock()

    @app.exception_handler(UnknownRecord)
    async def _unknown(_req: Request, exc: UnknownRecord):
        return _error(404, "unknown_record", str(exc))

    @app.exception_handler(DuplicateRecord)
    async def _duplicate(_req: Request, exc: DuplicateRecord):
        return _error(409, "duplicate_record", str(exc))

    @app.exception_handler(InvalidTransition)
    async def _transition(_req: Request, exc: InvalidTransition):
        return _error(409, "invalid_transition", str(exc))

    @app.exception_handler(EmptyEdit)
    async def _empty_edit(_req: Request, exc: EmptyEdit):
        return _error(422, "empty_edit", str(exc))

    @app.exception_handler(ValueError)
    async def _value_error(_req: Request, exc: ValueError):
        return _error(422, "invalid_request", str(exc))

    @app.post("/api/v1/jobs")
    def submit_job(body: dict):
        if engine is None:
            return _error(422, "no_engine", "this server was started without model endpoints")
        try:
            job = SynthesisJob.from_dict(body)
        except (KeyError, ValueError) as exc:
            return _error(422, "invalid_job", f"job spec problem: {exc}")
        problems = errors_only(job.validate())
        if problems:
            return _error(422, "invalid_job", "; ".join(str(p) for p in problems))
        job_id = job.job_id or uuid.uuid4().hex
        with jobs_lock:
            if job_id in jobs and jobs[job_id]["status"] == "running":
                return _error(409, "job_running", f"job {job_id} is already running")
            jobs[job_id] = {"status": "running", "report": None, "error": None}

        def run() -> None:
            try:
                triplets, report = engine.run_job(job)
                concepts = {c.id: c for c in job.concepts}
                for triplet in triplets:
                    store.record_dialogue(triplet, concepts[triplet.concept_id], job.weights)
                with jobs_lock:
                    jobs[job_id] = {"status": "done", "report": report.to_dict(), "error": None}
            except (JobConfigurationError, DuplicateRecord, Exception) as exc:
                logger.exception("job %s failed", job_id)
                with jobs_lock:
                    jobs[job_id] = {"status": "failed", "report": None, "error": str(exc)}

        threading.Thread(target=run, name=f"sdft-job-{job_id}", daemon=True).start()
        return {"job_id": job_id}

    @app.get("/api/v1/jobs/{job_id}")
    def job_status(job_id: str):
        with jobs_lock:
            info = jobs.get(job_id)
        if info is None:
            return _error(404, "unknown_job", f"no job {job_id}")
        return {"job_id": job_id, **info}

    @app.get("/api/v1/dialogues")
    def list_dialogues(
        status: Optional[str] = None,
        concept: Optional[str] = None,
        flagged: Optional[bool] = None,
        page: int = Query(1, ge=1),
        page_size: int = Query(50, ge=1, le=200),
    ):
        return store.list_dialogues(
            status=status, concept_id=concept, flagged=flagged, page=page, page_size=page_size
        ).to_dict()

    @app.get("/api/v1/dialogues/{record_id}")
    def get_dialogue(record_id: str):
        return store.get(record_id)

    @app.post("/api/v1/dialogues/{record_id}/review")
    def review(record_id: str, body: ReviewBody):
        return store.review_dialogue(
            record_id,
            action=body.action,
            turn_phase=body.turn_phase,
            edited_answer=body.edited_answer,
            reviewer=body.reviewer,
            note=body.note,
        )

    @app.get("/api/v1/images/{digest}")
    def image(digest: str):
        data, mime = store.image_bytes(digest)
        return Response(content=data, media_type=mime)

    @app.get("/api/v1/export")
    def export(approved_only: bool = True, mode: str = "full"):
        try:
            structure_mode = StructureMode(mode)
        except ValueError:
            return _error(422, "invalid_mode", f"unknown structure mode {mode!r}")
        records = store.current_records()
        if approved_only:
            records = [r for r in records if r.status in ("approved", "edited")]

        def lines():
            for record in records:
                yield apply_structure_mode(record, structure_mode).to_line() + "\n"

        return StreamingResponse(lines(), media_type="application/jsonl")

    return app
