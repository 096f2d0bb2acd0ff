"""Loopback HTTP service driving the pipeline for the companion UI.

Sessions live in memory only. Nothing is ever written to disk by the
service itself; CSV and transcript downloads are streamed from memory, and
DELETE erases every trace of a session (cancelling a running analysis
first). There is no persistence across restarts by design.
"""

from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import __version__
from .chunking import TokenBudget
from .corpus import ColumnMapping, Dataset, assign_roles, guess_format, parse_dataset
from .errors import AuthFailedError, QualiError, RunCancelledError, SessionNotFoundError
from .exporter import render_csv, render_transcript
from .gateway import DEFAULT_MODEL, DEFAULT_TEMPERATURE, HttpBackend
from .mock import MockBackend, validate_script
from .pipeline import PipelineResult, run_pipeline
from .prompts import PromptConfig, preview as preview_prompt

DEFAULT_PORT = 8641

_RESTARTABLE = {"idle", "complete", "aborted"}


@dataclass
class Session:
    session_id: str
    backend_name: str
    backend: Any
    api_key: str
    model_id: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    dataset: Dataset | None = None
    config: PromptConfig | None = None
    status: str = "idle"
    batches_total: int = 0
    batches_done: int = 0
    recovery: list[str] = field(default_factory=list)
    result: PipelineResult | None = None
    error: dict | None = None
    thread: threading.Thread | None = None
    cancel: threading.Event = field(default_factory=threading.Event)


class SessionRegistry:
    """Concurrent in-memory session map; the only session store there is."""

    def __init__(self) -> None:
        self._sessions: dict[str, Session] = {}
        self._lock = threading.RLock()

    def create(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.session_id] = session

    def get(self, session_id: str) -> Session:
        with self._lock:
            try:
                return self._sessions[session_id]
            except KeyError:
                raise SessionNotFoundError(f"no session {session_id!r}") from None

    def remove(self, session_id: str) -> Session:
        with self._lock:
            try:
                return self._sessions.pop(session_id)
            except KeyError:
                raise SessionNotFoundError(f"no session {session_id!r}") from None

    def dump_state(self) -> str:
        """Full repr of everything the registry holds (used by erasure tests)."""
        with self._lock:
            parts = []
            for session in self._sessions.values():
                parts.append(
                    f"Session(id={session.session_id}, backend={session.backend_name}, "
                    f"api_key={session.api_key!r}, status={session.status}, "
                    f"records={len(session.dataset.records) if session.dataset else 0})"
                )
            return "\n".join(parts)


class CreateSessionBody(BaseModel):
    backend: str = "mock"
    api_key: str = ""
    model: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    endpoint_url: str | None = None
    mock_script: list | None = None


class RunBody(BaseModel):
    theme_count: int
    role_playing: bool = False
    extra_instructions: str = ""
    dataset_description: str | None = None
    context_limit: int | None = None
    prompt_reserve: int | None = None
    completion_reserve: int | None = None
    parallelism: int = 1
    mock_script: list | None = None


class PreviewBody(BaseModel):
    theme_count: int
    role_playing: bool = False
    extra_instructions: str = ""
    dataset_description: str | None = None


_ERROR_STATUS = {
    "SessionNotFound": 404,
    "AuthFailed": 401,
    "EmptyDataset": 400,
    "FormatMismatch": 400,
    "MappingError": 400,
    "ConfigInvalid": 400,
    "BudgetTooSmall": 400,
    "MockScriptError": 400,
    "RunConflict": 409,
    "NoDataset": 409,
    "RunNotComplete": 409,
}


def _error_response(code: str, message: str, detail: Any = None) -> JSONResponse:
    return JSONResponse(
        status_code=_ERROR_STATUS.get(code, 500),
        content={"code": code, "message": message, "detail": detail},
    )


def create_app(registry: SessionRegistry | None = None, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="quali session service", version=__version__)
    app.state.registry = registry or SessionRegistry()
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(QualiError)
    async def quali_error_handler(request: Request, exc: QualiError):
        return _error_response(exc.code, str(exc))

    def reg() -> SessionRegistry:
        return app.state.registry

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        if body.backend == "mock":
            backend = MockBackend(body.mock_script or [], fallback_auto=True)
        elif body.backend == "real":
            if not body.api_key:
                raise AuthFailedError("api_key is required for the real backend")
            kwargs = {"endpoint": body.endpoint_url} if body.endpoint_url else {}
            backend = HttpBackend(body.api_key, **kwargs)
            backend.verify_key()
        else:
            return _error_response("ConfigInvalid", f"unknown backend {body.backend!r}")
        session = Session(
            session_id=secrets.token_hex(16),
            backend_name=body.backend,
            backend=backend,
            api_key=body.api_key,
            model_id=body.model,
            temperature=body.temperature,
        )
        reg().create(session)
        return {"session_id": session.session_id, "backend": body.backend}

    @app.post("/sessions/{session_id}/dataset")
    async def upload_dataset(
        session_id: str, file: UploadFile = File(...), mapping: str = Form("{}")
    ):
        session = reg().get(session_id)
        if session.status == "running":
            return _error_response("RunConflict", "a run is in progress")
        options = json.loads(mapping)
        data = await file.read()
        fmt = options.get("format") or guess_format(file.filename or "upload.txt").value
        delimiter = options.get("delimiter")
        if delimiter is None and (file.filename or "").lower().endswith(".tsv"):
            delimiter = "\t"
        dataset = parse_dataset(
            data,
            format=fmt,
            mapping=ColumnMapping(
                text_column=options.get("text_column"),
                speaker_column=options.get("speaker_column"),
                id_column=options.get("id_column"),
            ),
            data_type=options.get("data_type", "interview"),
            description=options.get("description", ""),
            source_path=file.filename or "<upload>",
            delimiter=delimiter,
        )
        if options.get("role_map"):
            dataset = assign_roles(dataset, options["role_map"])
        session.dataset = dataset
        session.status = "idle"
        session.result = None
        return {
            "records": len(dataset.records),
            "speakers": dataset.speaker_labels,
            "data_type": dataset.data_type.value,
        }

    @app.post("/sessions/{session_id}/preview")
    def preview_prompts(session_id: str, body: PreviewBody):
        session = reg().get(session_id)
        if session.dataset is None:
            return _error_response("NoDataset", "upload a dataset first")
        config = PromptConfig(
            data_type=session.dataset.data_type,
            role_playing=body.role_playing,
            theme_count=body.theme_count,
            extra_instructions=body.extra_instructions,
            dataset_description=(
                body.dataset_description
                if body.dataset_description is not None
                else session.dataset.description
            ),
        )
        return {"prompt": preview_prompt(config)}

    @app.post("/sessions/{session_id}/run")
    def start_run(session_id: str, body: RunBody):
        session = reg().get(session_id)
        if session.dataset is None:
            return _error_response("NoDataset", "upload a dataset first")
        if session.status not in _RESTARTABLE:
            return _error_response("RunConflict", "a run is already in progress")

        config = PromptConfig(
            data_type=session.dataset.data_type,
            role_playing=body.role_playing,
            theme_count=body.theme_count,
            extra_instructions=body.extra_instructions,
            dataset_description=(
                body.dataset_description
                if body.dataset_description is not None
                else session.dataset.description
            ),
        )
        budget = TokenBudget(
            context_limit=body.context_limit or 4096,
            prompt_reserve=body.prompt_reserve or 600,
            completion_reserve=body.completion_reserve or 1200,
        )
        if body.mock_script is not None:
            if session.backend_name != "mock":
                return _error_response("ConfigInvalid", "mock_script needs the mock backend")
            session.backend = MockBackend(validate_script(body.mock_script), fallback_auto=True)

        session.config = config
        session.status = "running"
        session.batches_total = 0
        session.batches_done = 0
        session.recovery = []
        session.result = None
        session.error = None
        session.cancel = threading.Event()
        session.thread = threading.Thread(
            target=_run_worker,
            args=(session, config, budget, body.parallelism),
            daemon=True,
        )
        session.thread.start()
        return {"status": "running"}

    @app.get("/sessions/{session_id}/status")
    def get_status(session_id: str):
        session = reg().get(session_id)
        payload = {
            "status": session.status,
            "batches_total": session.batches_total,
            "batches_done": session.batches_done,
            "recovery": list(session.recovery),
            "error": session.error,
        }
        if session.result is not None:
            payload["warning"] = session.result.warning
            payload["cost"] = _cost_json(session.result)
        return payload

    @app.get("/sessions/{session_id}/result")
    def get_result(session_id: str):
        session = reg().get(session_id)
        if session.status != "complete" or session.result is None:
            return _error_response("RunNotComplete", f"status is {session.status}")
        return _result_json(session)

    @app.get("/sessions/{session_id}/result.csv")
    def get_result_csv(session_id: str):
        session = reg().get(session_id)
        if session.status != "complete" or session.result is None:
            return _error_response("RunNotComplete", f"status is {session.status}")
        return Response(
            content=render_csv(session.result.merged).encode("utf-8"),
            media_type="text/csv; charset=utf-8",
            headers={"Content-Disposition": 'attachment; filename="themes.csv"'},
        )

    @app.get("/sessions/{session_id}/transcript.txt")
    def get_transcript(session_id: str):
        session = reg().get(session_id)
        if session.result is None:
            return _error_response("RunNotComplete", "no run has produced a transcript yet")
        record = session.result.session_record(
            session.dataset, session.model_id, session.temperature
        )
        return Response(
            content=render_transcript(record).encode("utf-8"),
            media_type="text/plain; charset=utf-8",
        )

    @app.delete("/sessions/{session_id}")
    def erase_session(session_id: str):
        session = reg().get(session_id)
        session.cancel.set()
        thread = session.thread
        if thread is not None and thread.is_alive():
            thread.join(timeout=15)
        reg().remove(session_id)
        return {"erased": True}

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def _run_worker(session: Session, config: PromptConfig, budget: TokenBudget, parallelism: int):
    def on_event(event: str, **data: Any) -> None:
        if event == "planned":
            session.batches_total = data["batches"]
        elif event == "batch_done":
            session.batches_done += 1
            if session.status == "needs_attention":
                session.status = "running"
        elif event == "recovery":
            session.status = "needs_attention"
            session.recovery.append(
                f"batch {data['batch']}: {data['kind']} -> {data['action']}"
            )
        elif event == "batch_started" and session.status == "needs_attention":
            session.status = "running"

    def sleep(delay: float) -> None:
        if session.cancel.wait(timeout=delay):
            raise RunCancelledError("cancelled while waiting")

    try:
        result = run_pipeline(
            session.dataset,
            config,
            session.backend,
            budget=budget,
            model_id=session.model_id,
            temperature=session.temperature,
            parallelism=parallelism,
            sleep=sleep,
            cancel=session.cancel.is_set,
            on_event=on_event,
        )
    except RunCancelledError:
        session.status = "aborted"
        session.error = {"code": "RunCancelled", "message": "run cancelled"}
        return
    except QualiError as exc:
        session.status = "aborted"
        session.error = {"code": exc.code, "message": str(exc)}
        return
    except Exception as exc:  # defensive: surface anything unexpected
        session.status = "aborted"
        session.error = {"code": "InternalError", "message": str(exc)}
        return
    session.result = result
    if result.status == "complete":
        session.status = "complete"
        session.error = None
    else:
        session.status = "aborted"
        session.error = {
            "code": result.abort.kind.value if result.abort else "aborted",
            "message": result.abort.raw_message if result.abort else "",
            "detail": {"stage": result.abort_stage},
        }


def _cost_json(result: PipelineResult) -> dict:
    return {
        "input_tokens": result.cost.input_tokens,
        "output_tokens": result.cost.output_tokens,
        "rate_in": result.cost.rate_in,
        "rate_out": result.cost.rate_out,
        "total": result.cost.total,
    }


def _result_json(session: Session) -> dict:
    result = session.result
    merged = result.merged
    matched_ids = {
        q.matched_record_id
        for e in merged.entries
        for q in e.quotes
        if q.matched_record_id is not None
    }
    records = {
        r.record_id: {"speaker": r.speaker_label, "text": r.text}
        for r in session.dataset.records
        if r.record_id in matched_ids
    }
    return {
        "entries": [
            {
                "theme": e.theme,
                "description": e.description,
                "participant_count": e.participant_count,
                "claimed_count": e.claimed_count,
                "quotes": [
                    {
                        "text": q.text,
                        "matched_record_id": q.matched_record_id,
                        "verified": q.matched_record_id is not None,
                    }
                    for q in e.quotes
                ],
            }
            for e in merged.entries
        ],
        "provenance": {
            "verified": result.provenance.verified,
            "total": result.provenance.total,
            "rate": result.provenance.verification_rate,
            "unmatched": [
                {"theme": theme, "quote": quote} for theme, quote in result.provenance.unmatched
            ],
        },
        "cost": _cost_json(result),
        "warning": result.warning,
        "records": records,
        "recovery": list(session.recovery),
    }


def main(host: str = "127.0.0.1", port: int = DEFAULT_PORT, ui_dir: str | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(ui_dir=ui_dir), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
