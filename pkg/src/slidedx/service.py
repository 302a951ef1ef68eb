"""HTTP session service: create sessions, advance them, submit exam
results, and stream turn events.

``advance`` runs engine steps until the session needs human input
(interactive mode awaiting exams), finishes, or aborts. The event stream
replays recorded turns and then follows the live session, so a console
can reconnect at any point and resync.
"""
from __future__ import annotations

import asyncio
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, StreamingResponse
from pydantic import BaseModel

from .errors import EngineError, NotFoundError
from .session import DiagnosticSession, Engine, SessionConfig

AWAITING_EXAMS = "awaiting_exams"
EVENT_POLL_SECONDS = 0.1


class CreateSessionBody(BaseModel):
    case_info: str
    slide_id: str
    mode: str = "interactive"       # interactive | oracle
    seed: int = 0
    max_rounds: int = 3
    auto_advance: bool = True


class ExamAnswersBody(BaseModel):
    answers: dict[str, str]


@dataclass
class Hosted:
    session: DiagnosticSession
    mode: str
    lock: threading.Lock = field(default_factory=threading.Lock)
    pending_answers: dict[str, str] = field(default_factory=dict)
    submit_token: str | None = None

    def status(self) -> str:
        if self.session.finished:
            return self.session.stage
        if (self.mode == "interactive" and self.session.pending_exams
                and not self.pending_answers):
            return AWAITING_EXAMS
        return self.session.stage


class SessionHost:
    """In-memory session table over one shared Engine."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self._sessions: dict[str, Hosted] = {}
        self._lock = threading.Lock()

    def create(self, body: CreateSessionBody) -> Hosted:
        session_id = uuid.uuid4().hex[:12]
        config = SessionConfig(seed=body.seed, max_rounds=body.max_rounds)
        session = self.engine.start_session(body.case_info, body.slide_id,
                                            config, session_id=session_id)
        hosted = Hosted(session, body.mode)
        with self._lock:
            self._sessions[session_id] = hosted
        return hosted

    def get(self, session_id: str) -> Hosted:
        hosted = self._sessions.get(session_id)
        if hosted is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        return hosted

    def advance(self, hosted: Hosted) -> str:
        """Run engine steps until input is needed or the session ends."""
        with hosted.lock:
            session = hosted.session
            guard = 2 * session.config.max_rounds + 4
            while not session.finished and guard:
                guard -= 1
                if (hosted.mode == "interactive" and session.pending_exams
                        and not hosted.pending_answers):
                    return AWAITING_EXAMS
                if session.has_pending:
                    answers = hosted.pending_answers or None
                    hosted.pending_answers = {}
                    self.engine.execute_evidence_round(session, answers)
                    continue
                self.engine.conclude_or_iterate(session)
            return hosted.status()

    def submit(self, hosted: Hosted, answers: Mapping[str, str], token: str | None) -> str:
        with hosted.lock:
            if hosted.session.finished or not hosted.session.pending_exams:
                raise ValueError("session is not awaiting exam results")
            if hosted.submit_token and token != hosted.submit_token:
                raise PermissionError("submit lock held by another console")
            if token and hosted.submit_token is None:
                hosted.submit_token = token  # first tokened submitter takes the lock
            hosted.pending_answers = dict(answers)
        return self.advance(hosted)


def create_app(engine: Engine, static_dir: str | Path | None = None,
               auth_token: str | None = None) -> FastAPI:
    app = FastAPI(title="slidedx session service")
    host = SessionHost(engine)
    app.state.host = host

    def check_auth(request: Request) -> None:
        if not auth_token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {auth_token}":
            raise HTTPException(401, "missing or invalid token")

    @app.post("/api/sessions")
    def create_session(body: CreateSessionBody, request: Request):
        check_auth(request)
        try:
            hosted = host.create(body)
        except EngineError as exc:
            raise HTTPException(400, str(exc))
        status = host.advance(hosted) if body.auto_advance else hosted.status()
        return {"session_id": hosted.session.session_id, "status": status}

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str, request: Request):
        check_auth(request)
        try:
            hosted = host.get(session_id)
        except NotFoundError as exc:
            raise HTTPException(404, str(exc))
        return {"status": hosted.status(), **hosted.session.to_state()}

    @app.post("/api/sessions/{session_id}/advance")
    def advance_session(session_id: str, request: Request):
        check_auth(request)
        try:
            hosted = host.get(session_id)
        except NotFoundError as exc:
            raise HTTPException(404, str(exc))
        return {"status": host.advance(hosted)}

    @app.post("/api/sessions/{session_id}/exams")
    def submit_exams(session_id: str, body: ExamAnswersBody, request: Request):
        check_auth(request)
        try:
            hosted = host.get(session_id)
        except NotFoundError as exc:
            raise HTTPException(404, str(exc))
        if not body.answers:
            raise HTTPException(422, "no answers submitted")
        try:
            status = host.submit(hosted, body.answers,
                                 request.headers.get("x-submit-token"))
        except ValueError as exc:
            raise HTTPException(409, str(exc))
        except PermissionError as exc:
            raise HTTPException(423, str(exc))
        return {"status": status}

    @app.get("/api/sessions/{session_id}/events")
    async def stream_events(session_id: str, request: Request):
        check_auth(request)
        try:
            hosted = host.get(session_id)
        except NotFoundError as exc:
            raise HTTPException(404, str(exc))

        async def generate():
            sent_turns = 0
            last_status = None
            while True:
                session = hosted.session
                while sent_turns < len(session.turns):
                    turn = session.turns[sent_turns]
                    yield _sse("turn", turn.to_dict())
                    sent_turns += 1
                status = hosted.status()
                if status != last_status:
                    last_status = status
                    yield _sse("status", {
                        "status": status,
                        "pending_exams": list(session.pending_exams),
                        "differential": list(session.differential),
                    })
                if session.finished:
                    yield _sse("final", {
                        "final_diagnosis": session.final_diagnosis,
                        "inconclusive": session.inconclusive,
                        "stage_history": list(session.stage_history),
                    })
                    return
                if await request.is_disconnected():
                    return
                await asyncio.sleep(EVENT_POLL_SECONDS)

        return StreamingResponse(generate(), media_type="text/event-stream")

    if static_dir is not None:
        static_dir = Path(static_dir)

        @app.get("/")
        def index():
            index_path = static_dir / "index.html"
            if not index_path.is_file():
                raise HTTPException(404, "console not built")
            return FileResponse(index_path)

        @app.get("/assets/{name}")
        def asset(name: str):
            path = (static_dir / "assets" / name).resolve()
            if static_dir.resolve() not in path.parents or not path.is_file():
                raise HTTPException(404, "no such asset")
            return FileResponse(path)

    return app


def _sse(event: str, data: Mapping) -> str:
    return f"event: {event}\ndata: {json.dumps(data, sort_keys=True)}\n\n"
