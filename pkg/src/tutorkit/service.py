"""HTTP boundary: auth, progress, learning turns, tools, diagnosis, feedback,
and admin export, all under /api/v1.

Turns are serialized per session: a second message while one is in flight
gets 409 immediately. Everything else is freely concurrent.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import diagnosis as diag
from . import engine
from . import events as ev
from .auth import ROLE_ADMIN, AuthService
from .content import ContentPack, get_activity, get_diagnosis, load_content_pack
from .engine import SessionRepo, completion_summary, progress_view, start_or_resume
from .errors import (
    ActivityLocked,
    ActivityNotFound,
    AttemptFinished,
    BadCredentials,
    DiagnosisLocked,
    GatewayError,
    NotFound,
    SchemaError,
    SessionNotFound,
    TutorkitError,
    UnknownQuestion,
    UserExists,
)
from .events import EventStore, ExportFilter
from .feedback import VOTE_DOWN, VOTE_UP, feedback_stats, record_feedback
from .gateway import LlmGateway
from .pipeline import (
    Pipeline,
    PipelineConfig,
    QUESTION,
    TurnDeps,
    UserMessage,
    run_turn,
    serialize_tool_result,
    Intent,
)
from .prompting import PromptLibrary
from .storage import Database

_STATUS_FOR = (
    (BadCredentials, 401),
    (UserExists, 409),
    (AttemptFinished, 409),
    (ActivityLocked, 423),
    (DiagnosisLocked, 423),
    (ActivityNotFound, 404),
    (SessionNotFound, 404),
    (UnknownQuestion, 404),
    (NotFound, 404),
    (SchemaError, 422),
    (GatewayError, 502),
)


class RegisterBody(BaseModel):
    username: str
    password: str


class LoginBody(BaseModel):
    username: str
    password: str


class MessageBody(BaseModel):
    text: str
    client_timestamp: Optional[int] = None


class ToolEventBody(BaseModel):
    tool_id: str
    data: dict


class FeedbackBody(BaseModel):
    target_event_id: int
    vote: str
    note: Optional[str] = None


class SelectionBody(BaseModel):
    question_id: str
    option_id: str
    selected: bool


class NotebookBody(BaseModel):
    text: str


class TurnLocks:
    """Non-blocking per-session mutual exclusion for run_turn."""

    def __init__(self):
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def acquire(self, session_id: str) -> bool:
        with self._guard:
            lock = self._locks.setdefault(session_id, threading.Lock())
        return lock.acquire(blocking=False)

    def release(self, session_id: str) -> None:
        with self._guard:
            lock = self._locks.get(session_id)
        if lock is not None and lock.locked():
            lock.release()


def create_app(
    pack_dir: str | Path,
    db: Optional[Database] = None,
    gateway: Optional[LlmGateway] = None,
    config: Optional[PipelineConfig] = None,
    prompts: Optional[PromptLibrary] = None,
    admin_token: Optional[str] = None,
    pack: Optional[ContentPack] = None,
) -> FastAPI:
    pack = pack or load_content_pack(pack_dir)
    db = db or Database(":memory:")
    config = config or PipelineConfig()
    prompts = prompts or PromptLibrary.load()
    store = EventStore(db)
    sessions = SessionRepo(db)
    attempts = diag.AttemptRepo(db)
    auth = AuthService(db, store)
    locks = TurnLocks()

    app = FastAPI(title="tutorkit", version="0.1.0")
    app.state.db = db
    app.state.store = store
    app.state.pack = pack

    for exc_type, status in _STATUS_FOR:
        def _handler(request: Request, exc: TutorkitError, status=status):
            return JSONResponse(status_code=status, content={"detail": str(exc)})

        app.add_exception_handler(exc_type, _handler)

    assets = Path(pack_dir) / "assets"
    if assets.is_dir():
        app.mount("/assets", StaticFiles(directory=str(assets)), name="assets")

    def current_user(authorization: str = Header(default="")) -> str:
        if authorization.startswith("Bearer "):
            token = authorization[len("Bearer "):]
            if admin_token and token == admin_token:
                return "admin"
            username = auth.resolve(token)
            if username:
                return username
        raise BadCredentials("missing or invalid bearer token")

    def require_admin(user: str = Depends(current_user)) -> str:
        if user != "admin" and auth.role_of(user) != ROLE_ADMIN:
            return ""  # signalled below; FastAPI deps cannot return status directly
        return user

    def turn_deps() -> TurnDeps:
        return TurnDeps(pack=pack, gateway=gateway, store=store, sessions=sessions, config=config, prompts=prompts)

    # --- auth ---

    @app.post("/api/v1/auth/register", status_code=201)
    def register(body: RegisterBody):
        auth.register(body.username, body.password)
        return {"username": body.username}

    @app.post("/api/v1/auth/login")
    def login(body: LoginBody):
        token = auth.login(body.username, body.password)
        return {"token": token.token, "expires_at": ev.format_ts(token.expires_ts)}

    # --- progress ---

    @app.get("/api/v1/progress")
    def get_progress(user: str = Depends(current_user)):
        return progress_view(user, pack, sessions).to_dict()

    @app.get("/api/v1/pack/outline")
    def pack_outline(user: str = Depends(current_user)):
        """Curriculum hierarchy for the progress page; titles only, no
        rubrics, expectations, or answer keys."""
        return {
            "schema_version": pack.schema_version,
            "modules": [
                {
                    "id": m.id,
                    "domain": m.domain,
                    "title": m.title,
                    "activities": [{"id": a.id, "title": a.title} for a in m.activities],
                    "diagnosis_id": m.diagnosis.id,
                }
                for m in pack.modules
            ],
        }

    # --- learning ---

    def _state_payload(state: engine.SessionState) -> dict:
        doc = {
            "session_id": state.session_id,
            "activity_id": state.activity_id,
            "stage_index": state.stage_index,
            "expectation_status": dict(state.expectation_status),
            "lifecycle": state.lifecycle,
        }
        if state.lifecycle == engine.COMPLETED:
            doc["summary"] = completion_summary(state, get_activity(pack, state.activity_id))
        return doc

    @app.post("/api/v1/activity/{activity_id}/start")
    def start_activity(activity_id: str, user: str = Depends(current_user)):
        state = start_or_resume(user, activity_id, pack, sessions, store)
        activity = get_activity(pack, activity_id)
        return {
            "state": _state_payload(state),
            "question_text": activity.question_text,
            "image_refs": activity.image_refs,
            "title": activity.title,
        }

    def _turn_response(result) -> dict:
        return {
            "reply": result.reply.text,
            "tool_directives": result.reply.tool_directives,
            "image_refs": result.reply.image_refs,
            "decision": {"action": result.decision.action, "message": result.decision.message},
            "event_ids": result.event_ids,
            "state": _state_payload(result.state),
        }

    def _review_turn(state: engine.SessionState, msg: UserMessage) -> dict:
        """Completed sessions accept conversation without regressing state."""
        activity = get_activity(pack, state.activity_id)
        stage = activity.stages[state.stage_index]
        ctx = store.recent_dialogue(state.session_id, config.context_window)
        pipeline = Pipeline(gateway, prompts, config)
        intent = Intent(kind=QUESTION, confidence_note="review mode")
        try:
            reply = pipeline.generate_response(intent, None, state, activity, stage, ctx, msg)
        except GatewayError:
            reply = None
        text = reply.text if reply else completion_summary(state, activity)
        event_ids = []
        with db.transaction():
            event_ids.append(
                store.append(
                    user_id_of(state), ev.USER_MESSAGE,
                    {"text": msg.text, "client_timestamp": msg.client_timestamp,
                     "attached_tool_result": msg.attached_tool_result, "intent": "Review"},
                    session_id=state.session_id,
                )
            )
            event_ids.append(
                store.append(
                    user_id_of(state), ev.SYSTEM_MESSAGE,
                    {"text": text, "tool_directives": [], "image_refs": [], "review": True},
                    session_id=state.session_id, component="Responder",
                )
            )
        return {
            "reply": text,
            "tool_directives": [],
            "image_refs": [],
            "decision": {"action": engine.ACKNOWLEDGE_AND_STAY, "message": ""},
            "event_ids": event_ids,
            "state": _state_payload(state),
        }

    def user_id_of(state: engine.SessionState) -> str:
        return state.user_id

    def _run_locked_turn(activity_id: str, user: str, msg: UserMessage):
        state = start_or_resume(user, activity_id, pack, sessions, store)
        msg.session_id = state.session_id
        if not locks.acquire(state.session_id):
            return JSONResponse(status_code=409, content={"detail": "a turn is already in flight for this session"})
        try:
            if state.lifecycle == engine.COMPLETED:
                return _review_turn(state, msg)
            result = run_turn(state.session_id, msg, turn_deps())
            return _turn_response(result)
        finally:
            locks.release(state.session_id)

    @app.post("/api/v1/activity/{activity_id}/message")
    def post_message(activity_id: str, body: MessageBody, user: str = Depends(current_user)):
        msg = UserMessage(session_id="", text=body.text, client_timestamp=body.client_timestamp)
        msg.validate()
        return _run_locked_turn(activity_id, user, msg)

    @app.post("/api/v1/activity/{activity_id}/tool-event")
    def post_tool_event(activity_id: str, body: ToolEventBody, user: str = Depends(current_user)):
        state = start_or_resume(user, activity_id, pack, sessions, store)
        activity = get_activity(pack, activity_id)
        stage = activity.stages[state.stage_index]
        allowed = {b.tool_id for b in stage.tool_bindings} | {"notebook"}
        if body.tool_id not in allowed:
            raise SchemaError(f"tool {body.tool_id!r} is not available in this stage")
        if body.tool_id == "notebook":
            # Notebook is reflective, not an answer medium: record and ack,
            # no judging round.
            event_id = store.append(
                user, ev.TOOL_EVENT,
                {"tool_id": "notebook", "action": "save", "data": body.data},
                session_id=state.session_id, component="Tools",
            )
            return {
                "reply": "Note saved.",
                "tool_directives": [],
                "image_refs": [],
                "decision": {"action": engine.ACKNOWLEDGE_AND_STAY, "message": ""},
                "event_ids": [event_id],
                "state": _state_payload(state),
            }
        msg = UserMessage(
            session_id=state.session_id,
            text=serialize_tool_result(body.tool_id, body.data),
            attached_tool_result={"tool_id": body.tool_id, "data": body.data},
        )
        return _run_locked_turn(activity_id, user, msg)

    @app.get("/api/v1/activity/{activity_id}/state")
    def get_state(activity_id: str, user: str = Depends(current_user)):
        get_activity(pack, activity_id)  # 404 for unknown ids
        state = sessions.for_user_activity(user, activity_id)
        if state is None:
            raise SessionNotFound(f"activity {activity_id!r} not started")
        return _state_payload(state)

    @app.get("/api/v1/activity/{activity_id}/dialogue")
    def get_dialogue(activity_id: str, k: int = Query(default=50, ge=1), user: str = Depends(current_user)):
        state = sessions.for_user_activity(user, activity_id)
        if state is None:
            raise SessionNotFound(f"activity {activity_id!r} not started")
        entries = []
        for record in store.dialogue_events(state.session_id, k):
            entry = {
                "event_id": record.event_id,
                "speaker": "user" if record.kind == ev.USER_MESSAGE else "system",
                "component": record.component,
                "text": record.payload.get("text", ""),
            }
            if record.kind == ev.SYSTEM_MESSAGE:
                entry["tool_directives"] = record.payload.get("tool_directives", [])
                entry["image_refs"] = record.payload.get("image_refs", [])
            entries.append(entry)
        return {"entries": entries}

    # --- notebook (account-wide, shared across activities) ---

    @app.get("/api/v1/notebook")
    def get_notebook(user: str = Depends(current_user)):
        flt = ExportFilter(user_id=user, kinds={ev.TOOL_EVENT})
        text = ""
        for record in store.export_stream(flt):
            if record.payload.get("tool_id") == "notebook" and record.payload.get("action") == "save":
                text = record.payload.get("data", {}).get("text", "")
        return {"text": text}

    @app.put("/api/v1/notebook", status_code=204)
    def put_notebook(body: NotebookBody, user: str = Depends(current_user)):
        store.append(
            user, ev.TOOL_EVENT,
            {"tool_id": "notebook", "action": "save", "data": {"text": body.text}},
            component="Tools",
        )
        return Response(status_code=204)

    # --- feedback ---

    @app.post("/api/v1/feedback", status_code=204)
    def post_feedback(body: FeedbackBody, user: str = Depends(current_user)):
        vote = {"up": VOTE_UP, "down": VOTE_DOWN}.get(body.vote.lower())
        if vote is None:
            raise SchemaError(f"vote must be 'up' or 'down', got {body.vote!r}")
        record_feedback(store, user, body.target_event_id, vote, body.note)
        return Response(status_code=204)

    # --- diagnosis ---

    def _attempt_payload(state: diag.DiagnosisAttemptState) -> dict:
        return state.to_dict()

    def _questions_payload(diagnosis) -> list[dict]:
        # correct_option_ids never leave the server
        return [
            {
                "id": q.id,
                "prompt": q.prompt,
                "options": [{"option_id": o.option_id, "text": o.text} for o in q.options],
                "multi_select": q.multi_select,
            }
            for q in diagnosis.questions
        ]

    @app.post("/api/v1/diagnosis/{diagnosis_id}/open")
    def open_diag(diagnosis_id: str, user: str = Depends(current_user)):
        state = diag.open_diagnosis(user, diagnosis_id, pack, sessions, attempts, store)
        return {"attempt": _attempt_payload(state), "questions": _questions_payload(get_diagnosis(pack, diagnosis_id))}

    @app.post("/api/v1/diagnosis/{diagnosis_id}/select")
    def select_option(diagnosis_id: str, body: SelectionBody, user: str = Depends(current_user)):
        diagnosis = get_diagnosis(pack, diagnosis_id)
        state = attempts.latest(user, diagnosis_id)
        if state is None:
            raise NotFound(f"no open attempt for {diagnosis_id!r}")
        state = diag.record_selection(state, body.question_id, body.option_id, body.selected, diagnosis, attempts, store)
        return {"attempt": _attempt_payload(state)}

    @app.post("/api/v1/diagnosis/{diagnosis_id}/finish")
    def finish_diag(diagnosis_id: str, user: str = Depends(current_user)):
        diagnosis = get_diagnosis(pack, diagnosis_id)
        state = attempts.latest(user, diagnosis_id)
        if state is None:
            raise NotFound(f"no open attempt for {diagnosis_id!r}")
        state = diag.finish_attempt(state, attempts, store)
        score = diag.score_diagnosis(state, diagnosis)
        return {
            "attempt": _attempt_payload(state),
            "score": {"per_question": score.per_question, "total_correct": score.total_correct},
        }

    @app.get("/api/v1/diagnosis/{diagnosis_id}/attempt")
    def get_attempt(diagnosis_id: str, user: str = Depends(current_user)):
        get_diagnosis(pack, diagnosis_id)
        state = attempts.latest(user, diagnosis_id)
        if state is None:
            raise NotFound(f"no attempt for {diagnosis_id!r}")
        return {"attempt": _attempt_payload(state)}

    # --- admin ---

    @app.get("/api/v1/admin/export")
    def admin_export(
        user: str = Depends(require_admin),
        kinds: Optional[str] = None,
        since: Optional[str] = None,
        until: Optional[str] = None,
        user_id: Optional[str] = None,
        pseudonymize: bool = False,
    ):
        if not user:
            return JSONResponse(status_code=403, content={"detail": "admin role required"})
        flt = ExportFilter(
            user_id=user_id,
            kinds=set(kinds.split(",")) if kinds else None,
            since_ts=ev.parse_ts(since) if since else None,
            until_ts=ev.parse_ts(until) if until else None,
        )
        body = "".join(line + "\n" for line in store.export_lines(flt, pseudonymize=pseudonymize))
        return PlainTextResponse(body, media_type="application/x-ndjson")

    @app.get("/api/v1/admin/feedback-stats")
    def admin_feedback_stats(user: str = Depends(require_admin)):
        if not user:
            return JSONResponse(status_code=403, content={"detail": "admin role required"})
        return feedback_stats(store).to_dict()

    return app
