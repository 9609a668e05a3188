"""Per-user learning state: the staged expectation ledger and its transitions.

SessionState is the single thread of progress a user has through one
activity. Transitions are pure functions driven by facilitator decisions;
persistence is a cache row plus a StateTransition event carrying the full
post-state snapshot, so the event log alone reproduces every state.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from hashlib import sha256
from typing import Callable, Iterable, Optional

from . import events as ev
from .content import Activity, ContentPack, get_activity
from .errors import ActivityLocked, ActivityNotFound, IllegalTransition, NotCompleted, NotFound
from .events import EventRecord, EventStore
from .storage import Database

# Expectation ledger statuses
UNMET = "Unmet"
MET = "Met"
SKIPPED = "Skipped"

# Session lifecycle
IN_PROGRESS = "InProgress"
COMPLETED = "Completed"

# Facilitator actions
SEND_HINT = "SendHint"
ACKNOWLEDGE_AND_STAY = "AcknowledgeAndStay"
ADVANCE_EXPECTATION = "AdvanceExpectation"
SKIP_STAGE = "SkipStage"
COMPLETE_ACTIVITY = "CompleteActivity"
ANSWER_SIDE_QUESTION = "AnswerSideQuestion"
REDIRECT_OFF_TOPIC = "RedirectOffTopic"

ACTIONS = (
    SEND_HINT,
    ACKNOWLEDGE_AND_STAY,
    ADVANCE_EXPECTATION,
    SKIP_STAGE,
    COMPLETE_ACTIVITY,
    ANSWER_SIDE_QUESTION,
    REDIRECT_OFF_TOPIC,
)

# Activity statuses on the progress page
NOT_ATTEMPTED = "NotAttempted"
ATTEMPTED = "Attempted"
ACTIVITY_COMPLETED = "Completed"


def now_ms() -> int:
    return time.time_ns() // 1_000_000


def session_id_for(user_id: str, activity_id: str) -> str:
    """Deterministic opaque id; one active session per (user, activity)."""
    return "s" + sha256(f"{user_id}|{activity_id}".encode("utf-8")).hexdigest()[:16]


@dataclass
class SessionState:
    session_id: str
    user_id: str
    activity_id: str
    stage_index: int
    expectation_status: dict[str, str]  # expectation id -> Unmet|Met|Skipped
    consecutive_misses: int
    lifecycle: str
    created_at: int
    updated_at: int

    def unmet_in_stage(self, activity: Activity) -> list[str]:
        stage = activity.stages[self.stage_index]
        return [e for e in stage.expectation_ids() if self.expectation_status[e] == UNMET]

    def met_ids(self) -> set[str]:
        return {e for e, s in self.expectation_status.items() if s == MET}

    def all_resolved(self) -> bool:
        return all(s in (MET, SKIPPED) for s in self.expectation_status.values())

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "user_id": self.user_id,
            "activity_id": self.activity_id,
            "stage_index": self.stage_index,
            "expectation_status": dict(self.expectation_status),
            "consecutive_misses": self.consecutive_misses,
            "lifecycle": self.lifecycle,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionState":
        return cls(
            session_id=doc["session_id"],
            user_id=doc["user_id"],
            activity_id=doc["activity_id"],
            stage_index=doc["stage_index"],
            expectation_status=dict(doc["expectation_status"]),
            consecutive_misses=doc["consecutive_misses"],
            lifecycle=doc["lifecycle"],
            created_at=doc["created_at"],
            updated_at=doc["updated_at"],
        )


def fresh_session(user_id: str, activity: Activity, ts: Optional[int] = None) -> SessionState:
    ts = now_ms() if ts is None else ts
    return SessionState(
        session_id=session_id_for(user_id, activity.id),
        user_id=user_id,
        activity_id=activity.id,
        stage_index=0,
        expectation_status={e: UNMET for e in activity.expectation_ids()},
        consecutive_misses=0,
        lifecycle=IN_PROGRESS,
        created_at=ts,
        updated_at=ts,
    )


def apply_decision(
    state: SessionState,
    covered: set[str],
    action: str,
    activity: Activity,
    ts: Optional[int] = None,
) -> SessionState:
    """Pure transition: returns the new state, or ``state`` itself when the
    decision leaves the ledger untouched.

    Statuses move only Unmet->Met and Unmet->Skipped; stage_index never
    decreases; lifecycle flips to Completed exactly when every expectation
    is resolved and the cursor sits on the last stage.
    """
    if state.lifecycle != IN_PROGRESS:
        raise IllegalTransition(f"cannot apply {action} to a {state.lifecycle} session")
    if action not in ACTIONS:
        raise IllegalTransition(f"unknown action {action!r}")

    if action in (ANSWER_SIDE_QUESTION, REDIRECT_OFF_TOPIC, ACKNOWLEDGE_AND_STAY):
        return state

    ts = now_ms() if ts is None else ts
    status = dict(state.expectation_status)
    stage_index = state.stage_index
    misses = state.consecutive_misses
    lifecycle = state.lifecycle

    def mark_met(ids: Iterable[str]) -> None:
        for eid in ids:
            if status.get(eid) == UNMET:
                status[eid] = MET

    def stage_resolved(idx: int) -> bool:
        stage = activity.stages[idx]
        return all(status[e] in (MET, SKIPPED) for e in stage.expectation_ids())

    if action == SEND_HINT:
        misses += 1

    elif action == ADVANCE_EXPECTATION:
        mark_met(covered)
        misses = 0
        while stage_index < len(activity.stages) - 1 and stage_resolved(stage_index):
            stage_index += 1
        if stage_index == len(activity.stages) - 1 and stage_resolved(stage_index):
            lifecycle = COMPLETED

    elif action == SKIP_STAGE:
        stage = activity.stages[stage_index]
        for eid in stage.expectation_ids():
            if status[eid] == UNMET:
                status[eid] = SKIPPED
        misses = 0
        if stage_index < len(activity.stages) - 1:
            stage_index += 1
        else:
            lifecycle = COMPLETED

    elif action == COMPLETE_ACTIVITY:
        mark_met(covered)
        misses = 0
        unresolved = [e for e, s in status.items() if s == UNMET]
        if unresolved:
            raise IllegalTransition(f"CompleteActivity with unresolved expectations: {unresolved}")
        stage_index = len(activity.stages) - 1
        lifecycle = COMPLETED

    if lifecycle == COMPLETED and any(s == UNMET for s in status.values()):
        raise IllegalTransition("completed session with an unmet, unskipped expectation")

    return replace(
        state,
        expectation_status=status,
        stage_index=stage_index,
        consecutive_misses=misses,
        lifecycle=lifecycle,
        updated_at=ts,
    )


# --- persistence ------------------------------------------------------------

class SessionRepo:
    """Cache of live SessionStates; the event log stays the source of truth."""

    def __init__(self, db: Database):
        self.db = db

    def get(self, session_id: str) -> Optional[SessionState]:
        row = self.db.query_one("SELECT state FROM sessions WHERE session_id = ?", (session_id,))
        if row is None:
            return None
        return SessionState.from_dict(json.loads(row[0]))

    def for_user_activity(self, user_id: str, activity_id: str) -> Optional[SessionState]:
        return self.get(session_id_for(user_id, activity_id))

    def for_user(self, user_id: str) -> list[SessionState]:
        rows = self.db.query("SELECT state FROM sessions WHERE user_id = ? ORDER BY session_id", (user_id,))
        return [SessionState.from_dict(json.loads(r[0])) for r in rows]

    def save(self, state: SessionState) -> None:
        with self.db.transaction() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO sessions (session_id, user_id, activity_id, state) VALUES (?, ?, ?, ?)",
                (state.session_id, state.user_id, state.activity_id, json.dumps(state.to_dict())),
            )


def start_or_resume(
    user_id: str,
    activity_id: str,
    pack: ContentPack,
    sessions: SessionRepo,
    store: EventStore,
) -> SessionState:
    """Create a fresh session at stage 0 or return the stored one unchanged."""
    try:
        activity = get_activity(pack, activity_id)
    except NotFound:
        # A diagnosis id through the learning door: locked -> ActivityLocked,
        # otherwise it is simply not a learning activity.
        for module in pack.modules:
            if module.diagnosis.id == activity_id:
                view = progress_view(user_id, pack, sessions)
                if not view.diagnosis_unlocked.get(module.id, False):
                    raise ActivityLocked(
                        f"diagnosis {activity_id!r} is locked until module {module.id} is completed"
                    ) from None
                raise ActivityNotFound(
                    f"{activity_id!r} is a diagnosis; open it through the diagnosis flow"
                ) from None
        raise ActivityNotFound(f"no activity with id {activity_id!r}") from None

    existing = sessions.for_user_activity(user_id, activity_id)
    if existing is not None:
        return existing

    state = fresh_session(user_id, activity)
    with store.db.transaction():
        sessions.save(state)
        store.append(
            user_id,
            ev.STATE_TRANSITION,
            {"transition": "session_started", "session": state.to_dict()},
            session_id=state.session_id,
        )
    return state


# --- progress view -----------------------------------------------------------

@dataclass
class ProgressView:
    activity_status: dict[str, str] = field(default_factory=dict)  # activity id -> status
    diagnosis_unlocked: dict[str, bool] = field(default_factory=dict)  # module id -> unlocked

    def to_dict(self) -> dict:
        return {
            "activities": [
                {"activity_id": a, "status": s} for a, s in self.activity_status.items()
            ],
            "modules": [
                {"module_id": m, "diagnosis_unlocked": u} for m, u in self.diagnosis_unlocked.items()
            ],
        }


def view_from_states(
    pack: ContentPack, state_for_activity: Callable[[str], Optional[SessionState]]
) -> ProgressView:
    """Pure computation of the progress page from a state lookup."""
    view = ProgressView()
    for module in pack.modules:
        completed = 0
        for activity in module.activities:
            state = state_for_activity(activity.id)
            if state is None:
                status = NOT_ATTEMPTED
            elif state.lifecycle == COMPLETED:
                status = ACTIVITY_COMPLETED
                completed += 1
            else:
                status = ATTEMPTED
            view.activity_status[activity.id] = status
        view.diagnosis_unlocked[module.id] = completed == len(module.activities)
    return view


def progress_view(user_id: str, pack: ContentPack, sessions: SessionRepo) -> ProgressView:
    return view_from_states(pack, lambda aid: sessions.for_user_activity(user_id, aid))


# --- completion summary -------------------------------------------------------

def completion_summary(state: SessionState, activity: Activity) -> str:
    """Render the authored summary plus the met / to-revisit expectation lists."""
    if state.lifecycle != COMPLETED:
        raise NotCompleted(f"session {state.session_id} is still in progress")
    met = [e.statement for e in activity.all_expectations() if state.expectation_status[e.id] == MET]
    skipped = [e.statement for e in activity.all_expectations() if state.expectation_status[e.id] == SKIPPED]
    parts = [activity.summary_template.strip()] if activity.summary_template.strip() else []
    if met:
        parts.append("You covered:\n" + "\n".join(f"- {s}" for s in met))
    if skipped:
        parts.append("To revisit:\n" + "\n".join(f"- {s}" for s in skipped))
    return "\n\n".join(parts)


# --- replay -------------------------------------------------------------------

def replay_sessions(records: Iterable[EventRecord]) -> dict[str, SessionState]:
    """Rebuild every session's final state from an event stream.

    StateTransition events carry full post-state snapshots, so the fold is
    simply "latest snapshot wins" in event_id order.
    """
    states: dict[str, SessionState] = {}
    for record in records:
        if record.kind != ev.STATE_TRANSITION:
            continue
        snapshot = record.payload.get("session")
        if snapshot:
            state = SessionState.from_dict(snapshot)
            states[state.session_id] = state
    return states


def replay_progress_view(records: Iterable[EventRecord], user_id: str, pack: ContentPack) -> ProgressView:
    states = replay_sessions(records)
    by_activity = {s.activity_id: s for s in states.values() if s.user_id == user_id}
    return view_from_states(pack, lambda aid: by_activity.get(aid))
