"""End-of-module tests: sequential multiple choice with full revision history.

Every selection click, including deselects and re-picks, lands in the event
log individually, so the attempt's final answer sheet is a pure fold over
its DiagnosisAnswer events. Diagnoses are retakeable; each retake is a new
attempt and earlier attempts are never touched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import engine
from . import events as ev
from .content import ContentPack, Diagnosis, DiagnosisQuestion, get_diagnosis, module_for_diagnosis
from .engine import SessionRepo, progress_view
from .errors import AttemptFinished, DiagnosisLocked, NotFinished, NotFound, UnknownQuestion
from .events import EventRecord, EventStore
from .storage import Database


@dataclass
class DiagnosisAttemptState:
    attempt_id: str
    user_id: str
    diagnosis_id: str
    cursor: int = 0
    selections: dict[str, set[str]] = field(default_factory=dict)
    finished: bool = False

    def to_dict(self) -> dict:
        return {
            "attempt_id": self.attempt_id,
            "user_id": self.user_id,
            "diagnosis_id": self.diagnosis_id,
            "cursor": self.cursor,
            "selections": {q: sorted(opts) for q, opts in self.selections.items()},
            "finished": self.finished,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DiagnosisAttemptState":
        return cls(
            attempt_id=doc["attempt_id"],
            user_id=doc["user_id"],
            diagnosis_id=doc["diagnosis_id"],
            cursor=doc["cursor"],
            selections={q: set(opts) for q, opts in doc["selections"].items()},
            finished=doc["finished"],
        )


class AttemptRepo:
    def __init__(self, db: Database):
        self.db = db

    def latest(self, user_id: str, diagnosis_id: str) -> Optional[DiagnosisAttemptState]:
        row = self.db.query_one(
            "SELECT state FROM attempts WHERE user_id = ? AND diagnosis_id = ? ORDER BY ordinal DESC LIMIT 1",
            (user_id, diagnosis_id),
        )
        return DiagnosisAttemptState.from_dict(json.loads(row[0])) if row else None

    def count(self, user_id: str, diagnosis_id: str) -> int:
        row = self.db.query_one(
            "SELECT COUNT(*) FROM attempts WHERE user_id = ? AND diagnosis_id = ?",
            (user_id, diagnosis_id),
        )
        return row[0]

    def save(self, state: DiagnosisAttemptState, ordinal: int) -> None:
        with self.db.transaction() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO attempts (attempt_id, user_id, diagnosis_id, ordinal, state)"
                " VALUES (?, ?, ?, ?, ?)",
                (state.attempt_id, state.user_id, state.diagnosis_id, ordinal, json.dumps(state.to_dict())),
            )

    def ordinal_of(self, attempt_id: str) -> int:
        row = self.db.query_one("SELECT ordinal FROM attempts WHERE attempt_id = ?", (attempt_id,))
        return row[0] if row else 0


def open_diagnosis(
    user_id: str,
    diagnosis_id: str,
    pack: ContentPack,
    sessions: SessionRepo,
    attempts: AttemptRepo,
    store: EventStore,
) -> DiagnosisAttemptState:
    """Return the open attempt (resuming mid-test) or start a fresh one.

    Locked until every learning activity of the owning module is Completed.
    A finished previous attempt does not block a retake; retakes get a new
    attempt id and prior attempts stay on record.
    """
    diagnosis = get_diagnosis(pack, diagnosis_id)  # NotFound propagates
    module = module_for_diagnosis(pack, diagnosis_id)
    view = progress_view(user_id, pack, sessions)
    if not view.diagnosis_unlocked.get(module.id, False):
        raise DiagnosisLocked(f"complete all activities of module {module.id} to unlock {diagnosis_id}")

    existing = attempts.latest(user_id, diagnosis_id)
    if existing is not None and not existing.finished:
        return existing

    ordinal = attempts.count(user_id, diagnosis_id) + 1
    state = DiagnosisAttemptState(
        attempt_id=f"d-{engine.session_id_for(user_id, diagnosis_id)[1:]}-{ordinal}",
        user_id=user_id,
        diagnosis_id=diagnosis_id,
    )
    with store.db.transaction():
        attempts.save(state, ordinal)
        store.append(
            user_id,
            ev.STATE_TRANSITION,
            {"transition": "diagnosis_opened", "attempt": state.to_dict()},
        )
    return state


def _question(diagnosis: Diagnosis, question_id: str) -> tuple[int, DiagnosisQuestion]:
    for index, question in enumerate(diagnosis.questions):
        if question.id == question_id:
            return index, question
    raise UnknownQuestion(f"diagnosis {diagnosis.id} has no question {question_id!r}")


def toggle_selection(current: set[str], option_id: str, selected: bool, multi_select: bool) -> set[str]:
    """Selection semantics shared by the live path and event replay."""
    updated = set(current)
    if selected:
        if multi_select:
            updated.add(option_id)
        else:
            updated = {option_id}
    else:
        updated.discard(option_id)
    return updated


def record_selection(
    state: DiagnosisAttemptState,
    question_id: str,
    option_id: str,
    selected: bool,
    diagnosis: Diagnosis,
    attempts: AttemptRepo,
    store: EventStore,
) -> DiagnosisAttemptState:
    """Apply one click and append its DiagnosisAnswer event.

    Every call is recorded, including no-op deselects, so the full revision
    history stays auditable.
    """
    if state.finished:
        raise AttemptFinished(f"attempt {state.attempt_id} is finished")
    index, question = _question(diagnosis, question_id)
    if option_id not in question.option_ids():
        raise UnknownQuestion(f"question {question_id} has no option {option_id!r}")

    state.selections[question_id] = toggle_selection(
        state.selections.get(question_id, set()), option_id, selected, question.multi_select
    )
    state.cursor = index
    with store.db.transaction():
        attempts.save(state, attempts.ordinal_of(state.attempt_id))
        store.append(
            state.user_id,
            ev.DIAGNOSIS_ANSWER,
            {
                "attempt_id": state.attempt_id,
                "diagnosis_id": state.diagnosis_id,
                "question_id": question_id,
                "option_id": option_id,
                "selected": selected,
            },
        )
    return state


def finish_attempt(
    state: DiagnosisAttemptState, attempts: AttemptRepo, store: EventStore
) -> DiagnosisAttemptState:
    """Close the attempt; unanswered questions simply score as incorrect."""
    if state.finished:
        raise AttemptFinished(f"attempt {state.attempt_id} is already finished")
    state.finished = True
    with store.db.transaction():
        attempts.save(state, attempts.ordinal_of(state.attempt_id))
        store.append(
            state.user_id,
            ev.STATE_TRANSITION,
            {"transition": "diagnosis_finished", "attempt": state.to_dict()},
        )
    return state


@dataclass
class DiagnosisScore:
    per_question: dict[str, bool]
    total_correct: int


def score_diagnosis(state: DiagnosisAttemptState, diagnosis: Diagnosis) -> DiagnosisScore:
    """Exact-set scoring: a question is correct iff the selection equals the
    correct option set exactly (no partial credit)."""
    if not state.finished:
        raise NotFinished(f"attempt {state.attempt_id} is not finished")
    per_question = {}
    for question in diagnosis.questions:
        chosen = state.selections.get(question.id, set())
        per_question[question.id] = chosen == question.correct_option_ids
    return DiagnosisScore(per_question=per_question, total_correct=sum(per_question.values()))


def replay_selections(
    records: Iterable[EventRecord], diagnosis: Diagnosis, attempt_id: str
) -> dict[str, set[str]]:
    """Fold an attempt's DiagnosisAnswer events to its final answer sheet."""
    multi = {q.id: q.multi_select for q in diagnosis.questions}
    selections: dict[str, set[str]] = {}
    for record in records:
        if record.kind != ev.DIAGNOSIS_ANSWER:
            continue
        payload = record.payload
        if payload.get("attempt_id") != attempt_id:
            continue
        qid = payload["question_id"]
        selections[qid] = toggle_selection(
            selections.get(qid, set()), payload["option_id"], payload["selected"], multi.get(qid, False)
        )
    return selections
