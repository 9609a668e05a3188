"""Append-only timestamped log of every user and system behavior.

Each record is an EventRecord with a store-assigned, strictly increasing
event_id and a server clock timestamp. Records are never mutated or
deleted; all session and progress state is replayable from this log.
The export format is newline-delimited JSON with deterministic key order,
byte-stable per schema version.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from hashlib import sha256
from typing import Iterable, Iterator, Optional

from .errors import SchemaError
from .storage import Database

# Event kinds
USER_MESSAGE = "UserMessage"
SYSTEM_MESSAGE = "SystemMessage"
TOOL_EVENT = "ToolEvent"
STATE_TRANSITION = "StateTransition"
FEEDBACK = "Feedback"
DIAGNOSIS_ANSWER = "DiagnosisAnswer"
TURN_FAILED = "TurnFailed"
AUTH_EVENT = "AuthEvent"

KINDS = (
    USER_MESSAGE,
    SYSTEM_MESSAGE,
    TOOL_EVENT,
    STATE_TRANSITION,
    FEEDBACK,
    DIAGNOSIS_ANSWER,
    TURN_FAILED,
    AUTH_EVENT,
)

# System component attribution, used for feedback statistics
COMPONENTS = ("Filter", "Judger", "Responder", "Facilitator", "Tools")

# Required payload fields per kind: name -> accepted types. Extra fields are
# always allowed so readers stay compatible across payload schema bumps.
_REQUIRED_FIELDS: dict[str, dict[str, tuple]] = {
    USER_MESSAGE: {"text": (str,)},
    SYSTEM_MESSAGE: {"text": (str,)},
    TOOL_EVENT: {"tool_id": (str,), "action": (str,)},
    STATE_TRANSITION: {"transition": (str,)},
    FEEDBACK: {"target_event_id": (int,), "vote": (str,), "target_component": (str,)},
    DIAGNOSIS_ANSWER: {
        "attempt_id": (str,),
        "diagnosis_id": (str,),
        "question_id": (str,),
        "option_id": (str,),
        "selected": (bool,),
    },
    TURN_FAILED: {"reason": (str,)},
    AUTH_EVENT: {"action": (str,)},
}

# Integer payload schema version per kind, bumped on breaking payload changes
PAYLOAD_SCHEMA_VERSIONS: dict[str, int] = {kind: 1 for kind in KINDS}


@dataclass
class EventRecord:
    event_id: int
    ts: int  # UTC milliseconds, server clock
    user_id: str
    kind: str
    payload: dict
    session_id: Optional[str] = None
    component: Optional[str] = None
    schema_version: int = 1


def validate_payload(kind: str, component: Optional[str], payload: dict) -> None:
    """Raise SchemaError unless the payload matches its kind's schema."""
    if kind not in KINDS:
        raise SchemaError(f"unknown event kind {kind!r}")
    if not isinstance(payload, dict):
        raise SchemaError(f"{kind}: payload must be an object")
    if component is not None and component not in COMPONENTS:
        raise SchemaError(f"{kind}: unknown component {component!r}")
    if kind == SYSTEM_MESSAGE and component is None:
        raise SchemaError("SystemMessage events must carry a component tag")
    for name, types in _REQUIRED_FIELDS[kind].items():
        if name not in payload:
            raise SchemaError(f"{kind}: payload missing required field {name!r}")
        value = payload[name]
        # bool is an int subclass; keep int fields strictly integral
        if types == (int,) and isinstance(value, bool):
            raise SchemaError(f"{kind}: field {name!r} must be an integer")
        if not isinstance(value, types):
            raise SchemaError(f"{kind}: field {name!r} has wrong type {type(value).__name__}")


def format_ts(ts_ms: int) -> str:
    """ISO-8601 UTC with millisecond precision, e.g. 2026-08-09T12:00:00.123Z."""
    dt = datetime.fromtimestamp(ts_ms // 1000, tz=timezone.utc)
    return f"{dt:%Y-%m-%dT%H:%M:%S}.{ts_ms % 1000:03d}Z"


def parse_ts(text: str) -> int:
    dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def render_envelope(record: EventRecord) -> str:
    """One export line; key order and separators are fixed for byte stability."""
    doc = {
        "event_id": record.event_id,
        "ts": format_ts(record.ts),
        "user_id": record.user_id,
        "session_id": record.session_id,
        "kind": record.kind,
        "component": record.component,
        "payload": record.payload,
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def parse_envelope(line: str) -> EventRecord:
    doc = json.loads(line)
    kind = doc["kind"]
    return EventRecord(
        event_id=doc["event_id"],
        ts=parse_ts(doc["ts"]),
        user_id=doc["user_id"],
        session_id=doc.get("session_id"),
        kind=kind,
        component=doc.get("component"),
        payload=doc["payload"],
        schema_version=PAYLOAD_SCHEMA_VERSIONS.get(kind, 1),
    )


def pseudonym(user_id: str) -> str:
    return "user-" + sha256(user_id.encode("utf-8")).hexdigest()[:12]


@dataclass
class ExportFilter:
    user_id: Optional[str] = None
    kinds: Optional[set[str]] = None
    since_ts: Optional[int] = None  # inclusive, ms
    until_ts: Optional[int] = None  # exclusive, ms
    session_id: Optional[str] = None


class EventStore:
    """Append-only event log over the shared Database."""

    def __init__(self, db: Database):
        self.db = db
        row = db.query_one("SELECT MAX(ts) FROM events")
        self._last_ts = row[0] if row and row[0] is not None else 0

    def _next_ts(self) -> int:
        # Server clock, clamped so ts never decreases even if the wall
        # clock steps backwards; keeps per-session ordering sound.
        now = time.time_ns() // 1_000_000
        self._last_ts = max(self._last_ts, now)
        return self._last_ts

    def append(
        self,
        user_id: str,
        kind: str,
        payload: dict,
        session_id: Optional[str] = None,
        component: Optional[str] = None,
    ) -> int:
        """Validate, timestamp, and durably append one event; returns its id."""
        validate_payload(kind, component, payload)
        with self.db.transaction() as conn:
            ts = self._next_ts()
            cur = conn.execute(
                "INSERT INTO events (ts, user_id, session_id, kind, component, payload, schema_version)"
                " VALUES (?, ?, ?, ?, ?, ?, ?)",
                (
                    ts,
                    user_id,
                    session_id,
                    kind,
                    component,
                    json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":")),
                    PAYLOAD_SCHEMA_VERSIONS[kind],
                ),
            )
            return cur.lastrowid

    def _row_to_record(self, row: tuple) -> EventRecord:
        return EventRecord(
            event_id=row[0],
            ts=row[1],
            user_id=row[2],
            session_id=row[3],
            kind=row[4],
            component=row[5],
            payload=json.loads(row[6]),
            schema_version=row[7],
        )

    _SELECT = "SELECT event_id, ts, user_id, session_id, kind, component, payload, schema_version FROM events"

    def get(self, event_id: int) -> Optional[EventRecord]:
        row = self.db.query_one(f"{self._SELECT} WHERE event_id = ?", (event_id,))
        return self._row_to_record(row) if row else None

    def count(self) -> int:
        return self.db.query_one("SELECT COUNT(*) FROM events")[0]

    def recent_dialogue(self, session_id: str, k: int) -> list[dict]:
        """Last k dialogue entries of a session, oldest first."""
        rows = self.db.query(
            f"{self._SELECT} WHERE session_id = ? AND kind IN (?, ?) ORDER BY event_id DESC LIMIT ?",
            (session_id, USER_MESSAGE, SYSTEM_MESSAGE, k),
        )
        out = []
        for row in reversed(rows):
            record = self._row_to_record(row)
            speaker = "user" if record.kind == USER_MESSAGE else "system"
            out.append({"speaker": speaker, "text": record.payload.get("text", "")})
        return out

    def dialogue_events(self, session_id: str, k: int) -> list[EventRecord]:
        """Same window as recent_dialogue but with full records (UI needs ids)."""
        rows = self.db.query(
            f"{self._SELECT} WHERE session_id = ? AND kind IN (?, ?) ORDER BY event_id DESC LIMIT ?",
            (session_id, USER_MESSAGE, SYSTEM_MESSAGE, k),
        )
        return [self._row_to_record(row) for row in reversed(rows)]

    def attempt_history(self, user_id: str, question_id: str) -> list[EventRecord]:
        rows = self.db.query(
            f"{self._SELECT} WHERE user_id = ? AND kind = ? ORDER BY event_id",
            (user_id, DIAGNOSIS_ANSWER),
        )
        records = [self._row_to_record(row) for row in rows]
        return [r for r in records if r.payload.get("question_id") == question_id]

    def export_stream(self, flt: Optional[ExportFilter] = None) -> Iterator[EventRecord]:
        """All matching records ordered by event_id."""
        flt = flt or ExportFilter()
        clauses, params = [], []
        if flt.user_id is not None:
            clauses.append("user_id = ?")
            params.append(flt.user_id)
        if flt.session_id is not None:
            clauses.append("session_id = ?")
            params.append(flt.session_id)
        if flt.since_ts is not None:
            clauses.append("ts >= ?")
            params.append(flt.since_ts)
        if flt.until_ts is not None:
            clauses.append("ts < ?")
            params.append(flt.until_ts)
        if flt.kinds is not None:
            placeholders = ",".join("?" for _ in flt.kinds)
            clauses.append(f"kind IN ({placeholders})")
            params.extend(sorted(flt.kinds))
        where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        rows = self.db.query(f"{self._SELECT}{where} ORDER BY event_id", tuple(params))
        for row in rows:
            yield self._row_to_record(row)

    def export_lines(self, flt: Optional[ExportFilter] = None, pseudonymize: bool = False) -> Iterator[str]:
        for record in self.export_stream(flt):
            if pseudonymize:
                payload = dict(record.payload)
                if "username" in payload:
                    payload["username"] = pseudonym(str(payload["username"]))
                record = EventRecord(
                    event_id=record.event_id,
                    ts=record.ts,
                    user_id=pseudonym(record.user_id),
                    session_id=record.session_id,
                    kind=record.kind,
                    component=record.component,
                    payload=payload,
                    schema_version=record.schema_version,
                )
            yield render_envelope(record)

    def import_records(self, records: Iterable[EventRecord]) -> int:
        """Load exported records verbatim (ids and timestamps preserved)."""
        n = 0
        with self.db.transaction() as conn:
            for record in records:
                validate_payload(record.kind, record.component, record.payload)
                conn.execute(
                    "INSERT INTO events (event_id, ts, user_id, session_id, kind, component, payload, schema_version)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                    (
                        record.event_id,
                        record.ts,
                        record.user_id,
                        record.session_id,
                        record.kind,
                        record.component,
                        json.dumps(record.payload, sort_keys=True, ensure_ascii=False, separators=(",", ":")),
                        record.schema_version,
                    ),
                )
                self._last_ts = max(self._last_ts, record.ts)
                n += 1
        return n
