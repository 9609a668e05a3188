"""Embedded single-file storage.

One sqlite database holds the append-only event log plus the small cache
tables (sessions, diagnosis attempts, users, tokens). A single shared
connection guarded by a reentrant lock serializes writers; WAL mode keeps
readers from blocking appenders. ``transaction()`` is reentrant so a
higher-level operation can wrap several repository calls into one atomic
commit.
"""

from __future__ import annotations

import sqlite3
import threading
from contextlib import contextmanager

from .errors import StorageError

_SCHEMA = """
CREATE TABLE IF NOT EXISTS events (
    event_id INTEGER PRIMARY KEY AUTOINCREMENT,
    ts INTEGER NOT NULL,
    user_id TEXT NOT NULL,
    session_id TEXT,
    kind TEXT NOT NULL,
    component TEXT,
    payload TEXT NOT NULL,
    schema_version INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_events_session ON events (session_id, event_id);
CREATE INDEX IF NOT EXISTS idx_events_user ON events (user_id, event_id);
CREATE INDEX IF NOT EXISTS idx_events_kind ON events (kind, event_id);

CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL,
    activity_id TEXT NOT NULL,
    state TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_sessions_user ON sessions (user_id);

CREATE TABLE IF NOT EXISTS attempts (
    attempt_id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL,
    diagnosis_id TEXT NOT NULL,
    ordinal INTEGER NOT NULL,
    state TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_attempts_user ON attempts (user_id, diagnosis_id, ordinal);

CREATE TABLE IF NOT EXISTS users (
    username TEXT PRIMARY KEY,
    salt TEXT NOT NULL,
    pw_hash TEXT NOT NULL,
    role TEXT NOT NULL,
    created_ts INTEGER NOT NULL
);

CREATE TABLE IF NOT EXISTS tokens (
    token TEXT PRIMARY KEY,
    username TEXT NOT NULL,
    expires_ts INTEGER NOT NULL
);
"""


class Database:
    """Thread-safe wrapper around one sqlite connection."""

    def __init__(self, path: str = ":memory:"):
        self.path = path
        try:
            self._conn = sqlite3.connect(path, check_same_thread=False, isolation_level=None)
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.executescript(_SCHEMA)
        except sqlite3.Error as exc:
            raise StorageError(f"cannot open database at {path}: {exc}") from exc
        self._lock = threading.RLock()
        self._tx_depth = 0

    @contextmanager
    def transaction(self):
        """Serialize a write; nested calls join the outermost transaction."""
        with self._lock:
            outermost = self._tx_depth == 0
            if outermost:
                self._conn.execute("BEGIN IMMEDIATE")
            self._tx_depth += 1
            try:
                yield self._conn
            except BaseException:
                self._tx_depth -= 1
                if outermost:
                    self._conn.execute("ROLLBACK")
                raise
            else:
                self._tx_depth -= 1
                if outermost:
                    self._conn.execute("COMMIT")

    def execute(self, sql: str, params: tuple = ()) -> None:
        with self.transaction() as conn:
            conn.execute(sql, params)

    def query(self, sql: str, params: tuple = ()) -> list[tuple]:
        with self._lock:
            try:
                return self._conn.execute(sql, params).fetchall()
            except sqlite3.Error as exc:
                raise StorageError(str(exc)) from exc

    def query_one(self, sql: str, params: tuple = ()):
        rows = self.query(sql, params)
        return rows[0] if rows else None

    def close(self) -> None:
        with self._lock:
            self._conn.close()
