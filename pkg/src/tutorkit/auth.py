"""User registration, login, and bearer tokens.

Credentials are stored as salted PBKDF2 hashes in the embedded database;
tokens are opaque random strings with an expiry. No third-party identity.
"""

from __future__ import annotations

import hashlib
import secrets
import time
from dataclasses import dataclass
from typing import Optional

from . import events as ev
from .errors import BadCredentials, UserExists
from .events import EventStore
from .storage import Database

ROLE_USER = "user"
ROLE_ADMIN = "admin"

_PBKDF2_ITERATIONS = 100_000
TOKEN_TTL_MS = 24 * 3600 * 1000


def _hash_password(password: str, salt: str) -> str:
    digest = hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), bytes.fromhex(salt), _PBKDF2_ITERATIONS)
    return digest.hex()


@dataclass
class AuthToken:
    token: str
    username: str
    expires_ts: int


class AuthService:
    def __init__(self, db: Database, store: EventStore):
        self.db = db
        self.store = store

    def register(self, username: str, password: str, role: str = ROLE_USER) -> None:
        if not username or not password:
            raise BadCredentials("username and password must be non-empty")
        if self.db.query_one("SELECT 1 FROM users WHERE username = ?", (username,)):
            raise UserExists(f"username {username!r} is taken")
        salt = secrets.token_hex(16)
        with self.db.transaction() as conn:
            conn.execute(
                "INSERT INTO users (username, salt, pw_hash, role, created_ts) VALUES (?, ?, ?, ?, ?)",
                (username, salt, _hash_password(password, salt), role, time.time_ns() // 1_000_000),
            )
        self.store.append(username, ev.AUTH_EVENT, {"action": "register", "username": username})

    def login(self, username: str, password: str) -> AuthToken:
        row = self.db.query_one("SELECT salt, pw_hash FROM users WHERE username = ?", (username,))
        if row is None or not secrets.compare_digest(row[1], _hash_password(password, row[0])):
            self.store.append(username or "unknown", ev.AUTH_EVENT, {"action": "login_failed", "username": username})
            raise BadCredentials("unknown user or wrong password")
        token = AuthToken(
            token=secrets.token_urlsafe(32),
            username=username,
            expires_ts=time.time_ns() // 1_000_000 + TOKEN_TTL_MS,
        )
        with self.db.transaction() as conn:
            conn.execute(
                "INSERT INTO tokens (token, username, expires_ts) VALUES (?, ?, ?)",
                (token.token, token.username, token.expires_ts),
            )
        self.store.append(username, ev.AUTH_EVENT, {"action": "login", "username": username})
        return token

    def resolve(self, token: str) -> Optional[str]:
        """Username for a live token, or None."""
        row = self.db.query_one("SELECT username, expires_ts FROM tokens WHERE token = ?", (token,))
        if row is None or row[1] < time.time_ns() // 1_000_000:
            return None
        return row[0]

    def role_of(self, username: str) -> str:
        row = self.db.query_one("SELECT role FROM users WHERE username = ?", (username,))
        return row[0] if row else ROLE_USER
