"""User accounts and session-token auth.

Passwords are hashed with scrypt (memory-hard, salted); only the token's
SHA-256 lands on disk.  Sessions expire after 30 days.
"""

from __future__ import annotations

import hashlib
import os
import secrets
import time
from dataclasses import dataclass
from pathlib import Path

from .fileio import locked, read_json, write_json_atomic

SESSION_TTL = 30 * 24 * 3600.0
ROLES = ("user", "organizer", "admin")

_SCRYPT = {"n": 2**14, "r": 8, "p": 1}


class DuplicateEmail(Exception):
    pass


class UnknownUser(Exception):
    pass


@dataclass
class UserAccount:
    id: str
    email: str
    display_name: str
    role: str = "user"

    def public_dict(self) -> dict:
        return {
            "id": self.id,
            "email": self.email,
            "display_name": self.display_name,
            "role": self.role,
        }


def _hash_password(password: str, salt: bytes) -> str:
    return hashlib.scrypt(password.encode("utf-8"), salt=salt, **_SCRYPT).hex()


class UserStore:
    def __init__(self, root: Path):
        self.dir = Path(root) / "users"

    def _user_path(self, uid: str) -> Path:
        return self.dir / f"{uid}.json"

    def register(
        self, email: str, display_name: str, password: str, role: str = "user"
    ) -> UserAccount:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        if not email or "@" not in email:
            raise ValueError(f"not an email address: {email!r}")
        email = email.strip().lower()
        with locked(self.dir / ".users.lock"):
            if self.find_by_email(email) is not None:
                raise DuplicateEmail(email)
            uid = "u-" + secrets.token_hex(4)
            salt = os.urandom(16)
            write_json_atomic(
                self._user_path(uid),
                {
                    "id": uid,
                    "email": email,
                    "display_name": display_name,
                    "role": role,
                    "salt": salt.hex(),
                    "password_hash": _hash_password(password, salt),
                },
            )
        return UserAccount(uid, email, display_name, role)

    def find_by_email(self, email: str) -> UserAccount | None:
        if not self.dir.is_dir():
            return None
        email = email.strip().lower()
        for path in self.dir.glob("u-*.json"):
            data = read_json(path)
            if data["email"] == email:
                return UserAccount(data["id"], data["email"], data["display_name"], data["role"])
        return None

    def get(self, uid: str) -> UserAccount:
        path = self._user_path(uid)
        if not path.exists():
            raise UnknownUser(uid)
        data = read_json(path)
        return UserAccount(data["id"], data["email"], data["display_name"], data["role"])

    def authenticate(self, email: str, password: str) -> UserAccount | None:
        if not self.dir.is_dir():
            return None
        email = email.strip().lower()
        for path in self.dir.glob("u-*.json"):
            data = read_json(path)
            if data["email"] != email:
                continue
            expected = data["password_hash"]
            got = _hash_password(password, bytes.fromhex(data["salt"]))
            if secrets.compare_digest(expected, got):
                return UserAccount(data["id"], data["email"], data["display_name"], data["role"])
            return None
        return None

    # -- sessions -----------------------------------------------------------------

    def create_session(self, uid: str, now: float | None = None) -> str:
        token = secrets.token_urlsafe(32)
        digest = hashlib.sha256(token.encode()).hexdigest()
        write_json_atomic(
            self.dir / "sessions" / f"{digest}.json",
            {"user": uid, "expires": (now or time.time()) + SESSION_TTL},
        )
        return token

    def session_user(self, token: str, now: float | None = None) -> UserAccount | None:
        digest = hashlib.sha256(token.encode()).hexdigest()
        path = self.dir / "sessions" / f"{digest}.json"
        if not path.exists():
            return None
        data = read_json(path)
        if data["expires"] < (now or time.time()):
            return None
        try:
            return self.get(data["user"])
        except UnknownUser:
            return None
