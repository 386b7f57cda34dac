"""Token-issuing auth boundary: client-credential verification against a
salted-hash client table, opaque bearer tokens with a fixed one-hour TTL.

The token service shares nothing with the registry except the verified
token context passed into each call.
"""

from __future__ import annotations

import hashlib
import json
import secrets
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

from .errors import AuthRequired, InsufficientScope, InvalidClient

TOKEN_TTL_SECONDS = 3600
_PBKDF2_ITERATIONS = 50_000


class Scope(str, Enum):
    READ = "READ"
    WRITE = "WRITE"
    STEWARD = "STEWARD"
    ADMIN = "ADMIN"


def _hash_secret(secret: str, salt: str) -> str:
    return hashlib.pbkdf2_hmac("sha256", secret.encode("utf-8"),
                               bytes.fromhex(salt), _PBKDF2_ITERATIONS).hex()


@dataclass(frozen=True)
class Client:
    client_id: str
    salt: str
    secret_hash: str
    scopes: frozenset

    def to_dict(self) -> dict:
        return {"client_id": self.client_id, "salt": self.salt,
                "secret_hash": self.secret_hash,
                "scopes": sorted(s.value for s in self.scopes)}

    @classmethod
    def from_dict(cls, d: dict) -> "Client":
        return cls(d["client_id"], d["salt"], d["secret_hash"],
                   frozenset(Scope(s) for s in d["scopes"]))


def make_client(client_id: str, secret: str, scopes: Iterable[Scope]) -> Client:
    salt = secrets.token_hex(16)
    return Client(client_id, salt, _hash_secret(secret, salt), frozenset(scopes))


def load_clients(path) -> dict:
    path = Path(path)
    if not path.exists():
        return {}
    entries = json.loads(path.read_text(encoding="utf-8"))
    return {e["client_id"]: Client.from_dict(e) for e in entries}


def save_clients(path, clients: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([c.to_dict() for _, c in sorted(clients.items())],
                               indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class AccessToken:
    token: str  # opaque 64-hex-char value; never logged
    client_id: str
    scopes: frozenset
    issued_at: datetime
    expires_at: datetime


class TokenService:
    def __init__(self, clients: dict,
                 clock: Optional[Callable[[], datetime]] = None):
        self.clients = clients
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self._tokens: dict = {}

    def issue(self, client_id: str, client_secret: str) -> AccessToken:
        client = self.clients.get(client_id)
        # the same opaque error for unknown id and wrong secret
        if client is None:
            _hash_secret(client_secret, "00" * 16)  # keep timing comparable
            raise InvalidClient("client authentication failed")
        if not secrets.compare_digest(_hash_secret(client_secret, client.salt),
                                      client.secret_hash):
            raise InvalidClient("client authentication failed")
        issued_at = self.clock()
        token = AccessToken(
            token=secrets.token_hex(32),
            client_id=client_id,
            scopes=client.scopes,
            issued_at=issued_at,
            expires_at=issued_at + timedelta(seconds=TOKEN_TTL_SECONDS),
        )
        self._tokens[token.token] = token
        return token

    def authorize(self, token_value: Optional[str], required: Scope) -> AccessToken:
        if not token_value:
            raise AuthRequired("missing bearer token")
        token = self._tokens.get(token_value)
        if token is None:
            raise AuthRequired("unknown token")
        if self.clock() >= token.expires_at:
            raise AuthRequired("token expired")
        if required not in token.scopes:
            raise InsufficientScope(f"scope {required.value} required")
        return token

    def revoke(self, token_value: str) -> None:
        self._tokens.pop(token_value, None)
