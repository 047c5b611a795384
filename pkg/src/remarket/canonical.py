"""Canonical serialization and timestamp rules shared by passports and blocks.

One canonical form for everything that gets hashed: UTF-8 JSON, keys sorted
lexicographically at every nesting level, no insignificant whitespace, no
NaN/Infinity, numbers in Python's shortest round-trip rendering. Timestamps
are RFC-3339 UTC with fixed microsecond precision so equal instants always
produce equal bytes.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from typing import Any


def canonical_dumps(obj: Any) -> str:
    return json.dumps(
        obj,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )


def canonical_bytes(obj: Any) -> bytes:
    return canonical_dumps(obj).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    """Lowercase hex SHA-256 digest (64 chars)."""
    return hashlib.sha256(data).hexdigest()


def canonical_hash(obj: Any) -> str:
    return sha256_hex(canonical_bytes(obj))


def format_utc(dt: datetime) -> str:
    """Render a datetime as RFC-3339 UTC, e.g. 2026-01-15T09:30:00.000000Z."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    dt = dt.astimezone(timezone.utc)
    return dt.isoformat(timespec="microseconds").replace("+00:00", "Z")


def parse_utc(text: str) -> datetime:
    """Parse an RFC-3339 UTC timestamp produced by :func:`format_utc`."""
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def utc_now() -> datetime:
    return datetime.now(timezone.utc)
