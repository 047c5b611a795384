"""Content-addressed immutable store standing in for IPFS.

Objects are raw bytes stored one-file-per-object under a two-level fan-out
directory keyed by the SHA-256 digest prefix. The address is the lowercase
hex digest of the content itself, so every read is self-verifying. Storage
is append-only: nothing in the public surface deletes or overwrites.

Timestamps are metadata only and live in a sidecar line-delimited index,
never in the hashed payload.
"""

from __future__ import annotations

import os
import re
import tempfile
import threading
from pathlib import Path

from .canonical import format_utc, sha256_hex, utc_now
from .errors import CollisionError, EmptyContentError, IntegrityError, ObjectNotFoundError

_ADDRESS_RE = re.compile(r"^[0-9a-f]{64}$")


def address_of(content: bytes) -> str:
    """The ContentAddress of a byte sequence: pure function of content."""
    return sha256_hex(content)


def is_address(text: str) -> bool:
    return bool(_ADDRESS_RE.match(text))


class ContentStore:
    """File-backed content-addressed object store.

    Concurrent stores of identical bytes converge on one object (writes go
    through a temp file and an atomic rename); writers to distinct
    addresses never block each other.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.objects_dir = self.root / "objects"
        self.index_path = self.root / "index.log"
        self.objects_dir.mkdir(parents=True, exist_ok=True)
        self._index_lock = threading.Lock()

    def _object_path(self, address: str) -> Path:
        return self.objects_dir / address[:2] / address[2:4] / address

    def store(self, content: bytes) -> str:
        """Store bytes, returning their ContentAddress.

        Idempotent: re-storing identical bytes is a no-op returning the
        same address. A same-address/different-bytes situation is a hash
        collision and fatal.
        """
        if not content:
            raise EmptyContentError("refusing to store empty content")
        address = address_of(content)
        path = self._object_path(address)
        if path.exists():
            existing = path.read_bytes()
            if existing != content:
                raise CollisionError(f"address {address} already holds different bytes")
            return address
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(content)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        self._append_index(address)
        return address

    def retrieve(self, address: str) -> bytes:
        """Return the stored bytes, verifying they still hash to the address."""
        if not is_address(address):
            raise ObjectNotFoundError(f"not a content address: {address!r}")
        path = self._object_path(address)
        if not path.exists():
            raise ObjectNotFoundError(f"no object at {address}")
        content = path.read_bytes()
        if address_of(content) != address:
            raise IntegrityError(f"object {address} fails its hash: on-disk tampering")
        return content

    def exists(self, address: str) -> bool:
        return is_address(address) and self._object_path(address).exists()

    def addresses(self) -> list[str]:
        """All stored addresses (scan of the object tree, not the index)."""
        found = []
        for path in self.objects_dir.glob("*/*/*"):
            if path.is_file() and is_address(path.name):
                found.append(path.name)
        return sorted(found)

    def _append_index(self, address: str) -> None:
        line = f"{address}\t{format_utc(utc_now())}\n"
        with self._index_lock:
            with open(self.index_path, "a", encoding="utf-8") as fh:
                fh.write(line)
