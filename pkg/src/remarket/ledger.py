"""Simulated blockchain: an append-only, hash-chained log of product records.

Single-node stand-in for the Polkadot layer. Each block hashes its height,
the previous block's hash and its canonically-encoded records, so any
mutation of persisted data breaks the chain and is reported by
verify_chain(). Appends are serialized through one writer lock and are
durable (fsync) before the transaction id is returned.

Persistence: an append-only file of length-prefixed canonical block
encodings, a small committed-head sidecar, and a pending-records journal
used when block batching is configured. On open, a torn tail beyond the
committed head is truncated (the write was never acknowledged); unreadable
data at or below the head is corruption and refuses to load.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import canonical
from .cas import is_address
from .errors import (
    ChainCorruptionError,
    DuplicateProductError,
    RecordNotFoundError,
    RecordValidationError,
    UnknownProductError,
)
from .money import is_price

GENESIS_PREV_HASH = "0" * 64
_LEN = struct.Struct(">I")


class RecordKind(str, Enum):
    PRODUCT_ADDED = "ProductAdded"
    PRODUCT_UPDATED = "ProductUpdated"
    OWNERSHIP_TRANSFERRED = "OwnershipTransferred"


def format_tid(height: int, index: int) -> str:
    return f"{height}:{index}"


def parse_tid(tid: str) -> tuple[int, int]:
    try:
        height_text, index_text = tid.split(":")
        height, index = int(height_text), int(index_text)
    except (ValueError, AttributeError) as exc:
        raise RecordNotFoundError(f"malformed transaction id: {tid!r}") from exc
    if height < 0 or index < 0:
        raise RecordNotFoundError(f"malformed transaction id: {tid!r}")
    return height, index


@dataclass(frozen=True)
class CriticalProductDetails:
    """The compact product summary anchored alongside the passport address."""

    product_id: str
    category: str
    listed_price: str
    dpp_version: int
    summary: str

    def to_dict(self) -> dict:
        return {
            "product_id": self.product_id,
            "category": self.category,
            "listed_price": self.listed_price,
            "dpp_version": self.dpp_version,
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CriticalProductDetails":
        return cls(
            product_id=data["product_id"],
            category=data["category"],
            listed_price=data["listed_price"],
            dpp_version=int(data["dpp_version"]),
            summary=data["summary"],
        )


@dataclass(frozen=True)
class LedgerRecord:
    record_kind: RecordKind
    product_id: str
    ipfs_ref: str
    cpd: CriticalProductDetails
    price: str
    owner_id: str
    prev_record: str | None = None

    def to_dict(self) -> dict:
        return {
            "record_kind": self.record_kind.value,
            "product_id": self.product_id,
            "ipfs_ref": self.ipfs_ref,
            "cpd": self.cpd.to_dict(),
            "price": self.price,
            "owner_id": self.owner_id,
            "prev_record": self.prev_record,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LedgerRecord":
        return cls(
            record_kind=RecordKind(data["record_kind"]),
            product_id=data["product_id"],
            ipfs_ref=data["ipfs_ref"],
            cpd=CriticalProductDetails.from_dict(data["cpd"]),
            price=data["price"],
            owner_id=data["owner_id"],
            prev_record=data["prev_record"],
        )


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    records: tuple[LedgerRecord, ...]
    block_hash: str

    @staticmethod
    def compute_hash(height: int, prev_hash: str, records: tuple[LedgerRecord, ...]) -> str:
        body = {
            "height": height,
            "prev_hash": prev_hash,
            "records": [r.to_dict() for r in records],
        }
        return canonical.canonical_hash(body)

    @classmethod
    def seal(cls, height: int, prev_hash: str, records: tuple[LedgerRecord, ...]) -> "Block":
        return cls(height, prev_hash, records, cls.compute_hash(height, prev_hash, records))

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "records": [r.to_dict() for r in self.records],
            "block_hash": self.block_hash,
        }


@dataclass(frozen=True)
class ChainReport:
    valid: bool
    height: int
    corrupt_height: int | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "height": self.height,
            "corrupt_height": self.corrupt_height,
            "detail": self.detail,
        }


@dataclass
class _ProductHistory:
    added_tid: str
    latest_tid: str
    tids: list[str] = field(default_factory=list)


class Ledger:
    """Append-only hash-chained record log with per-product validation."""

    def __init__(self, chain_path: str | Path, batch_size: int = 1):
        if batch_size < 1:
            raise RecordValidationError("batch_size must be >= 1")
        self.chain_path = Path(chain_path)
        self.head_path = self.chain_path.with_suffix(".head")
        self.journal_path = self.chain_path.with_suffix(".pending")
        self.batch_size = batch_size
        self._lock = threading.RLock()
        self._blocks: list[Block] = []
        self._pending: list[LedgerRecord] = []
        self._products: dict[str, _ProductHistory] = {}
        self._open()

    # -- lifecycle ----------------------------------------------------------

    def _open(self) -> None:
        self.chain_path.parent.mkdir(parents=True, exist_ok=True)
        committed = self._read_head()
        if not self.chain_path.exists() or self.chain_path.stat().st_size == 0:
            if committed is not None and committed >= 0:
                raise ChainCorruptionError(
                    f"head says height {committed} committed but chain file is empty"
                )
            genesis = Block.seal(0, GENESIS_PREV_HASH, ())
            self._append_block_bytes(self._encode_block(genesis))
            self._blocks = [genesis]
            self._write_head(genesis)
        else:
            self._blocks = self._load_blocks(committed)
        self._load_journal()
        self._rebuild_product_index()

    def _read_head(self) -> int | None:
        if not self.head_path.exists():
            return None
        try:
            data = json.loads(self.head_path.read_text(encoding="utf-8"))
            return int(data["height"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ChainCorruptionError(f"unreadable head file: {exc}") from exc

    def _write_head(self, block: Block) -> None:
        payload = canonical.canonical_dumps({"height": block.height, "block_hash": block.block_hash})
        fd, tmp = tempfile.mkstemp(dir=self.head_path.parent, prefix=".head-")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.head_path)

    def _load_blocks(self, committed: int | None) -> list[Block]:
        blocks: list[Block] = []
        raw = self.chain_path.read_bytes()
        offset = 0
        good_end = 0
        while offset < len(raw):
            height = len(blocks)
            within_head = committed is not None and height <= committed
            if offset + _LEN.size > len(raw):
                if within_head:
                    raise ChainCorruptionError(f"truncated length prefix at committed height {height}")
                break
            (length,) = _LEN.unpack_from(raw, offset)
            start, end = offset + _LEN.size, offset + _LEN.size + length
            if end > len(raw):
                if within_head:
                    raise ChainCorruptionError(f"truncated block at committed height {height}")
                break
            try:
                block = self._decode_block(raw[start:end])
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ChainCorruptionError(f"unreadable block at height {height}: {exc}") from exc
            if block.height != height:
                raise ChainCorruptionError(f"block at position {height} claims height {block.height}")
            blocks.append(block)
            offset = good_end = end
        if good_end < len(raw):
            # Torn tail beyond the committed head: never acknowledged, drop it.
            with open(self.chain_path, "r+b") as fh:
                fh.truncate(good_end)
                fh.flush()
                os.fsync(fh.fileno())
        if committed is not None and len(blocks) - 1 < committed:
            raise ChainCorruptionError(
                f"chain ends at height {len(blocks) - 1} but head committed {committed}"
            )
        if not blocks:
            raise ChainCorruptionError("chain file holds no complete genesis block")
        return blocks

    def _load_journal(self) -> None:
        self._pending = []
        if not self.journal_path.exists():
            return
        next_height = len(self._blocks)
        for line in self.journal_path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                height, _ = parse_tid(entry["tid"])
                record = LedgerRecord.from_dict(entry["record"])
            except (json.JSONDecodeError, KeyError, ValueError, RecordNotFoundError):
                break  # torn journal tail: the write was never acknowledged
            if height < next_height:
                continue  # already sealed into a block before the journal was cleared
            self._pending.append(record)
        self._rewrite_journal()

    def _rebuild_product_index(self) -> None:
        self._products = {}
        for block in self._blocks:
            for index, record in enumerate(block.records):
                self._index_record(record, format_tid(block.height, index))
        next_height = len(self._blocks)
        for index, record in enumerate(self._pending):
            self._index_record(record, format_tid(next_height, index))

    def _index_record(self, record: LedgerRecord, tid: str) -> None:
        history = self._products.get(record.product_id)
        if record.record_kind is RecordKind.PRODUCT_ADDED:
            self._products[record.product_id] = _ProductHistory(tid, tid, [tid])
        elif history is not None:
            history.latest_tid = tid
            history.tids.append(tid)

    # -- encoding -----------------------------------------------------------

    @staticmethod
    def _encode_block(block: Block) -> bytes:
        body = canonical.canonical_bytes(block.to_dict())
        return _LEN.pack(len(body)) + body

    @staticmethod
    def _decode_block(data: bytes) -> Block:
        payload = json.loads(data.decode("utf-8"))
        return Block(
            height=int(payload["height"]),
            prev_hash=payload["prev_hash"],
            records=tuple(LedgerRecord.from_dict(r) for r in payload["records"]),
            block_hash=payload["block_hash"],
        )

    def _append_block_bytes(self, data: bytes) -> None:
        with open(self.chain_path, "ab") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())

    # -- public surface -----------------------------------------------------

    @property
    def height(self) -> int:
        """Number of sealed blocks, genesis included."""
        with self._lock:
            return len(self._blocks)

    def record(self, record: LedgerRecord) -> str:
        """Validate and append a record; returns its transaction id.

        ProductAdded must introduce a new product id; the other kinds must
        reference a known one. prev_record is filled with the product's
        current latest transaction when the caller leaves it None.
        """
        with self._lock:
            record = self._validated(record)
            tid = format_tid(len(self._blocks), len(self._pending))
            self._journal_append(tid, record)
            self._pending.append(record)
            self._index_record(record, tid)
            if len(self._pending) >= self.batch_size:
                self._seal_pending()
            return tid

    def flush(self) -> None:
        """Seal any batched records into a block (no-op when none pending)."""
        with self._lock:
            if self._pending:
                self._seal_pending()

    def _validated(self, record: LedgerRecord) -> LedgerRecord:
        if not is_address(record.ipfs_ref):
            raise RecordValidationError(f"ipfs_ref is not a content address: {record.ipfs_ref!r}")
        if not is_price(record.price):
            raise RecordValidationError(f"price must be a two-decimal string: {record.price!r}")
        if not record.product_id:
            raise RecordValidationError("record has no product_id")
        if record.cpd.product_id != record.product_id:
            raise RecordValidationError(
                f"cpd.product_id {record.cpd.product_id!r} != record product_id {record.product_id!r}"
            )
        history = self._products.get(record.product_id)
        if record.record_kind is RecordKind.PRODUCT_ADDED:
            if history is not None:
                raise DuplicateProductError(f"product {record.product_id} already on the chain")
            if record.prev_record is not None:
                raise RecordValidationError("ProductAdded must not carry prev_record")
            return record
        if history is None:
            raise UnknownProductError(f"no ProductAdded record for {record.product_id}")
        if record.prev_record is None:
            return LedgerRecord(
                record_kind=record.record_kind,
                product_id=record.product_id,
                ipfs_ref=record.ipfs_ref,
                cpd=record.cpd,
                price=record.price,
                owner_id=record.owner_id,
                prev_record=history.latest_tid,
            )
        if record.prev_record != history.latest_tid:
            raise RecordValidationError(
                f"prev_record {record.prev_record} is stale; latest is {history.latest_tid}"
            )
        return record

    def _seal_pending(self) -> None:
        prev = self._blocks[-1]
        block = Block.seal(prev.height + 1, prev.block_hash, tuple(self._pending))
        self._append_block_bytes(self._encode_block(block))
        self._blocks.append(block)
        self._write_head(block)
        self._pending = []
        self._rewrite_journal()

    def _journal_append(self, tid: str, record: LedgerRecord) -> None:
        line = canonical.canonical_dumps({"tid": tid, "record": record.to_dict()}) + "\n"
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def _rewrite_journal(self) -> None:
        next_height = len(self._blocks)
        lines = [
            canonical.canonical_dumps(
                {"tid": format_tid(next_height, index), "record": record.to_dict()}
            )
            for index, record in enumerate(self._pending)
        ]
        fd, tmp = tempfile.mkstemp(dir=self.journal_path.parent, prefix=".pending-")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            if lines:
                fh.write("\n".join(lines) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.journal_path)

    def get_record(self, tid: str) -> LedgerRecord:
        height, index = parse_tid(tid)
        with self._lock:
            if height < len(self._blocks):
                records = self._blocks[height].records
                if index < len(records):
                    return records[index]
            elif height == len(self._blocks) and index < len(self._pending):
                return self._pending[index]
        raise RecordNotFoundError(f"no record at {tid}")

    def latest_record_for(self, product_id: str) -> LedgerRecord:
        with self._lock:
            history = self._products.get(product_id)
            if history is None:
                raise UnknownProductError(f"no records for product {product_id}")
            return self.get_record(history.latest_tid)

    def latest_tid_for(self, product_id: str) -> str:
        with self._lock:
            history = self._products.get(product_id)
            if history is None:
                raise UnknownProductError(f"no records for product {product_id}")
            return history.latest_tid

    def has_product(self, product_id: str) -> bool:
        with self._lock:
            return product_id in self._products

    def product_tids(self, product_id: str) -> list[str]:
        """All transaction ids for a product, oldest first."""
        with self._lock:
            history = self._products.get(product_id)
            if history is None:
                raise UnknownProductError(f"no records for product {product_id}")
            return list(history.tids)

    def product_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._products)

    def records_with_tids(self) -> list[tuple[str, LedgerRecord]]:
        """Every sealed and pending record in append order."""
        with self._lock:
            out: list[tuple[str, LedgerRecord]] = []
            for block in self._blocks:
                for index, record in enumerate(block.records):
                    out.append((format_tid(block.height, index), record))
            next_height = len(self._blocks)
            for index, record in enumerate(self._pending):
                out.append((format_tid(next_height, index), record))
            return out

    def verify_chain(self) -> ChainReport:
        """Re-read the persisted chain and recompute every hash and link.

        Strict: any unreadable, truncated or mutated persisted block is
        reported as corruption at its height. Corruption is a report, not
        an exception.
        """
        with self._lock:
            expected_height = len(self._blocks)
        try:
            raw = self.chain_path.read_bytes()
        except OSError as exc:
            return ChainReport(False, 0, 0, f"chain file unreadable: {exc}")
        offset = 0
        prev_hash = GENESIS_PREV_HASH
        height = 0
        while offset < len(raw):
            if offset + _LEN.size > len(raw):
                return ChainReport(False, height, height, "truncated length prefix")
            (length,) = _LEN.unpack_from(raw, offset)
            start, end = offset + _LEN.size, offset + _LEN.size + length
            if end > len(raw):
                return ChainReport(False, height, height, "truncated block body")
            try:
                block = self._decode_block(raw[start:end])
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                return ChainReport(False, height, height, f"undecodable block: {exc}")
            if block.height != height:
                return ChainReport(False, height, height, f"height field says {block.height}")
            if block.prev_hash != prev_hash:
                return ChainReport(False, height, height, "previous-hash link broken")
            recomputed = Block.compute_hash(block.height, block.prev_hash, block.records)
            if recomputed != block.block_hash:
                return ChainReport(False, height, height, "block hash does not recompute")
            prev_hash = block.block_hash
            height += 1
            offset = end
        if height < expected_height:
            return ChainReport(False, height, height, "persisted chain shorter than appended chain")
        return ChainReport(True, height)
