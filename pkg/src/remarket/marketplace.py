"""Marketplace core: listing lifecycle, search, verification, orders, payment.

Backed by the content store (passport bytes), the ledger (anchors and
ownership) and the reuse evaluator (listing gate). The ledger append is the
commit point of every multi-step operation: failures before it roll back,
failures after it roll forward when the marketplace reopens and reconciles
its stores against the chain.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Callable

from . import canonical, ccpo, dpp as dpp_mod
from .cas import ContentStore
from .ccpo import ReuseCategory, ReuseThresholds, ScoreWeights, ValueFields
from .errors import (
    DuplicateParticipantError,
    DuplicateProductError,
    InjectedFault,
    LedgerUnavailableError,
    ListingNotActiveError,
    ListingNotFoundError,
    ListingNotVerifiedError,
    NotStrongReuseError,
    OrderNotFoundError,
    OrderNotPayableError,
    PaginationError,
    RecordNotFoundError,
    SelfTransferError,
    UnknownParticipantError,
)
from .faults import FaultInjector, hit
from .ledger import CriticalProductDetails, Ledger, LedgerRecord, RecordKind
from .money import parse_price
from .payments import PaymentProvider, SimulatedPaymentProvider

VERIFICATION_SUCCESSFUL = "Verification successful."
DPP_MISMATCH = "Discrepancy found: DPP does not match."
PRICE_MISMATCH = "Verification failed: Pricing does not match."
PAYMENT_FAILED = "Payment failed."

MAX_PAGE_SIZE = 100
LEDGER_RETRIES = 3


class Role(str, Enum):
    BUYER = "buyer"
    SELLER = "seller"


class ListingStatus(str, Enum):
    ACTIVE = "active"
    SOLD = "sold"
    WITHDRAWN = "withdrawn"


class OrderStatus(str, Enum):
    PLACED = "placed"
    PAID = "paid"
    FAILED = "failed"
    FULFILLED = "fulfilled"


@dataclass(frozen=True)
class Participant:
    participant_id: str
    role: Role
    registered_at: str

    def to_dict(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "role": self.role.value,
            "registered_at": self.registered_at,
        }


@dataclass(frozen=True)
class Listing:
    listing_id: str
    product_id: str
    seller_id: str
    price: str
    dpp_address: str
    anchor_tid: str
    cpd: CriticalProductDetails
    status: ListingStatus
    listed_at: str
    search_facets: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "listing_id": self.listing_id,
            "product_id": self.product_id,
            "seller_id": self.seller_id,
            "price": self.price,
            "dpp_address": self.dpp_address,
            "anchor_tid": self.anchor_tid,
            "cpd": self.cpd.to_dict(),
            "status": self.status.value,
            "listed_at": self.listed_at,
            "search_facets": dict(self.search_facets),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Listing":
        return cls(
            listing_id=data["listing_id"],
            product_id=data["product_id"],
            seller_id=data["seller_id"],
            price=data["price"],
            dpp_address=data["dpp_address"],
            anchor_tid=data["anchor_tid"],
            cpd=CriticalProductDetails.from_dict(data["cpd"]),
            status=ListingStatus(data["status"]),
            listed_at=data["listed_at"],
            search_facets=dict(data["search_facets"]),
        )


@dataclass(frozen=True)
class ListingValidity:
    """Listing-level validity flags: v == x * y by construction."""

    x: int
    y: int

    @property
    def v(self) -> int:
        return self.x * self.y

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "v": self.v}


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of the provenance check of marketplace state against the chain."""

    x_i: int
    y_i: int
    message: str
    marketplace_dpp_address: str | None
    ledger_dpp_address: str | None
    marketplace_price: str | None
    ledger_price: str | None

    @property
    def v_i(self) -> int:
        return self.x_i * self.y_i

    def to_dict(self) -> dict:
        return {
            "x_i": self.x_i,
            "y_i": self.y_i,
            "v_i": self.v_i,
            "message": self.message,
            "marketplace_dpp_address": self.marketplace_dpp_address,
            "ledger_dpp_address": self.ledger_dpp_address,
            "marketplace_price": self.marketplace_price,
            "ledger_price": self.ledger_price,
        }


@dataclass(frozen=True)
class Order:
    order_id: str
    buyer_id: str
    listing_id: str
    amount: str
    status: OrderStatus
    placed_at: str

    def to_dict(self) -> dict:
        return {
            "order_id": self.order_id,
            "buyer_id": self.buyer_id,
            "listing_id": self.listing_id,
            "amount": self.amount,
            "status": self.status.value,
            "placed_at": self.placed_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Order":
        return cls(
            order_id=data["order_id"],
            buyer_id=data["buyer_id"],
            listing_id=data["listing_id"],
            amount=data["amount"],
            status=OrderStatus(data["status"]),
            placed_at=data["placed_at"],
        )


@dataclass(frozen=True)
class PaymentReceipt:
    """Transaction flags plus the buyer's hand-off package on success."""

    transaction_id: str | None
    order_id: str
    x: int
    y: int
    z: int
    new_dpp_address: str | None = None
    ownership_tid: str | None = None
    cpd: CriticalProductDetails | None = None
    message: str | None = None

    @property
    def t_status(self) -> int:
        return self.x * self.y * self.z

    def to_dict(self) -> dict:
        return {
            "transaction_id": self.transaction_id,
            "order_id": self.order_id,
            "x": self.x,
            "y": self.y,
            "z": self.z,
            "t_status": self.t_status,
            "new_dpp_address": self.new_dpp_address,
            "ownership_tid": self.ownership_tid,
            "cpd": self.cpd.to_dict() if self.cpd else None,
            "message": self.message,
        }


@dataclass(frozen=True)
class SearchPage:
    items: list[Listing]
    page: int
    page_size: int
    total: int

    def to_dict(self) -> dict:
        return {
            "items": [listing.to_dict() for listing in self.items],
            "page": self.page,
            "page_size": self.page_size,
            "total": self.total,
        }


class _JsonStore:
    """One JSON document per store, rewritten atomically on change."""

    def __init__(self, path: Path, default: dict):
        self.path = path
        if path.exists():
            self.data = json.loads(path.read_text(encoding="utf-8"))
        else:
            self.data = default

    def save(self) -> None:
        payload = json.dumps(self.data, sort_keys=True, indent=1)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=f".{self.path.name}-")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)


class Marketplace:
    """Linearizable-per-product marketplace over cas + ledger.

    Operations touching one product serialize on that product's lock;
    reads never block each other.
    """

    def __init__(
        self,
        data_dir: str | Path,
        *,
        thresholds: ReuseThresholds | None = None,
        weights: ScoreWeights | None = None,
        payment_provider: PaymentProvider | None = None,
        faults: FaultInjector | None = None,
        clock: Callable[[], datetime] | None = None,
        ledger_batch_size: int = 1,
        currency: str = "GBP",
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.thresholds = thresholds or ccpo.DEFAULT_THRESHOLDS
        self.weights = weights or ccpo.DEFAULT_WEIGHTS
        self.payments = payment_provider or SimulatedPaymentProvider()
        self.faults = faults
        self.clock = clock or canonical.utc_now
        self.currency = currency
        self.cas = ContentStore(self.data_dir / "cas")
        self.ledger = Ledger(self.data_dir / "chain.log", batch_size=ledger_batch_size)

        self._participants = _JsonStore(self.data_dir / "participants.json", {"participants": {}})
        self._listings = _JsonStore(self.data_dir / "listings.json", {"seq": 0, "listings": {}})
        self._orders = _JsonStore(self.data_dir / "orders.json", {"seq": 0, "orders": {}})

        self._store_lock = threading.RLock()
        self._product_locks: dict[str, threading.RLock] = {}
        self._reconcile()

    # -- store helpers --------------------------------------------------

    def _product_lock(self, product_id: str) -> threading.RLock:
        with self._store_lock:
            lock = self._product_locks.get(product_id)
            if lock is None:
                lock = self._product_locks[product_id] = threading.RLock()
            return lock

    def _listing(self, listing_id: str) -> Listing | None:
        raw = self._listings.data["listings"].get(listing_id)
        return Listing.from_dict(raw) if raw else None

    def _listing_for_product(self, product_id: str) -> Listing | None:
        for raw in self._listings.data["listings"].values():
            if raw["product_id"] == product_id:
                return Listing.from_dict(raw)
        return None

    def _put_listing(self, listing: Listing) -> None:
        with self._store_lock:
            self._listings.data["listings"][listing.listing_id] = listing.to_dict()
            self._listings.save()

    def _order(self, order_id: str) -> Order | None:
        raw = self._orders.data["orders"].get(order_id)
        return Order.from_dict(raw) if raw else None

    def _put_order(self, order: Order) -> None:
        with self._store_lock:
            self._orders.data["orders"][order.order_id] = order.to_dict()
            self._orders.save()

    def _next_listing_id(self) -> str:
        with self._store_lock:
            self._listings.data["seq"] += 1
            return f"L-{self._listings.data['seq']:06d}"

    def _next_order_id(self) -> str:
        with self._store_lock:
            self._orders.data["seq"] += 1
            return f"O-{self._orders.data['seq']:06d}"

    # -- participants ----------------------------------------------------

    def register_participant(self, participant_id: str, role: str | Role) -> Participant:
        participant_id = participant_id.strip()
        if not participant_id:
            raise UnknownParticipantError("participant id must be non-empty")
        role = Role(role)
        with self._store_lock:
            existing = self._participants.data["participants"].get(participant_id)
            if existing is not None:
                if existing["role"] != role.value:
                    raise DuplicateParticipantError(
                        f"{participant_id} already registered as {existing['role']}"
                    )
                return Participant(participant_id, role, existing["registered_at"])
            participant = Participant(participant_id, role, canonical.format_utc(self.clock()))
            self._participants.data["participants"][participant_id] = participant.to_dict()
            self._participants.save()
            return participant

    def is_registered(self, participant_id: str, role: str | Role | None = None) -> bool:
        raw = self._participants.data["participants"].get(participant_id)
        if raw is None:
            return False
        return role is None or raw["role"] == Role(role).value

    def participants(self) -> list[Participant]:
        return [
            Participant(raw["participant_id"], Role(raw["role"]), raw["registered_at"])
            for raw in sorted(
                self._participants.data["participants"].values(),
                key=lambda r: r["participant_id"],
            )
        ]

    # -- listing lifecycle -------------------------------------------------

    def add_product(
        self,
        product: dpp_mod.IfcLiteProduct,
        seller_id: str,
        price: str,
        values: ValueFields,
        stage_timer: Callable[[str, float], None] | None = None,
    ) -> Listing:
        """Gate through reuse scoring, then passport -> cas -> ledger -> listing.

        Only Strong-reuse products may list. The ledger append is retried a
        bounded number of times on transient failure; if it never lands, no
        listing exists anywhere (the stored passport bytes are harmless
        orphans).
        """
        if not self.is_registered(seller_id, Role.SELLER):
            raise UnknownParticipantError(f"seller {seller_id} is not registered")
        price = parse_price(price, positive=True)
        category = ccpo.categorize(values, self.thresholds, self.weights)
        if category is not ReuseCategory.STRONG:
            action = ccpo.disposition(category)
            raise NotStrongReuseError(
                f"product {product.product_id} scored {category.value}; disposition: {action.value}"
            )
        with self._product_lock(product.product_id):
            if self.ledger.has_product(product.product_id):
                raise DuplicateProductError(f"product {product.product_id} already on the chain")
            now = self.clock()

            started = _now_perf()
            passport = dpp_mod.create_dpp(product, seller_id, now)
            _record_stage(stage_timer, "dpp_creation", started)

            started = _now_perf()
            hit(self.faults, "add.cas_store")
            address = self.cas.store(dpp_mod.canonical_bytes(passport))
            _record_stage(stage_timer, "cas_store", started)

            cpd = CriticalProductDetails(
                product_id=product.product_id,
                category=product.material or "uncategorized",
                listed_price=price,
                dpp_version=passport.version,
                summary=_summary_of(product),
            )
            record = LedgerRecord(
                record_kind=RecordKind.PRODUCT_ADDED,
                product_id=product.product_id,
                ipfs_ref=address,
                cpd=cpd,
                price=price,
                owner_id=seller_id,
            )
            started = _now_perf()
            anchor_tid = self._record_with_retries(record)
            _record_stage(stage_timer, "ledger_record", started)

            listing = Listing(
                listing_id=self._next_listing_id(),
                product_id=product.product_id,
                seller_id=seller_id,
                price=price,
                dpp_address=address,
                anchor_tid=anchor_tid,
                cpd=cpd,
                status=ListingStatus.ACTIVE,
                listed_at=canonical.format_utc(now),
                search_facets={
                    "material": product.material,
                    "category": cpd.category,
                    "location": "",
                },
            )
            hit(self.faults, "add.listing_commit")
            self._put_listing(listing)
            return listing

    def _record_with_retries(self, record: LedgerRecord) -> str:
        last: Exception | None = None
        for _ in range(LEDGER_RETRIES):
            try:
                hit(self.faults, "add.ledger_record")
                return self.ledger.record(record)
            except (InjectedFault, LedgerUnavailableError) as exc:
                last = exc
        raise LedgerUnavailableError(
            f"ledger append failed after {LEDGER_RETRIES} attempts"
        ) from last

    def update_price(self, listing_id: str, seller_id: str, new_price: str) -> Listing:
        """Lawful price change: anchored on the ledger first, listing second."""
        listing = self._listing(listing_id)
        if listing is None:
            raise ListingNotFoundError(f"no listing {listing_id}")
        if listing.seller_id != seller_id:
            raise UnknownParticipantError(f"{seller_id} does not own listing {listing_id}")
        if listing.status is not ListingStatus.ACTIVE:
            raise ListingNotActiveError(f"listing {listing_id} is {listing.status.value}")
        new_price = parse_price(new_price, positive=True)
        with self._product_lock(listing.product_id):
            cpd = replace(listing.cpd, listed_price=new_price)
            record = LedgerRecord(
                record_kind=RecordKind.PRODUCT_UPDATED,
                product_id=listing.product_id,
                ipfs_ref=listing.dpp_address,
                cpd=cpd,
                price=new_price,
                owner_id=seller_id,
            )
            hit(self.faults, "update.ledger_record")
            tid = self.ledger.record(record)
            hit(self.faults, "update.listing_commit")
            updated = replace(listing, price=new_price, anchor_tid=tid, cpd=cpd)
            self._put_listing(updated)
            return updated

    def update_listing_passport(
        self, listing_id: str, seller_id: str, passport_bytes: bytes
    ) -> Listing:
        """Lawful passport revision: store the bytes, anchor them with a
        ProductUpdated record, then advance the listing. Marketplace and
        chain re-converge on the same address."""
        listing = self._listing(listing_id)
        if listing is None:
            raise ListingNotFoundError(f"no listing {listing_id}")
        if listing.seller_id != seller_id:
            raise UnknownParticipantError(f"{seller_id} does not own listing {listing_id}")
        if listing.status is not ListingStatus.ACTIVE:
            raise ListingNotActiveError(f"listing {listing_id} is {listing.status.value}")
        passport = dpp_mod.parse_dpp(passport_bytes)
        if passport.product_id != listing.product_id:
            raise ListingNotVerifiedError(
                f"passport names {passport.product_id}, listing holds {listing.product_id}"
            )
        with self._product_lock(listing.product_id):
            address = self.cas.store(passport_bytes)
            cpd = replace(listing.cpd, dpp_version=passport.version)
            record = LedgerRecord(
                record_kind=RecordKind.PRODUCT_UPDATED,
                product_id=listing.product_id,
                ipfs_ref=address,
                cpd=cpd,
                price=listing.price,
                owner_id=seller_id,
            )
            tid = self.ledger.record(record)
            updated = replace(listing, dpp_address=address, anchor_tid=tid, cpd=cpd)
            self._put_listing(updated)
            return updated

    # -- discovery ---------------------------------------------------------

    def listing_validity(self, pid: str, mid: str, lid: str) -> ListingValidity:
        """Eligibility flags: x for known product + registered seller, y for a
        structurally sound listing binding them, v = x * y."""
        x = 1 if self.ledger.has_product(pid) and self.is_registered(mid, Role.SELLER) else 0
        y = 1 if self._listing_is_sound(pid, mid, lid) else 0
        return ListingValidity(x=x, y=y)

    def _listing_is_sound(self, pid: str, mid: str, lid: str) -> bool:
        listing = self._listing(lid)
        if listing is None:
            return False
        if listing.product_id != pid or listing.seller_id != mid:
            return False
        if listing.cpd.product_id != pid:
            return False
        if not self.cas.exists(listing.dpp_address):
            return False
        try:
            record = self.ledger.get_record(listing.anchor_tid)
        except RecordNotFoundError:
            return False
        return record.product_id == pid

    def search(
        self,
        *,
        material: str | None = None,
        category: str | None = None,
        q: str | None = None,
        page: int = 1,
        page_size: int = 20,
    ) -> SearchPage:
        """Active, valid listings only; filters are conjunctive; newest first."""
        if page < 1:
            raise PaginationError(f"page must be >= 1, got {page}")
        if not 1 <= page_size <= MAX_PAGE_SIZE:
            raise PaginationError(f"page_size must be in [1, {MAX_PAGE_SIZE}], got {page_size}")
        matches: list[Listing] = []
        for raw in self._listings.data["listings"].values():
            listing = Listing.from_dict(raw)
            if listing.status is not ListingStatus.ACTIVE:
                continue
            if material and listing.search_facets.get("material") != material:
                continue
            if category and listing.search_facets.get("category") != category:
                continue
            if q:
                haystack = " ".join(
                    (listing.cpd.summary, listing.product_id, listing.listing_id)
                ).lower()
                if q.lower() not in haystack:
                    continue
            validity = self.listing_validity(listing.product_id, listing.seller_id, listing.listing_id)
            if validity.v != 1:
                continue
            matches.append(listing)
        matches.sort(key=lambda l: l.listing_id)
        matches.sort(key=lambda l: l.listed_at, reverse=True)
        start = (page - 1) * page_size
        return SearchPage(
            items=matches[start : start + page_size],
            page=page,
            page_size=page_size,
            total=len(matches),
        )

    def get_listing(self, listing_id: str) -> Listing:
        listing = self._listing(listing_id)
        if listing is None:
            raise ListingNotFoundError(f"no listing {listing_id}")
        return listing

    def retrieve_dpp(self, listing_id: str) -> dpp_mod.DigitalProductPassport:
        """Fetch and parse the listing's passport; the read self-verifies."""
        listing = self.get_listing(listing_id)
        return dpp_mod.parse_dpp(self.cas.retrieve(listing.dpp_address))

    # -- verification --------------------------------------------------------

    def verify_product(self, pid: str, tid: str) -> VerificationReport:
        """Compare the marketplace's passport and price against the chain.

        Never raises for unknown ids: absence is reported with x_i = 0 and
        the discrepancy message. Message rule: the success string only when
        the references match and prices agree; the DPP-discrepancy string
        whenever v_i == 0; the pricing string when references match but
        prices differ.
        """
        listing = self._listing_for_product(pid)
        marketplace_address = listing.dpp_address if listing else None
        marketplace_price = listing.price if listing else None
        record = None
        try:
            candidate = self.ledger.get_record(tid)
            if candidate.product_id == pid:
                record = candidate
        except RecordNotFoundError:
            record = None
        ledger_address = record.ipfs_ref if record else None
        ledger_price = record.price if record else None

        y_i = 1 if marketplace_address is not None and marketplace_address == ledger_address else 0
        x_i = 1 if listing is not None and y_i == 1 else 0
        if x_i * y_i != 1:
            message = DPP_MISMATCH
        elif marketplace_price != ledger_price:
            message = PRICE_MISMATCH
        else:
            message = VERIFICATION_SUCCESSFUL
        return VerificationReport(
            x_i=x_i,
            y_i=y_i,
            message=message,
            marketplace_dpp_address=marketplace_address,
            ledger_dpp_address=ledger_address,
            marketplace_price=marketplace_price,
            ledger_price=ledger_price,
        )

    def verify_listing(self, listing_id: str) -> VerificationReport:
        listing = self.get_listing(listing_id)
        return self.verify_product(listing.product_id, listing.anchor_tid)

    # -- orders and payment ---------------------------------------------------

    def place_order(self, buyer_id: str, listing_id: str) -> Order:
        if not self.is_registered(buyer_id, Role.BUYER):
            raise UnknownParticipantError(f"buyer {buyer_id} is not registered")
        listing = self._listing(listing_id)
        if listing is None:
            raise ListingNotFoundError(f"no listing {listing_id}")
        if listing.status is not ListingStatus.ACTIVE:
            raise ListingNotActiveError(f"listing {listing_id} is {listing.status.value}")
        if buyer_id == listing.seller_id:
            raise SelfTransferError(f"{buyer_id} cannot buy their own listing")
        report = self.verify_product(listing.product_id, listing.anchor_tid)
        if report.message != VERIFICATION_SUCCESSFUL:
            raise ListingNotVerifiedError(
                f"listing {listing_id} failed verification: {report.message}"
            )
        order = Order(
            order_id=self._next_order_id(),
            buyer_id=buyer_id,
            listing_id=listing_id,
            amount=listing.price,
            status=OrderStatus.PLACED,
            placed_at=canonical.format_utc(self.clock()),
        )
        self._put_order(order)
        return order

    def get_order(self, order_id: str) -> Order:
        order = self._order(order_id)
        if order is None:
            raise OrderNotFoundError(f"no order {order_id}")
        return order

    def pay(self, order_id: str, instrument: str) -> PaymentReceipt:
        """Payment and atomic ownership transfer.

        Charges first, then evaluates the flags: x (buyer registered),
        y (order binds to an Active listing at the ordered amount),
        z (charge succeeded). Transfer happens only when all three hold;
        a charge that cannot complete is refunded and nothing changes.
        After the ownership record lands on the chain the transfer is
        committed: later failures roll forward at reopen.
        """
        order = self._order(order_id)
        if order is None:
            raise OrderNotFoundError(f"no order {order_id}")
        if order.status is not OrderStatus.PLACED:
            raise OrderNotPayableError(f"order {order_id} is {order.status.value}")
        listing = self._listing(order.listing_id)
        lock = self._product_lock(listing.product_id if listing else f"order:{order_id}")
        with lock:
            hit(self.faults, "pay.charge")
            charge = self.payments.charge(
                instrument, order.amount, order.buyer_id,
                listing.seller_id if listing else "",
            )
            z = 1 if charge.ok else 0
            x = 1 if self.is_registered(order.buyer_id, Role.BUYER) else 0
            y = (
                1
                if listing is not None
                and listing.status is ListingStatus.ACTIVE
                and order.amount == listing.price
                else 0
            )
            if x * y * z != 1:
                if charge.ok and charge.payment_tid:
                    self.payments.refund(charge.payment_tid)
                self._put_order(replace(order, status=OrderStatus.FAILED))
                return PaymentReceipt(
                    transaction_id=charge.payment_tid,
                    order_id=order_id,
                    x=x,
                    y=y,
                    z=z,
                    message=PAYMENT_FAILED,
                )
            self._put_order(replace(order, status=OrderStatus.PAID))
            try:
                new_address, ownership_tid, cpd = self._transfer_ownership(order, listing)
            except Exception:
                # The chain never saw the transfer: compensate and restore.
                if charge.payment_tid:
                    self.payments.refund(charge.payment_tid)
                self._put_order(replace(order, status=OrderStatus.PLACED))
                raise
            hit(self.faults, "pay.listing_commit")
            self._put_listing(replace(listing, status=ListingStatus.SOLD))
            self._put_order(replace(order, status=OrderStatus.FULFILLED))
            return PaymentReceipt(
                transaction_id=charge.payment_tid,
                order_id=order_id,
                x=1,
                y=1,
                z=1,
                new_dpp_address=new_address,
                ownership_tid=ownership_tid,
                cpd=cpd,
            )

    def _transfer_ownership(
        self, order: Order, listing: Listing
    ) -> tuple[str, str, CriticalProductDetails]:
        """Passport update -> cas -> ledger. Raising before the ledger append
        keeps the transfer uncommitted."""
        passport = dpp_mod.parse_dpp(self.cas.retrieve(listing.dpp_address))
        updated = dpp_mod.update_dpp_owner(passport, order.buyer_id, self.clock())
        hit(self.faults, "pay.cas_store")
        new_address = self.cas.store(dpp_mod.canonical_bytes(updated))
        cpd = replace(listing.cpd, dpp_version=updated.version, listed_price=order.amount)
        record = LedgerRecord(
            record_kind=RecordKind.OWNERSHIP_TRANSFERRED,
            product_id=listing.product_id,
            ipfs_ref=new_address,
            cpd=cpd,
            price=order.amount,
            owner_id=order.buyer_id,
        )
        try:
            hit(self.faults, "pay.ledger_record")
            ownership_tid = self.ledger.record(record)
        except InjectedFault as exc:
            raise LedgerUnavailableError("ledger append failed during payment") from exc
        return new_address, ownership_tid, cpd

    # -- recovery and audit ----------------------------------------------------

    def _reconcile(self) -> None:
        """Roll the stores forward to agree with the chain after a crash.

        The chain is the commit record: a product anchored but unlisted gets
        its listing recreated; a stale anchor is advanced; a transferred
        product's listing becomes Sold and its paid order completes. Price
        divergence at a current anchor is left alone — that is adversarial
        state for verification to surface, not recovery to heal.
        """
        listings_changed = False
        orders_changed = False
        for pid in self.ledger.product_ids():
            head_tid = self.ledger.latest_tid_for(pid)
            head = self.ledger.get_record(head_tid)
            listing = self._listing_for_product(pid)
            if head.record_kind in (RecordKind.PRODUCT_ADDED, RecordKind.PRODUCT_UPDATED):
                if listing is None:
                    recreated = Listing(
                        listing_id=self._next_listing_id(),
                        product_id=pid,
                        seller_id=head.owner_id,
                        price=head.price,
                        dpp_address=head.ipfs_ref,
                        anchor_tid=head_tid,
                        cpd=head.cpd,
                        status=ListingStatus.ACTIVE,
                        listed_at=canonical.format_utc(self.clock()),
                        search_facets={
                            "material": head.cpd.category,
                            "category": head.cpd.category,
                            "location": "",
                        },
                    )
                    self._listings.data["listings"][recreated.listing_id] = recreated.to_dict()
                    listings_changed = True
                elif listing.anchor_tid != head_tid:
                    advanced = replace(
                        listing,
                        price=head.price,
                        anchor_tid=head_tid,
                        cpd=head.cpd,
                        dpp_address=head.ipfs_ref,
                    )
                    self._listings.data["listings"][listing.listing_id] = advanced.to_dict()
                    listings_changed = True
            else:  # ownership transferred
                if listing is not None and listing.status is ListingStatus.ACTIVE:
                    self._listings.data["listings"][listing.listing_id] = replace(
                        listing, status=ListingStatus.SOLD
                    ).to_dict()
                    listings_changed = True
                if listing is not None:
                    for raw in self._orders.data["orders"].values():
                        if (
                            raw["listing_id"] == listing.listing_id
                            and raw["status"] == OrderStatus.PAID.value
                            and raw["buyer_id"] == head.owner_id
                        ):
                            raw["status"] = OrderStatus.FULFILLED.value
                            orders_changed = True
        if listings_changed:
            self._listings.save()
        if orders_changed:
            self._orders.save()

    def audit(self) -> list[str]:
        """Invariant scan across stores, chain and cas; empty means healthy."""
        problems: list[str] = []
        chain = self.ledger.verify_chain()
        if not chain.valid:
            problems.append(f"chain corrupt at height {chain.corrupt_height}: {chain.detail}")

        active_by_product: dict[str, list[str]] = {}
        for raw in self._listings.data["listings"].values():
            listing = Listing.from_dict(raw)
            if listing.status is ListingStatus.ACTIVE:
                active_by_product.setdefault(listing.product_id, []).append(listing.listing_id)
            if not self.cas.exists(listing.dpp_address):
                problems.append(f"{listing.listing_id}: passport bytes missing from cas")
            try:
                record = self.ledger.get_record(listing.anchor_tid)
            except RecordNotFoundError:
                problems.append(f"{listing.listing_id}: anchor {listing.anchor_tid} unresolvable")
                continue
            if record.product_id != listing.product_id:
                problems.append(f"{listing.listing_id}: anchor belongs to {record.product_id}")
            head = self.ledger.latest_record_for(listing.product_id)
            if listing.status is ListingStatus.ACTIVE:
                if head.record_kind is RecordKind.OWNERSHIP_TRANSFERRED:
                    problems.append(f"{listing.listing_id}: active but product sold on chain")
                if listing.price != record.price:
                    problems.append(
                        f"{listing.listing_id}: price {listing.price} != anchored {record.price}"
                    )
                if listing.dpp_address != record.ipfs_ref:
                    problems.append(
                        f"{listing.listing_id}: passport address diverges from its anchor"
                    )
            if listing.status is ListingStatus.SOLD:
                if head.record_kind is not RecordKind.OWNERSHIP_TRANSFERRED:
                    problems.append(f"{listing.listing_id}: sold but chain head is {head.record_kind.value}")

        for pid, lids in active_by_product.items():
            if len(lids) > 1:
                problems.append(f"product {pid} has {len(lids)} active listings: {sorted(lids)}")

        for pid in self.ledger.product_ids():
            head = self.ledger.latest_record_for(pid)
            listing = self._listing_for_product(pid)
            if head.record_kind in (RecordKind.PRODUCT_ADDED, RecordKind.PRODUCT_UPDATED):
                if listing is None:
                    problems.append(f"product {pid} anchored on chain but unlisted")
                elif listing.status is not ListingStatus.ACTIVE:
                    problems.append(f"product {pid} not transferred but listing {listing.status.value}")
            previous_version = 0
            for tid in self.ledger.product_tids(pid):
                record = self.ledger.get_record(tid)
                try:
                    passport = dpp_mod.parse_dpp(self.cas.retrieve(record.ipfs_ref))
                except Exception as exc:
                    problems.append(f"anchor {tid} for {pid}: passport unreadable ({exc})")
                    continue
                if passport.product_id != pid:
                    problems.append(f"anchor {tid}: passport names {passport.product_id}, not {pid}")
                if passport.version < previous_version:
                    problems.append(f"anchor {tid}: passport version regressed")
                previous_version = passport.version

        for raw in self._orders.data["orders"].values():
            order = Order.from_dict(raw)
            if order.status is OrderStatus.FULFILLED:
                listing = self._listing(order.listing_id)
                if listing is None or listing.status is not ListingStatus.SOLD:
                    problems.append(f"{order.order_id}: fulfilled but listing not sold")
                else:
                    head = self.ledger.latest_record_for(listing.product_id)
                    if (
                        head.record_kind is not RecordKind.OWNERSHIP_TRANSFERRED
                        or head.owner_id != order.buyer_id
                    ):
                        problems.append(f"{order.order_id}: fulfilled but chain disagrees")
        return problems

    def listings(self) -> list[Listing]:
        return [Listing.from_dict(raw) for raw in self._listings.data["listings"].values()]

    def orders(self) -> list[Order]:
        return [Order.from_dict(raw) for raw in self._orders.data["orders"].values()]


def _summary_of(product: dpp_mod.IfcLiteProduct) -> str:
    name = product.name or product.product_id
    return f"{name} ({product.material})" if product.material else name


def _now_perf() -> float:
    return time.perf_counter()


def _record_stage(timer: Callable[[str, float], None] | None, stage: str, started: float) -> None:
    if timer is not None:
        timer(stage, _now_perf() - started)
