"""Adversarial scenario engine: staged attacks and their detection.

Implements the seller-behavior state machine (init -> sell -> fault ->
verify -> resolve | fraud) and three scenario families: a seller hiding
product faults by swapping the passport under a listing, a buyer making
false defect claims after a sale, and the marketplace itself manipulating
listed prices. Tamper hooks are explicit test-only backdoors that mutate
stores beneath the public API — the staged attacks bypass it by definition.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from datetime import timedelta
from enum import Enum

from . import canonical, dpp as dpp_mod
from .ccpo import ValueFields
from .errors import IllegalTransitionError, RecordValidationError
from .ledger import LedgerRecord, RecordKind
from .marketplace import (
    Listing,
    Marketplace,
    PAYMENT_FAILED,
    VERIFICATION_SUCCESSFUL,
)


class SellerState(str, Enum):
    P_INIT = "P_init"
    P_SELL = "P_sell"
    P_FAULT = "P_fault"
    P_VERIFY = "P_verify"
    P_RESOLVE = "P_resolve"
    P_FRAUD = "P_fraud"


class SellerEvent(str, Enum):
    LIST_DPP = "list_dpp"
    DISCOVER_FAULT = "discover_fault"
    VERIFY_DPP = "verify_dpp"
    MATCH = "match"
    MISMATCH = "mismatch"


_TRANSITIONS: dict[tuple[SellerState, SellerEvent], SellerState] = {
    (SellerState.P_INIT, SellerEvent.LIST_DPP): SellerState.P_SELL,
    (SellerState.P_SELL, SellerEvent.DISCOVER_FAULT): SellerState.P_FAULT,
    (SellerState.P_FAULT, SellerEvent.VERIFY_DPP): SellerState.P_VERIFY,
    (SellerState.P_VERIFY, SellerEvent.MATCH): SellerState.P_RESOLVE,
    (SellerState.P_VERIFY, SellerEvent.MISMATCH): SellerState.P_FRAUD,
}


def seller_machine_step(state: SellerState, event: SellerEvent) -> SellerState:
    """Apply one transition; anything outside the five defined edges is illegal."""
    key = (SellerState(state), SellerEvent(event))
    if key not in _TRANSITIONS:
        raise IllegalTransitionError(f"no edge for event {key[1].value} in state {key[0].value}")
    return _TRANSITIONS[key]


@dataclass(frozen=True)
class TraceEntry:
    kind: str  # "transition" | "flag"
    at: str
    state_from: str | None = None
    event: str | None = None
    state_to: str | None = None
    label: str | None = None

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "at": self.at}
        if self.kind == "transition":
            out.update(state_from=self.state_from, event=self.event, state_to=self.state_to)
        else:
            out["label"] = self.label
        return out


@dataclass
class ScenarioOutcome:
    scenario: str
    final_state: SellerState
    detection: bool
    trace: list[TraceEntry] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "final_state": self.final_state.value,
            "detection": self.detection,
            "trace": [entry.to_dict() for entry in self.trace],
            "details": dict(self.details),
        }


def replay_trace(trace: list[TraceEntry]) -> SellerState:
    """Re-run a recorded trace against a fresh machine."""
    state = SellerState.P_INIT
    for entry in trace:
        if entry.kind != "transition":
            continue
        if entry.state_from != state.value:
            raise IllegalTransitionError(
                f"trace expects state {entry.state_from}, machine is in {state.value}"
            )
        state = seller_machine_step(state, SellerEvent(entry.event))
        if state.value != entry.state_to:
            raise IllegalTransitionError("recorded transition disagrees with the machine")
    return state


class _MachineRun:
    def __init__(self) -> None:
        self.state = SellerState.P_INIT
        self.trace: list[TraceEntry] = []

    def step(self, event: SellerEvent) -> SellerState:
        before = self.state
        self.state = seller_machine_step(before, event)
        self.trace.append(
            TraceEntry(
                kind="transition",
                at=canonical.format_utc(canonical.utc_now()),
                state_from=before.value,
                event=event.value,
                state_to=self.state.value,
            )
        )
        return self.state

    def flag(self, label: str) -> None:
        self.trace.append(
            TraceEntry(kind="flag", at=canonical.format_utc(canonical.utc_now()), label=label)
        )


class TamperKit:
    """Test-only backdoors mutating stores beneath the public API."""

    def __init__(self, market: Marketplace):
        self.market = market

    def repoint_listing_dpp(self, listing_id: str, note: str = "condition: like new") -> str:
        """Swap the listing's passport for an embellished copy without any
        ledger record. Returns the rogue address."""
        listing = self.market.get_listing(listing_id)
        passport = dpp_mod.parse_dpp(self.market.cas.retrieve(listing.dpp_address))
        sections = {name: dict(content) for name, content in passport.sections.items()}
        sections["maintenance_repair"] = {"condition_notes": note}
        doctored = dpp_mod.DigitalProductPassport(
            product_id=passport.product_id,
            version=passport.version,
            sections=sections,
            attachments=passport.attachments,
            ownership=passport.ownership,
            created_at=passport.created_at,
            updated_at=passport.updated_at,
        )
        address = self.market.cas.store(dpp_mod.canonical_bytes(doctored))
        raw = self.market._listings.data["listings"][listing_id]
        raw["dpp_address"] = address
        self.market._listings.save()
        return address

    def set_listing_price(self, listing_id: str, price: str) -> None:
        raw = self.market._listings.data["listings"][listing_id]
        raw["price"] = price
        self.market._listings.save()

    def remove_participant(self, participant_id: str) -> None:
        self.market._participants.data["participants"].pop(participant_id, None)
        self.market._participants.save()

    def corrupt_order_listing(self, order_id: str, bogus_listing_id: str = "L-999999") -> None:
        raw = self.market._orders.data["orders"][order_id]
        raw["listing_id"] = bogus_listing_id
        self.market._orders.save()


# -- fixtures ----------------------------------------------------------------

_STRONG_VALUES = ValueFields(
    material="timber",
    condition_score=0.95,
    age_years=4.0,
    expected_lifecycle_years=40.0,
    usage_history="internal partition frame",
)


def _stage_listing(market: Marketplace, pid: str = "P-SCN-1", price: str = "120.00") -> Listing:
    if not market.is_registered("seller-1", "seller"):
        market.register_participant("seller-1", "seller")
    product = dpp_mod.IfcLiteProduct(
        product_id=pid,
        name="Oak beam",
        material="timber",
        manufacturer="Heartwood Ltd",
        year_installed=2015,
        condition_notes="minor surface wear",
    )
    return market.add_product(product, "seller-1", price, _STRONG_VALUES)


def _stage_sale(market: Marketplace, pid: str = "P-SCN-1") -> tuple[Listing, str]:
    """Stage a completed sale; returns the listing and the sale's ledger tid."""
    listing = _stage_listing(market, pid=pid)
    market.register_participant("buyer-1", "buyer")
    order = market.place_order("buyer-1", listing.listing_id)
    receipt = market.pay(order.order_id, "OK-card")
    if receipt.t_status != 1:
        raise RecordValidationError(f"sale fixture failed: {receipt.message or PAYMENT_FAILED}")
    return listing, receipt.ownership_tid


# -- arbitration --------------------------------------------------------------

def arbitrate_buyer_claim(market: Marketplace, sale_tid: str) -> dict:
    """Re-run the provenance logic against the anchor current at the claimed
    sale, selected through the sale record's prev_record pointer (never the
    chain's latest anchor).

    A transfer must carry the anchored content forward verbatim, so the
    claim is upheld exactly when the sold passport's sections or attachments
    diverge from the pre-sale anchored passport.
    """
    sale = market.ledger.get_record(sale_tid)
    if sale.record_kind is not RecordKind.OWNERSHIP_TRANSFERRED:
        raise RecordValidationError(f"{sale_tid} is not an ownership transfer")
    anchor = market.ledger.get_record(sale.prev_record)
    sold = dpp_mod.parse_dpp(market.cas.retrieve(sale.ipfs_ref))
    anchored = dpp_mod.parse_dpp(market.cas.retrieve(anchor.ipfs_ref))
    upheld = (
        sold.product_id != anchored.product_id
        or sold.sections != anchored.sections
        or sold.attachments != anchored.attachments
    )
    return {
        "upheld": upheld,
        "sale_tid": sale_tid,
        "anchor_tid": sale.prev_record,
        "sold_dpp_address": sale.ipfs_ref,
        "anchored_dpp_address": anchor.ipfs_ref,
    }


# -- scenarios ----------------------------------------------------------------

def run_malicious_seller_scenario(market: Marketplace, variant: str = "tamper") -> ScenarioOutcome:
    """Seller lists honestly, then (depending on variant) swaps the passport
    under the listing. Buyer-side verification decides resolve vs fraud.

    Variants: "tamper" (swap without re-anchoring), "control" (no tamper),
    "reanchor" (swap, then converge again through the lawful update path).
    """
    run = _MachineRun()
    listing = _stage_listing(market)
    run.step(SellerEvent.LIST_DPP)

    if variant in ("tamper", "reanchor"):
        kit = TamperKit(market)
        rogue_address = kit.repoint_listing_dpp(listing.listing_id)
        if variant == "reanchor":
            market.update_listing_passport(
                listing.listing_id, listing.seller_id, market.cas.retrieve(rogue_address)
            )
    elif variant != "control":
        raise RecordValidationError(f"unknown seller scenario variant: {variant}")

    run.step(SellerEvent.DISCOVER_FAULT)
    run.step(SellerEvent.VERIFY_DPP)
    current = market.get_listing(listing.listing_id)
    report = market.verify_product(current.product_id, current.anchor_tid)
    matched = report.message == VERIFICATION_SUCCESSFUL
    run.step(SellerEvent.MATCH if matched else SellerEvent.MISMATCH)
    if run.state is SellerState.P_FRAUD:
        run.flag("breach of trust: passport altered without a chain record")
    return ScenarioOutcome(
        scenario=f"seller/{variant}",
        final_state=run.state,
        detection=run.state is SellerState.P_FRAUD,
        trace=run.trace,
        details={"message": report.message, "report": report.to_dict()},
    )


def run_malicious_buyer_scenario(market: Marketplace, variant: str = "false_claim") -> ScenarioOutcome:
    """Buyer claims the delivered product differs from the listing.

    Variants: "false_claim" (honest sale, claim refuted), "true_claim"
    (seller swapped the passport between order and payment, claim upheld),
    "stale_anchor" (two transfers exist; arbitration must use the anchor
    current at the claimed sale, not the latest).
    """
    run = _MachineRun()
    if variant == "false_claim":
        _, sale_tid = _stage_sale(market)
    elif variant == "true_claim":
        listing = _stage_listing(market)
        market.register_participant("buyer-1", "buyer")
        order = market.place_order("buyer-1", listing.listing_id)
        TamperKit(market).repoint_listing_dpp(listing.listing_id, note="flaws concealed")
        receipt = market.pay(order.order_id, "OK-card")
        sale_tid = receipt.ownership_tid
    elif variant == "stale_anchor":
        _, sale_tid = _stage_sale(market)
        _stage_second_transfer(market, sale_tid, next_owner="buyer-2")
    else:
        raise RecordValidationError(f"unknown buyer scenario variant: {variant}")

    run.step(SellerEvent.LIST_DPP)
    run.step(SellerEvent.DISCOVER_FAULT)
    run.step(SellerEvent.VERIFY_DPP)
    verdict = arbitrate_buyer_claim(market, sale_tid)
    run.step(SellerEvent.MISMATCH if verdict["upheld"] else SellerEvent.MATCH)
    if run.state is SellerState.P_FRAUD:
        run.flag("sold passport diverges from its sale-time anchor")
    else:
        run.flag("claim refuted: sold passport matches its sale-time anchor")
    return ScenarioOutcome(
        scenario=f"buyer/{variant}",
        final_state=run.state,
        detection=run.state is SellerState.P_FRAUD,
        trace=run.trace,
        details=verdict,
    )


def _stage_second_transfer(market: Marketplace, sale_tid: str, next_owner: str) -> str:
    """Extend a sold product's chain with a further legitimate transfer."""
    sale = market.ledger.get_record(sale_tid)
    passport = dpp_mod.parse_dpp(market.cas.retrieve(sale.ipfs_ref))
    later = canonical.parse_utc(passport.updated_at) + timedelta(seconds=1)
    onward = dpp_mod.update_dpp_owner(passport, next_owner, later)
    address = market.cas.store(dpp_mod.canonical_bytes(onward))
    record = LedgerRecord(
        record_kind=RecordKind.OWNERSHIP_TRANSFERRED,
        product_id=sale.product_id,
        ipfs_ref=address,
        cpd=sale.cpd,
        price=sale.price,
        owner_id=next_owner,
    )
    return market.ledger.record(record)


def run_malicious_marketplace_scenario(
    market: Marketplace, variant: str = "tamper"
) -> ScenarioOutcome:
    """Marketplace edits a listed price directly; buyers compare against the
    chain-anchored price.

    Variants: "tamper" (inflate), "undercut" (lower — inequality in either
    direction detects), "lawful_update" (seller updates through the API,
    chain first, so prices re-converge).
    """
    run = _MachineRun()
    listing = _stage_listing(market)
    run.step(SellerEvent.LIST_DPP)

    if variant == "tamper":
        TamperKit(market).set_listing_price(listing.listing_id, "170.00")
    elif variant == "undercut":
        TamperKit(market).set_listing_price(listing.listing_id, "80.00")
    elif variant == "lawful_update":
        market.update_price(listing.listing_id, listing.seller_id, "150.00")
    else:
        raise RecordValidationError(f"unknown marketplace scenario variant: {variant}")

    run.step(SellerEvent.DISCOVER_FAULT)
    run.step(SellerEvent.VERIFY_DPP)
    current = market.get_listing(listing.listing_id)
    report = market.verify_product(current.product_id, current.anchor_tid)
    matched = report.message == VERIFICATION_SUCCESSFUL
    run.step(SellerEvent.MATCH if matched else SellerEvent.MISMATCH)
    if run.state is SellerState.P_FRAUD:
        run.flag("alert raised: listed price diverges from chain; penalties pending")
    return ScenarioOutcome(
        scenario=f"marketplace/{variant}",
        final_state=run.state,
        detection=run.state is SellerState.P_FRAUD,
        trace=run.trace,
        details={
            "message": report.message,
            "marketplace_price": report.marketplace_price,
            "ledger_price": report.ledger_price,
        },
    )


# -- suites -------------------------------------------------------------------

# (runner, variant, detection expected)
SCENARIO_SUITE: tuple[tuple[str, str, bool], ...] = (
    ("seller", "tamper", True),
    ("seller", "control", False),
    ("seller", "reanchor", False),
    ("buyer", "false_claim", False),
    ("buyer", "true_claim", True),
    ("buyer", "stale_anchor", False),
    ("marketplace", "tamper", True),
    ("marketplace", "undercut", True),
    ("marketplace", "lawful_update", False),
)

_RUNNERS = {
    "seller": run_malicious_seller_scenario,
    "buyer": run_malicious_buyer_scenario,
    "marketplace": run_malicious_marketplace_scenario,
}


def run_scenario(market: Marketplace, family: str, variant: str) -> ScenarioOutcome:
    try:
        runner = _RUNNERS[family]
    except KeyError:
        raise RecordValidationError(f"unknown scenario family: {family}") from None
    return runner(market, variant=variant)


def honest_control_run(market: Marketplace, rng: random.Random) -> list[str]:
    """One randomized honest run: random products, prices and legal updates,
    optionally a sale. Returns the detections observed (should be empty)."""
    detections: list[str] = []
    market.register_participant("seller-1", "seller")
    market.register_participant("buyer-1", "buyer")
    listings: list[Listing] = []
    for index in range(rng.randint(1, 3)):
        pid = f"P-HONEST-{rng.randrange(10**9)}-{index}"
        product = dpp_mod.IfcLiteProduct(
            product_id=pid,
            name=rng.choice(["Steel truss", "Brick pallet", "Glu-lam beam", "Door set"]),
            material=rng.choice(["steel", "brick", "timber", "aluminium"]),
            year_installed=rng.randint(1990, 2020),
        )
        values = ValueFields(
            material=product.material,
            condition_score=rng.uniform(0.85, 1.0),
            age_years=rng.uniform(0.0, 5.0),
            expected_lifecycle_years=rng.uniform(30.0, 80.0),
        )
        price = f"{rng.randint(10, 900)}.{rng.randint(0, 99):02d}"
        listings.append(market.add_product(product, "seller-1", price, values))
    for listing in listings:
        if rng.random() < 0.5:
            listing = market.update_price(
                listing.listing_id, "seller-1", f"{rng.randint(10, 900)}.00"
            )
        current = market.get_listing(listing.listing_id)
        report = market.verify_product(current.product_id, current.anchor_tid)
        if report.message != VERIFICATION_SUCCESSFUL:
            detections.append(f"{listing.listing_id}: {report.message}")
    if listings and rng.random() < 0.5:
        chosen = market.get_listing(rng.choice(listings).listing_id)
        order = market.place_order("buyer-1", chosen.listing_id)
        receipt = market.pay(order.order_id, "OK-card")
        if receipt.t_status != 1:
            detections.append(f"{chosen.listing_id}: honest sale failed")
        else:
            verdict = arbitrate_buyer_claim(market, receipt.ownership_tid)
            if verdict["upheld"]:
                detections.append(f"{chosen.listing_id}: honest sale arbitration upheld a claim")
    return detections
