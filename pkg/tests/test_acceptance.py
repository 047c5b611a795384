"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest -v -s tests/test_acceptance.py` to see the per-criterion
lines. Runtime budgets are asserted, not aspirational.
"""

from __future__ import annotations

import itertools
import random
import time
from contextlib import contextmanager

import pytest

from remarket import ccpo
from remarket.cas import ContentStore
from remarket.errors import InjectedFault, IntegrityError, LedgerUnavailableError
from remarket.faults import ADD_SITES, PAY_SITES, FaultInjector
from remarket.fraud import TamperKit, honest_control_run, run_scenario
from remarket.ledger import RecordKind
from remarket.marketplace import (
    DPP_MISMATCH,
    LEDGER_RETRIES,
    Marketplace,
    ListingStatus,
    OrderStatus,
    PAYMENT_FAILED,
    PRICE_MISMATCH,
    VERIFICATION_SUCCESSFUL,
)
from remarket.service import ServiceConfig, build_marketplace, run_load

from conftest import TickingClock, make_product, strong_values


@contextmanager
def criterion(name: str, budget_seconds: float):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    elapsed = time.perf_counter() - started
    if elapsed > budget_seconds:
        print(f"ACCEPTANCE {name}: FAIL (took {elapsed:.2f}s > {budget_seconds:.0f}s)")
        raise AssertionError(f"{name} exceeded its {budget_seconds:.0f}s budget: {elapsed:.2f}s")
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.2f}s)")


def _fixture(tmp_path, name: str, faults: FaultInjector | None = None) -> Marketplace:
    market = Marketplace(tmp_path / name, clock=TickingClock(), faults=faults)
    market.register_participant("seller-1", "seller")
    market.register_participant("buyer-1", "buyer")
    return market


def test_criterion_reuse_gating_boundaries(tmp_path):
    with criterion("reuse-category boundaries (Eq 1-3 suite)", 1.0):
        thresholds = ccpo.ReuseThresholds(theta_strong=0.70, theta_weak=0.40)
        epsilon = 1e-9
        boundary_scores = [
            thresholds.theta_weak - epsilon,
            thresholds.theta_weak,
            thresholds.theta_strong - epsilon,
            thresholds.theta_strong,
            1.0,
        ]
        expected = [
            ccpo.ReuseCategory.NONE,
            ccpo.ReuseCategory.WEAK,
            ccpo.ReuseCategory.WEAK,
            ccpo.ReuseCategory.STRONG,
            ccpo.ReuseCategory.STRONG,
        ]
        observed = [ccpo.categorize_score(s, thresholds) for s in boundary_scores]
        assert observed == expected, observed

        for category in ccpo.ReuseCategory:
            lists = ccpo.listing_status(category)
            assert lists in (0, 1)
            assert (lists == 1) == (category is ccpo.ReuseCategory.STRONG)
            assert (lists == 1) == (ccpo.disposition(category) is ccpo.Disposition.LIST)
        assert ccpo.disposition(ccpo.ReuseCategory.WEAK) is ccpo.Disposition.REPAIR
        assert (
            ccpo.disposition(ccpo.ReuseCategory.NONE) is ccpo.Disposition.RECYCLE_OR_LANDFILL
        )


def test_criterion_flag_truth_tables(tmp_path):
    with criterion("listing and payment flag truth tables (Eq 4-5, 9-12)", 5.0):
        # Listing flags: all four (X, Y) combinations, V == X*Y.
        market = _fixture(tmp_path, "flags-listing")
        listing = market.add_product(make_product(), "seller-1", "120.00", strong_values())
        pid, mid, lid = listing.product_id, "seller-1", listing.listing_id
        kit = TamperKit(market)

        observed = {}
        v = market.listing_validity(pid, mid, lid)
        observed[(1, 1)] = v
        v = market.listing_validity(pid, mid, "L-999999")
        observed[(1, 0)] = v
        kit.remove_participant(mid)
        observed[(0, 1)] = market.listing_validity(pid, mid, lid)
        observed[(0, 0)] = market.listing_validity(pid, mid, "L-999999")
        for (x, y), validity in observed.items():
            assert (validity.x, validity.y) == (x, y), (x, y, validity)
            assert validity.v == x * y

        # Payment flags: all eight (X, Y, Z) combinations, T_status == X*Y*Z.
        for x, y, z in itertools.product((0, 1), repeat=3):
            market = _fixture(tmp_path, f"flags-pay-{x}{y}{z}")
            listing = market.add_product(make_product(), "seller-1", "120.00", strong_values())
            order = market.place_order("buyer-1", listing.listing_id)
            kit = TamperKit(market)
            if not x:
                kit.remove_participant("buyer-1")
            if not y:
                kit.corrupt_order_listing(order.order_id)
            receipt = market.pay(order.order_id, "OK-tok" if z else "FAIL-tok")
            assert (receipt.x, receipt.y, receipt.z) == (x, y, z)
            assert receipt.t_status == x * y * z


def test_criterion_message_fidelity(tmp_path):
    with criterion("verification and payment message fidelity (Alg 2-3)", 5.0):
        market = _fixture(tmp_path, "messages")
        listing = market.add_product(make_product(), "seller-1", "120.00", strong_values())
        pid, tid, lid = listing.product_id, listing.anchor_tid, listing.listing_id

        honest = market.verify_product(pid, tid)
        assert honest.message == "Verification successful."
        assert honest.message == VERIFICATION_SUCCESSFUL

        kit = TamperKit(market)
        kit.set_listing_price(lid, "199.00")
        assert market.verify_product(pid, tid).message == "Verification failed: Pricing does not match."
        kit.set_listing_price(lid, "120.00")

        kit.repoint_listing_dpp(lid)
        assert market.verify_product(pid, tid).message == "Discrepancy found: DPP does not match."

        market2 = _fixture(tmp_path, "messages-pay")
        listing2 = market2.add_product(make_product(), "seller-1", "100.00", strong_values())
        order = market2.place_order("buyer-1", listing2.listing_id)
        declined = market2.pay(order.order_id, "FAIL-card")
        assert declined.message == "Payment failed."
        assert declined.message == PAYMENT_FAILED


def test_criterion_fraud_detection(tmp_path):
    with criterion("fraud detection: 3 tamper hooks, 100 honest runs", 30.0):
        # The three tamper hooks, each with its clean counterpart.
        expectations = [
            ("seller", "tamper", True),       # passport swap hook
            ("seller", "control", False),
            ("buyer", "true_claim", True),    # pre-sale passport swap hook
            ("buyer", "false_claim", False),
            ("marketplace", "tamper", True),  # price edit hook
            ("marketplace", "lawful_update", False),
        ]
        for family, variant, expected in expectations:
            market = Marketplace(tmp_path / f"fraud-{family}-{variant}", clock=TickingClock())
            outcome = run_scenario(market, family, variant)
            assert outcome.detection is expected, (family, variant, outcome.to_dict())

        # Zero false positives across 100 randomized honest runs.
        rng = random.Random(20260809)
        false_positives = []
        for index in range(100):
            market = Marketplace(tmp_path / f"honest-{index}", clock=TickingClock())
            false_positives.extend(honest_control_run(market, rng))
        assert false_positives == [], false_positives


def test_criterion_load_shape(tmp_path):
    with criterion("workload shape: 20 and 100 products end to end", 60.0):
        for n in (20, 100):
            config = ServiceConfig(data_dir=tmp_path / f"load-{n}")
            started = time.perf_counter()
            report = run_load(n, config)
            elapsed = time.perf_counter() - started
            assert report.successes == n
            assert report.failures == 0
            market = build_marketplace(config)
            assert market.ledger.verify_chain().valid
            added = sum(
                1
                for _, record in market.ledger.records_with_tids()
                if record.record_kind is RecordKind.PRODUCT_ADDED
            )
            listings = market.listings()
            anchored = {l.dpp_address for l in listings}
            assert len(listings) == added == len(anchored) == n
            assert market.audit() == []
            if n == 100:
                assert elapsed < 60.0, f"n=100 took {elapsed:.1f}s"


def test_criterion_durability_atomicity(tmp_path):
    with criterion("durability/atomicity at every step boundary", 30.0):
        for site in ADD_SITES:
            faults = FaultInjector()
            market = _fixture(tmp_path, f"add-{site}", faults=faults)
            times = LEDGER_RETRIES if site == "add.ledger_record" else 1
            faults.arm(site, times=times)
            with pytest.raises((InjectedFault, LedgerUnavailableError)):
                market.add_product(make_product(), "seller-1", "120.00", strong_values())
            reopened = Marketplace(market.data_dir, clock=TickingClock())
            assert reopened.audit() == [], (site, reopened.audit())
            applied = any(l.product_id == "P1" for l in reopened.listings())
            anchored = reopened.ledger.has_product("P1")
            assert applied == anchored  # fully applied or fully reverted
            assert applied == (site == "add.listing_commit")

        for site in PAY_SITES:
            faults = FaultInjector()
            market = _fixture(tmp_path, f"pay-{site}", faults=faults)
            listing = market.add_product(make_product(), "seller-1", "120.00", strong_values())
            order = market.place_order("buyer-1", listing.listing_id)
            faults.arm(site)
            with pytest.raises((InjectedFault, LedgerUnavailableError)):
                market.pay(order.order_id, "OK-card")
            reopened = Marketplace(market.data_dir, clock=TickingClock())
            assert reopened.audit() == [], (site, reopened.audit())
            relisted = reopened.get_listing(listing.listing_id)
            reordered = reopened.get_order(order.order_id)
            transferred = (
                reopened.ledger.latest_record_for("P1").record_kind
                is RecordKind.OWNERSHIP_TRANSFERRED
            )
            if site == "pay.listing_commit":
                assert transferred
                assert relisted.status is ListingStatus.SOLD
                assert reordered.status is OrderStatus.FULFILLED
            else:
                assert not transferred
                assert relisted.status is ListingStatus.ACTIVE
                assert reordered.status is OrderStatus.PLACED


def test_criterion_tamper_evidence(tmp_path):
    with criterion("cas/ledger tamper evidence: 100 randomized byte flips", 30.0):
        rng = random.Random(20260615)
        detected = 0
        trials = 100
        for trial in range(trials):
            root = tmp_path / f"tamper-{trial}"
            if rng.random() < 0.5:
                store = ContentStore(root / "cas")
                address = store.store(f"object {trial} {rng.random()}".encode())
                path = next(
                    p for p in (root / "cas" / "objects").glob("*/*/*") if p.name == address
                )
                raw = bytearray(path.read_bytes())
                raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
                path.write_bytes(bytes(raw))
                try:
                    store.retrieve(address)
                except IntegrityError:
                    detected += 1
            else:
                market = Marketplace(root, clock=TickingClock())
                market.register_participant("seller-1", "seller")
                for index in range(rng.randint(1, 3)):
                    market.add_product(
                        make_product(pid=f"P-{trial}-{index}"),
                        "seller-1",
                        "100.00",
                        strong_values(),
                    )
                chain_path = root / "chain.log"
                raw = bytearray(chain_path.read_bytes())
                raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
                chain_path.write_bytes(bytes(raw))
                if not market.ledger.verify_chain().valid:
                    detected += 1
        assert detected == trials, f"detected {detected}/{trials}"
