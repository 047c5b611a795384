from __future__ import annotations

from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from remarket.ccpo import ValueFields
from remarket.dpp import IfcLiteProduct
from remarket.faults import FaultInjector
from remarket.marketplace import Marketplace

FIXTURES = Path(__file__).parent / "fixtures"

# Pinned before the build with `sha256sum tests/fixtures/empty_sections_dpp.json`.
EMPTY_DPP_SHA256 = "19a3355bdbb3112fb21798d4756201ddc7916d62a432f920400ae6b2684d8ba6"


class TickingClock:
    """Deterministic clock advancing one second per call."""

    def __init__(self, start: datetime | None = None):
        self.now = start or datetime(2026, 3, 1, 12, 0, 0, tzinfo=timezone.utc)

    def __call__(self) -> datetime:
        self.now += timedelta(seconds=1)
        return self.now


def make_product(pid: str = "P1", **overrides) -> IfcLiteProduct:
    base = dict(
        product_id=pid,
        name="Oak beam 3m",
        material="timber",
        dimensions={"length": {"value": 3.0, "unit": "m"}},
        manufacturer="Heartwood Ltd",
        year_installed=2012,
        condition_notes="minor surface wear",
        compliance_tags=("EN-338",),
    )
    base.update(overrides)
    return IfcLiteProduct(**base)


def strong_values(**overrides) -> ValueFields:
    base = dict(
        material="timber",
        condition_score=0.95,
        age_years=5.0,
        expected_lifecycle_years=50.0,
        usage_history="roof structure",
    )
    base.update(overrides)
    return ValueFields(**base)


def weak_values() -> ValueFields:
    # 0.6*0.55 + 0.4*(1 - 25/50) - 0.1 = 0.43 -> weak band
    return ValueFields(
        material="timber",
        condition_score=0.55,
        age_years=25.0,
        expected_lifecycle_years=50.0,
        damage_flags=frozenset({"cracked"}),
    )


@pytest.fixture
def clock() -> TickingClock:
    return TickingClock()


@pytest.fixture
def faults() -> FaultInjector:
    return FaultInjector()


@pytest.fixture
def market(tmp_path, clock, faults) -> Marketplace:
    return Marketplace(tmp_path / "data", clock=clock, faults=faults)


@pytest.fixture
def seller(market) -> str:
    market.register_participant("seller-1", "seller")
    return "seller-1"


@pytest.fixture
def buyer(market) -> str:
    market.register_participant("buyer-1", "buyer")
    return "buyer-1"


@pytest.fixture
def listed(market, seller):
    return market.add_product(make_product(), seller, "120.00", strong_values())
