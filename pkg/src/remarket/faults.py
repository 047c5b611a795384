"""Fault injection for atomicity and truth-table tests.

A FaultInjector is armed per site name; marketplace operations call
``hit(site)`` at each step boundary and an armed site raises InjectedFault
that many times. Production paths run with no injector at all.
"""

from __future__ import annotations

import threading
from collections import Counter

from .errors import InjectedFault

# Step boundaries instrumented in the marketplace.
ADD_SITES = ("add.cas_store", "add.ledger_record", "add.listing_commit")
PAY_SITES = ("pay.charge", "pay.cas_store", "pay.ledger_record", "pay.listing_commit")
UPDATE_SITES = ("update.ledger_record", "update.listing_commit")


class FaultInjector:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._armed: Counter[str] = Counter()
        self.tripped: list[str] = []

    def arm(self, site: str, times: int = 1) -> None:
        with self._lock:
            self._armed[site] += times

    def hit(self, site: str) -> None:
        with self._lock:
            if self._armed[site] > 0:
                self._armed[site] -= 1
                self.tripped.append(site)
                raise InjectedFault(f"injected fault at {site}")

    def reset(self) -> None:
        with self._lock:
            self._armed.clear()
            self.tripped.clear()


def hit(injector: FaultInjector | None, site: str) -> None:
    if injector is not None:
        injector.hit(site)
