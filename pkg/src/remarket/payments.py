"""Pluggable payment provider with a deterministic simulator.

Real gateways are out of scope; the simulator makes the payment truth table
fully testable: instruments starting "OK-" are charged successfully,
anything else declines. Refund is the compensating action for charges whose
transaction cannot complete.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Protocol


@dataclass(frozen=True)
class ChargeResult:
    ok: bool
    payment_tid: str | None = None


class PaymentProvider(Protocol):
    def charge(self, instrument: str, amount: str, buyer_id: str, seller_id: str) -> ChargeResult:
        ...

    def refund(self, payment_tid: str) -> None:
        ...


class SimulatedPaymentProvider:
    """Deterministic provider: "OK-..." tokens succeed, everything else declines."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._seq = 0
        self.refunded: list[str] = []

    def charge(self, instrument: str, amount: str, buyer_id: str, seller_id: str) -> ChargeResult:
        if not instrument.startswith("OK-"):
            return ChargeResult(ok=False)
        with self._lock:
            self._seq += 1
            return ChargeResult(ok=True, payment_tid=f"PAY-{self._seq:06d}")

    def refund(self, payment_tid: str) -> None:
        with self._lock:
            self.refunded.append(payment_tid)
