"""Price handling: decimal strings with exactly two fraction digits.

Prices live on the ledger and in listings as strings like "120.00" and are
compared exactly; floats never touch money.
"""

from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation

from .errors import InvalidPriceError

_PRICE_RE = re.compile(r"^\d+\.\d{2}$")


def parse_price(value: str | int | float | Decimal, *, positive: bool = False) -> str:
    """Normalize a price into the canonical "digits.dd" string.

    Accepts ints, Decimals and well-formed strings; floats are rejected to
    keep money exact. Raises InvalidPriceError for negative amounts, more
    than two fraction digits, or garbage.
    """
    if isinstance(value, float):
        raise InvalidPriceError("prices must be strings or Decimals, not floats")
    if isinstance(value, int):
        dec = Decimal(value)
    else:
        try:
            dec = Decimal(str(value).strip())
        except InvalidOperation as exc:
            raise InvalidPriceError(f"unparseable price: {value!r}") from exc
    if dec.is_nan() or dec.is_infinite():
        raise InvalidPriceError(f"non-finite price: {value!r}")
    if dec < 0:
        raise InvalidPriceError(f"negative price: {value!r}")
    if positive and dec == 0:
        raise InvalidPriceError("price must be positive")
    quantized = dec.quantize(Decimal("0.01"))
    if quantized != dec:
        raise InvalidPriceError(f"more than two fraction digits: {value!r}")
    return f"{quantized:.2f}"


def is_price(text: str) -> bool:
    return bool(_PRICE_RE.match(text))
