"""Exception hierarchy shared by every subsystem.

Each error carries a stable machine-readable ``code`` (used verbatim in API
error bodies) and an HTTP status for the server layer.
"""

from __future__ import annotations


class RemarketError(Exception):
    """Base class for all domain errors."""

    code = "error"
    http_status = 400


# --- content store ---------------------------------------------------------

class EmptyContentError(RemarketError):
    code = "empty_content"
    http_status = 422


class ObjectNotFoundError(RemarketError):
    code = "object_not_found"
    http_status = 404


class IntegrityError(RemarketError):
    """Stored bytes no longer hash to their address: on-disk tampering."""

    code = "integrity_failure"
    http_status = 500


class CollisionError(IntegrityError):
    """Two distinct contents claim one address. Fatal by contract."""

    code = "hash_collision"


# --- ledger ----------------------------------------------------------------

class DuplicateProductError(RemarketError):
    code = "duplicate_product"
    http_status = 409


class UnknownProductError(RemarketError):
    code = "unknown_product"
    http_status = 404


class RecordValidationError(RemarketError):
    code = "invalid_record"
    http_status = 422


class RecordNotFoundError(RemarketError):
    code = "record_not_found"
    http_status = 404


class ChainCorruptionError(RemarketError):
    """Persisted chain data below the committed head is unreadable."""

    code = "chain_corruption"
    http_status = 500


class LedgerUnavailableError(RemarketError):
    code = "ledger_unavailable"
    http_status = 503


# --- ccpo / dpp ------------------------------------------------------------

class InvalidValueFieldsError(RemarketError):
    code = "invalid_value_fields"
    http_status = 422


class MalformedProductError(RemarketError):
    code = "malformed_product"
    http_status = 422


class MalformedPassportError(RemarketError):
    code = "malformed_passport"
    http_status = 422


class SelfTransferError(RemarketError):
    code = "self_transfer"
    http_status = 409


# --- marketplace -----------------------------------------------------------

class NotStrongReuseError(RemarketError):
    code = "not_strong_reuse"
    http_status = 422


class InvalidPriceError(RemarketError):
    code = "invalid_price"
    http_status = 422


class UnknownParticipantError(RemarketError):
    code = "unknown_participant"
    http_status = 404


class DuplicateParticipantError(RemarketError):
    code = "duplicate_participant"
    http_status = 409


class ListingNotFoundError(RemarketError):
    code = "listing_not_found"
    http_status = 404


class ListingNotActiveError(RemarketError):
    code = "listing_not_active"
    http_status = 409


class ListingNotVerifiedError(RemarketError):
    code = "listing_not_verified"
    http_status = 409


class OrderNotFoundError(RemarketError):
    code = "order_not_found"
    http_status = 404


class OrderNotPayableError(RemarketError):
    code = "order_not_payable"
    http_status = 409


class PaginationError(RemarketError):
    code = "invalid_pagination"
    http_status = 422


# --- fraud / faults --------------------------------------------------------

class IllegalTransitionError(RemarketError):
    code = "illegal_transition"
    http_status = 409


class InjectedFault(RemarketError):
    """Raised by the fault injector at an armed site (test configurations)."""

    code = "injected_fault"
    http_status = 500


class ConfigError(RemarketError):
    code = "invalid_config"
    http_status = 422
