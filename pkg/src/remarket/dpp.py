"""Digital Product Passport model, canonical byte form and versioning.

The passport is a versioned dossier over seven fixed sections; its canonical
bytes (sorted-key UTF-8 JSON, empty sections serialized explicitly) are what
get content-addressed, so equal passports always hash to equal addresses no
matter how they were built. Products enter as IFC-lite records: a simplified
structured subset standing in for real IFC files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from . import canonical
from .cas import is_address
from .errors import MalformedPassportError, MalformedProductError, SelfTransferError

SECTION_NAMES = (
    "identification",
    "material_composition",
    "design_manufacturing",
    "usage_information",
    "maintenance_repair",
    "regulatory_compliance",
    "end_of_life",
)

_IFC_LITE_FIELDS = {
    "product_id",
    "name",
    "material",
    "dimensions",
    "manufacturer",
    "year_installed",
    "condition_notes",
    "compliance_tags",
}


@dataclass(frozen=True)
class IfcLiteProduct:
    """One product entry from an IFC-lite input file."""

    product_id: str
    name: str = ""
    material: str = ""
    dimensions: dict[str, dict] = field(default_factory=dict)
    manufacturer: str = ""
    year_installed: int | None = None
    condition_notes: str = ""
    compliance_tags: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, data: dict) -> "IfcLiteProduct":
        if not isinstance(data, dict):
            raise MalformedProductError(f"product entry must be an object, got {type(data).__name__}")
        unknown = set(data) - _IFC_LITE_FIELDS
        if unknown:
            raise MalformedProductError(f"unknown product fields: {sorted(unknown)}")
        product_id = str(data.get("product_id", "")).strip()
        if not product_id:
            raise MalformedProductError("missing product_id")
        dimensions = data.get("dimensions", {})
        if not isinstance(dimensions, dict):
            raise MalformedProductError("dimensions must be a map of name -> {value, unit}")
        for dim_name, dim in dimensions.items():
            if not isinstance(dim, dict) or not isinstance(dim.get("value"), (int, float)):
                raise MalformedProductError(f"dimension {dim_name!r} needs a numeric value")
        year = data.get("year_installed")
        if year is not None:
            try:
                year = int(year)
            except (TypeError, ValueError) as exc:
                raise MalformedProductError("year_installed must be an integer") from exc
        return cls(
            product_id=product_id,
            name=str(data.get("name", "")),
            material=str(data.get("material", "")),
            dimensions={k: dict(v) for k, v in dimensions.items()},
            manufacturer=str(data.get("manufacturer", "")),
            year_installed=year,
            condition_notes=str(data.get("condition_notes", "")),
            compliance_tags=tuple(str(t) for t in data.get("compliance_tags", ())),
        )


def load_ifc_lite(path: str | Path) -> list[IfcLiteProduct]:
    """Load an IFC-lite file: JSON with a top-level "products" list.

    Product ids must be unique within the file.
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedProductError(f"cannot read IFC-lite file {path}: {exc}") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("products"), list):
        raise MalformedProductError('IFC-lite file must be an object with a "products" list')
    products = [IfcLiteProduct.from_dict(entry) for entry in payload["products"]]
    seen: set[str] = set()
    for product in products:
        if product.product_id in seen:
            raise MalformedProductError(f"duplicate product_id in input file: {product.product_id}")
        seen.add(product.product_id)
    return products


@dataclass(frozen=True)
class OwnershipEntry:
    owner_id: str
    at: str  # RFC-3339 UTC

    def to_dict(self) -> dict:
        return {"owner_id": self.owner_id, "at": self.at}


@dataclass(frozen=True)
class Ownership:
    current: str
    history: tuple[OwnershipEntry, ...]

    def to_dict(self) -> dict:
        return {"current": self.current, "history": [e.to_dict() for e in self.history]}


@dataclass(frozen=True)
class DigitalProductPassport:
    product_id: str
    version: int
    sections: dict[str, dict]
    attachments: tuple[str, ...]
    ownership: Ownership
    created_at: str
    updated_at: str

    def to_dict(self) -> dict:
        return {
            "product_id": self.product_id,
            "version": self.version,
            "sections": {name: dict(self.sections[name]) for name in SECTION_NAMES},
            "attachments": list(self.attachments),
            "ownership": self.ownership.to_dict(),
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    def validate(self) -> None:
        if not self.product_id:
            raise MalformedPassportError("passport has no product_id")
        if self.version < 1:
            raise MalformedPassportError(f"version must be >= 1, got {self.version}")
        if set(self.sections) != set(SECTION_NAMES):
            raise MalformedPassportError(
                f"sections must be exactly {sorted(SECTION_NAMES)}, got {sorted(self.sections)}"
            )
        if not self.ownership.history:
            raise MalformedPassportError("ownership history is empty")
        if self.ownership.current != self.ownership.history[-1].owner_id:
            raise MalformedPassportError("current owner disagrees with history tail")
        if self.version != len(self.ownership.history):
            raise MalformedPassportError(
                f"version {self.version} != 1 + transfers ({len(self.ownership.history) - 1})"
            )
        stamps = [canonical.parse_utc(e.at) for e in self.ownership.history]
        if any(later <= earlier for earlier, later in zip(stamps, stamps[1:])):
            raise MalformedPassportError("ownership history timestamps not strictly increasing")
        for address in self.attachments:
            if not is_address(address):
                raise MalformedPassportError(f"attachment is not a content address: {address!r}")


def create_dpp(
    product: IfcLiteProduct,
    owner_id: str,
    at: datetime | None = None,
) -> DigitalProductPassport:
    """Create passport v1 for a product, owned by the listing seller.

    All seven sections are present; those with nothing to say stay
    explicitly empty so presence never perturbs the hash.
    """
    if not product.product_id:
        raise MalformedProductError("missing product_id")
    stamp = canonical.format_utc(at if at is not None else canonical.utc_now())
    sections: dict[str, dict] = {name: {} for name in SECTION_NAMES}
    identification = {"product_id": product.product_id}
    if product.name:
        identification["name"] = product.name
    if product.manufacturer:
        identification["manufacturer"] = product.manufacturer
    sections["identification"] = identification
    if product.material:
        sections["material_composition"] = {"material": product.material}
    if product.dimensions:
        sections["design_manufacturing"] = {"dimensions": product.dimensions}
    if product.year_installed is not None:
        sections["usage_information"] = {"year_installed": product.year_installed}
    if product.condition_notes:
        sections["maintenance_repair"] = {"condition_notes": product.condition_notes}
    if product.compliance_tags:
        sections["regulatory_compliance"] = {"compliance_tags": list(product.compliance_tags)}
    dpp = DigitalProductPassport(
        product_id=product.product_id,
        version=1,
        sections=sections,
        attachments=(),
        ownership=Ownership(current=owner_id, history=(OwnershipEntry(owner_id, stamp),)),
        created_at=stamp,
        updated_at=stamp,
    )
    dpp.validate()
    return dpp


def canonical_bytes(dpp: DigitalProductPassport) -> bytes:
    """The byte form that gets content-addressed. Pure in the passport value."""
    dpp.validate()
    return canonical.canonical_bytes(dpp.to_dict())


def parse_dpp(data: bytes) -> DigitalProductPassport:
    """Inverse of canonical_bytes; validates structure on the way in."""
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedPassportError(f"not a passport: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedPassportError("passport payload must be an object")
    try:
        ownership_raw = payload["ownership"]
        ownership = Ownership(
            current=ownership_raw["current"],
            history=tuple(
                OwnershipEntry(owner_id=e["owner_id"], at=e["at"])
                for e in ownership_raw["history"]
            ),
        )
        dpp = DigitalProductPassport(
            product_id=payload["product_id"],
            version=int(payload["version"]),
            sections={name: dict(content) for name, content in payload["sections"].items()},
            attachments=tuple(payload.get("attachments", ())),
            ownership=ownership,
            created_at=payload["created_at"],
            updated_at=payload["updated_at"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedPassportError(f"malformed passport: {exc}") from exc
    dpp.validate()
    return dpp


def update_dpp_owner(
    dpp: DigitalProductPassport,
    buyer: str,
    at: datetime,
) -> DigitalProductPassport:
    """Derive the next passport version with ownership transferred to buyer.

    Pure: the input value is untouched. Sections and attachments carry over
    verbatim; only version, ownership and updated_at change.
    """
    dpp.validate()
    if buyer == dpp.ownership.current:
        raise SelfTransferError(f"{buyer} already owns {dpp.product_id}")
    stamp = canonical.format_utc(at)
    if canonical.parse_utc(stamp) <= canonical.parse_utc(dpp.ownership.history[-1].at):
        raise MalformedPassportError("transfer timestamp must follow the previous one")
    updated = DigitalProductPassport(
        product_id=dpp.product_id,
        version=dpp.version + 1,
        sections={name: dict(content) for name, content in dpp.sections.items()},
        attachments=dpp.attachments,
        ownership=Ownership(
            current=buyer,
            history=dpp.ownership.history + (OwnershipEntry(buyer, stamp),),
        ),
        created_at=dpp.created_at,
        updated_at=stamp,
    )
    updated.validate()
    return updated
