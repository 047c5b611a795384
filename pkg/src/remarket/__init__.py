"""Trustworthy second-hand marketplace engine for built-environment materials.

Sellers list reusable products with Digital Product Passports kept in a
content-addressed store and anchored on an append-only hash-chained ledger;
buyers search, verify provenance and price against the chain, and purchase
with atomic ownership transfer.
"""

__version__ = "0.1.0"
