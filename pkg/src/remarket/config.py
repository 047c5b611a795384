"""Service configuration: flat key = value text file with env overrides.

Recognized keys (all optional): data_dir, port, theta_strong, theta_weak,
weight_condition, weight_lifecycle, damage_penalty, currency,
ledger_batch_size, ui_dir. Lines starting with '#' are comments.
MARKET_DATA_DIR and MARKET_PORT override the file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .ccpo import ReuseThresholds, ScoreWeights
from .errors import ConfigError

_KEYS = {
    "data_dir",
    "port",
    "theta_strong",
    "theta_weak",
    "weight_condition",
    "weight_lifecycle",
    "damage_penalty",
    "currency",
    "ledger_batch_size",
    "ui_dir",
}


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: Path = Path("./market-data")
    port: int = 8700
    thresholds: ReuseThresholds = field(default_factory=ReuseThresholds)
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    currency: str = "GBP"
    ledger_batch_size: int = 1
    ui_dir: Path | None = None

    def __post_init__(self) -> None:
        if not 1024 <= self.port <= 65535:
            raise ConfigError(f"port {self.port} outside [1024, 65535]")
        if self.ledger_batch_size < 1:
            raise ConfigError("ledger_batch_size must be >= 1")


def parse_config_text(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        entries[key] = value.strip()
    return entries


def load_config(path: str | Path | None = None, **overrides) -> ServiceConfig:
    """Build a ServiceConfig from (in increasing precedence) defaults, the
    config file, MARKET_* env vars, and explicit overrides."""
    entries: dict[str, str] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        entries = parse_config_text(config_path.read_text(encoding="utf-8"))

    if "MARKET_DATA_DIR" in os.environ:
        entries["data_dir"] = os.environ["MARKET_DATA_DIR"]
    if "MARKET_PORT" in os.environ:
        entries["port"] = os.environ["MARKET_PORT"]

    def pick(key: str, default):
        if key in overrides and overrides[key] is not None:
            return overrides[key]
        return entries.get(key, default)

    try:
        thresholds = ReuseThresholds(
            theta_strong=float(pick("theta_strong", 0.70)),
            theta_weak=float(pick("theta_weak", 0.40)),
        )
        weights = ScoreWeights(
            condition=float(pick("weight_condition", 0.6)),
            lifecycle=float(pick("weight_lifecycle", 0.4)),
            damage_penalty=float(pick("damage_penalty", 0.1)),
        )
        ui_dir = pick("ui_dir", None)
        return ServiceConfig(
            data_dir=Path(pick("data_dir", "./market-data")),
            port=int(pick("port", 8700)),
            thresholds=thresholds,
            weights=weights,
            currency=str(pick("currency", "GBP")),
            ledger_batch_size=int(pick("ledger_batch_size", 1)),
            ui_dir=Path(ui_dir) if ui_dir else None,
        )
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
