"""Circular-economy reuse evaluator: value fields -> category -> disposition.

A product's value fields are scored into [0, 1]; two thresholds partition the
score into Strong (list directly), Weak (repair first) and None (recycle or
landfill). The score is a weighted straight line over condition, remaining
lifecycle fraction and damage flags, clamped to [0, 1]; weights and
thresholds are configuration, not policy baked into code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import InvalidValueFieldsError

MAX_AGE_YEARS = 200.0


class ReuseCategory(str, Enum):
    STRONG = "strong"
    WEAK = "weak"
    NONE = "none"


class Disposition(str, Enum):
    LIST = "list"
    REPAIR = "repair"
    RECYCLE_OR_LANDFILL = "recycle_or_landfill"


@dataclass(frozen=True)
class ValueFields:
    """Assessment inputs for one product."""

    material: str = ""
    condition_score: float = 0.0
    age_years: float = 0.0
    expected_lifecycle_years: float = 1.0
    usage_history: str = ""
    damage_flags: frozenset[str] = field(default_factory=frozenset)

    def validate(self) -> None:
        if not 0.0 <= self.condition_score <= 1.0:
            raise InvalidValueFieldsError(
                f"condition_score {self.condition_score} outside [0, 1]"
            )
        if self.age_years < 0 or self.age_years > MAX_AGE_YEARS:
            raise InvalidValueFieldsError(f"age_years {self.age_years} outside [0, {MAX_AGE_YEARS:.0f}]")
        if self.expected_lifecycle_years <= 0:
            raise InvalidValueFieldsError("expected_lifecycle_years must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ValueFields":
        try:
            values = cls(
                material=str(data.get("material", "")),
                condition_score=float(data["condition_score"]),
                age_years=float(data.get("age_years", 0.0)),
                expected_lifecycle_years=float(data.get("expected_lifecycle_years", 1.0)),
                usage_history=str(data.get("usage_history", "")),
                damage_flags=frozenset(data.get("damage_flags", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidValueFieldsError(f"malformed value fields: {exc}") from exc
        values.validate()
        return values


@dataclass(frozen=True)
class ReuseThresholds:
    theta_strong: float = 0.70
    theta_weak: float = 0.40

    def __post_init__(self) -> None:
        if not (0.0 <= self.theta_weak < self.theta_strong <= 1.0):
            raise InvalidValueFieldsError(
                f"thresholds must satisfy 0 <= weak < strong <= 1, "
                f"got weak={self.theta_weak} strong={self.theta_strong}"
            )


@dataclass(frozen=True)
class ScoreWeights:
    condition: float = 0.6
    lifecycle: float = 0.4
    damage_penalty: float = 0.1

    def __post_init__(self) -> None:
        if min(self.condition, self.lifecycle, self.damage_penalty) < 0:
            raise InvalidValueFieldsError("score weights must be non-negative")


DEFAULT_THRESHOLDS = ReuseThresholds()
DEFAULT_WEIGHTS = ScoreWeights()


def score(values: ValueFields, weights: ScoreWeights = DEFAULT_WEIGHTS) -> float:
    """Evaluate reuse potential in [0, 1].

    Non-decreasing in condition_score, non-increasing in the age/lifecycle
    ratio; each damage flag lowers the raw score by the penalty weight
    before clamping.
    """
    values.validate()
    remaining = max(0.0, 1.0 - values.age_years / values.expected_lifecycle_years)
    raw = (
        weights.condition * values.condition_score
        + weights.lifecycle * remaining
        - weights.damage_penalty * len(values.damage_flags)
    )
    return min(1.0, max(0.0, raw))


def categorize_score(s: float, thresholds: ReuseThresholds = DEFAULT_THRESHOLDS) -> ReuseCategory:
    """Partition a score: Strong iff s >= theta_strong, Weak iff
    theta_weak <= s < theta_strong, None iff s < theta_weak.

    Lower bounds inclusive; exactly one branch fires for any s.
    """
    if s >= thresholds.theta_strong:
        return ReuseCategory.STRONG
    if s >= thresholds.theta_weak:
        return ReuseCategory.WEAK
    return ReuseCategory.NONE


def categorize(
    values: ValueFields,
    thresholds: ReuseThresholds = DEFAULT_THRESHOLDS,
    weights: ScoreWeights = DEFAULT_WEIGHTS,
) -> ReuseCategory:
    return categorize_score(score(values, weights), thresholds)


def listing_status(category: ReuseCategory) -> int:
    """1 iff the category clears the listing gate (Strong), else 0."""
    return 1 if category is ReuseCategory.STRONG else 0


def disposition(category: ReuseCategory) -> Disposition:
    if category is ReuseCategory.STRONG:
        return Disposition.LIST
    if category is ReuseCategory.WEAK:
        return Disposition.REPAIR
    return Disposition.RECYCLE_OR_LANDFILL
