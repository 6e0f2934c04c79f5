"""Observations, window indicators and threshold event sets.

An observation maps one state to a real number (e.g. ICU occupancy).  An
indicator aggregates the observations over a history window of ``tau + 1``
days, oldest first.  The event set of threshold ``theta`` contains the windows
whose indicator is ``<= theta``; inside the set the intervention is released.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .dynamics import ChileState, ChinaState
from .errors import IndicatorError

# Built-in observations as linear functionals over named compartments.
OBSERVATIONS: dict[str, tuple[type, tuple[str, ...]]] = {
    "chile_icu": (ChileState, ("Hc",)),
    "chile_active": (ChileState, ("I", "H", "Hc")),
    "china_hospitalized": (ChinaState, ("HR", "HD")),
    "china_detected": (ChinaState, ("I",)),
}
CUSTOM = "custom_linear"

AGGREGATORS = ("mean", "mean_diff", "variation_rate", "variation_rate_diff")


@dataclass(frozen=True)
class ObservationKind:
    """Instantaneous observation of a state.

    ``scale`` multiplies the raw count; scenarios use it for per-capita
    observations (e.g. ``1e5 / N`` for "per 100,000 residents").
    """

    tag: str
    weights: tuple[float, ...] | None = None
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.tag == CUSTOM:
            if not self.weights or not all(math.isfinite(w) for w in self.weights):
                raise ValueError("custom_linear observations need finite weights")
        elif self.tag not in OBSERVATIONS:
            raise ValueError(f"unknown observation {self.tag!r}; expected one of {sorted(OBSERVATIONS) + [CUSTOM]}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError("observation scale must be positive and finite")

    def weights_for(self, compartments: Sequence[str]) -> tuple[float, ...]:
        """Dense weight vector of this observation over ``compartments``."""
        if self.tag == CUSTOM:
            assert self.weights is not None
            if len(self.weights) != len(compartments):
                raise ValueError(
                    f"custom weights have length {len(self.weights)}, model has {len(compartments)} compartments"
                )
            return tuple(self.scale * w for w in self.weights)
        state_type, names = OBSERVATIONS[self.tag]
        if tuple(compartments) != state_type._fields:
            raise ValueError(f"observation {self.tag!r} does not apply to compartments {tuple(compartments)}")
        return tuple(self.scale if c in names else 0.0 for c in compartments)


def observe(kind: ObservationKind, x: Sequence[float]) -> float:
    """Evaluate an observation on a single state."""
    if kind.tag == CUSTOM:
        assert kind.weights is not None
        if len(kind.weights) != len(x):
            raise ValueError(f"custom weights have length {len(kind.weights)}, state has {len(x)} entries")
        return kind.scale * math.fsum(w * v for w, v in zip(kind.weights, x))
    state_type, names = OBSERVATIONS[kind.tag]
    if not isinstance(x, state_type):
        raise ValueError(f"observation {kind.tag!r} needs a {state_type.__name__}, got {type(x).__name__}")
    return kind.scale * sum(getattr(x, n) for n in names)


def ind_mean(obs: Sequence[float]) -> float:
    return math.fsum(obs) / len(obs)


def ind_mean_diff(obs: Sequence[float]) -> float:
    # Telescoped mean of daily differences; note the divisor is the window length.
    return (obs[-1] - obs[0]) / len(obs)


def ind_variation_rate(obs: Sequence[float]) -> float:
    if obs[0] == 0.0:
        raise IndicatorError("variation rate undefined: oldest observation in the window is 0")
    return (obs[-1] - obs[0]) / obs[0]


def ind_variation_rate_diff(obs: Sequence[float]) -> float:
    """Mean of the day-over-day relative changes inside the window."""
    if len(obs) < 2:
        raise IndicatorError("variation rate of differences needs a window of at least 2 days")
    total = 0.0
    for prev, cur in zip(obs[:-1], obs[1:]):
        if prev == 0.0:
            raise IndicatorError("variation rate undefined: zero observation inside the window")
        total += (cur - prev) / prev
    return total / (len(obs) - 1)


_AGGREGATE = {
    "mean": ind_mean,
    "mean_diff": ind_mean_diff,
    "variation_rate": ind_variation_rate,
    "variation_rate_diff": ind_variation_rate_diff,
}


@dataclass(frozen=True)
class IndicatorSpec:
    observation: ObservationKind
    aggregator: str = "mean"
    tau: int = 14

    def __post_init__(self) -> None:
        if self.aggregator not in _AGGREGATE:
            raise ValueError(f"unknown aggregator {self.aggregator!r}; expected one of {AGGREGATORS}")
        if not (isinstance(self.tau, int) and self.tau >= 0):
            raise ValueError(f"tau={self.tau!r} must be a nonnegative integer")
        if self.aggregator.startswith("variation_rate") and self.tau < 1:
            raise ValueError(f"{self.aggregator} needs tau >= 1")

    @property
    def is_level(self) -> bool:
        return self.aggregator == "mean"

    def aggregate(self, obs: Sequence[float]) -> float:
        if len(obs) != self.tau + 1:
            raise ValueError(f"window has {len(obs)} observations, expected tau + 1 = {self.tau + 1}")
        return _AGGREGATE[self.aggregator](obs)


@dataclass(frozen=True)
class HistoryWindow:
    """The ``tau + 1`` most recent states ending at day ``t``, oldest first."""

    t: int
    entries: tuple

    @property
    def tau(self) -> int:
        return len(self.entries) - 1


@dataclass(frozen=True)
class EventSet:
    indicator: IndicatorSpec
    theta: float

    def contains_value(self, value: float) -> bool:
        return value <= self.theta


def indicator_value(spec: IndicatorSpec, window: HistoryWindow) -> float:
    return spec.aggregate([observe(spec.observation, x) for x in window.entries])


def in_event_set(es: EventSet, window: HistoryWindow) -> bool:
    """True when the window lies in the release region ``indicator <= theta``."""
    if window.tau != es.indicator.tau:
        raise ValueError(f"window spans tau={window.tau}, event set expects tau={es.indicator.tau}")
    return es.contains_value(indicator_value(es.indicator, window))
