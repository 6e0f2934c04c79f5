"""Exception hierarchy shared by the engine and the command-line driver."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for every failure raised while simulating or analysing."""


class DegeneratePopulationError(EngineError):
    """The living population N - D is not positive."""


class NegativeStateError(EngineError):
    """A compartment went clearly negative; the parameters are inadmissible."""

    def __init__(self, message: str, day: int | None = None):
        super().__init__(message if day is None else f"day {day}: {message}")
        self.day = day


class IndicatorError(EngineError, ZeroDivisionError):
    """An indicator could not be evaluated (zero denominator in a variation rate)."""


class InfeasibleObjectiveError(EngineError):
    """No point of a trade-off curve satisfies the requested objective bound."""


class ConfigError(Exception):
    """A scenario file could not be parsed or failed validation."""

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
