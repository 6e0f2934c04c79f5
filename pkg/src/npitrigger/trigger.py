"""Event-triggered lockdown controller and closed-loop simulation.

Between two trigger times ``t_k < t <= t_{k+1}`` the control follows a ramp
chosen once, at ``t_k``, from the side of the threshold the history window
``x_tau(t_k)`` falls on: inside the event set the intervention is released
(ramp down to 0), outside it is applied (ramp up to ``1 - delta_hat``).  The
next trigger time is the first day, at least ``Delta`` days after ``t_k``,
on which the window is on the other side, optionally delayed by an alignment
rule such as "next Monday".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dynamics import ChileState, ChinaState, CompartmentModel, Trajectory
from .errors import EngineError, NegativeStateError
from .indicators import EventSet, HistoryWindow, IndicatorSpec

APPLIED = "applied"
RELEASED = "released"

_STATE_TYPES = {t._fields: t for t in (ChileState, ChinaState)}


def align_identity(t: int) -> int:
    return t


def align_weekly(t: int) -> int:
    """Round a nonnegative delay up to the next multiple of 7 days."""
    if t < 0:
        raise ValueError("alignment is defined for nonnegative delays only")
    return 7 * math.ceil(t / 7)


ALIGNMENTS: dict[str, Callable[[int], int]] = {"identity": align_identity, "weekly": align_weekly}


@dataclass(frozen=True)
class RampPair:
    """Ramp duration (days) and the non-suppressible contact fraction."""

    Delta: int
    delta_hat: float

    def __post_init__(self) -> None:
        if self.Delta < 1:
            raise ValueError(f"ramp duration Delta={self.Delta} must be >= 1")
        if not 0.0 < self.delta_hat < 1.0:
            raise ValueError(f"delta_hat={self.delta_hat} must lie in (0, 1)")

    @property
    def u_max(self) -> float:
        return 1.0 - self.delta_hat


def ramp_release(tau_since: float, u_k: float, r: RampPair) -> float:
    return max(0.0, u_k * (1.0 - tau_since / r.Delta))


def ramp_apply(tau_since: float, u_k: float, r: RampPair) -> float:
    return min(r.u_max, u_k * (1.0 - tau_since / r.Delta) + r.u_max / r.Delta * tau_since)


def controller_eval(tau_since: float, window_in_S: bool, u_k: float, r: RampPair) -> float:
    """Control ``tau_since`` days after a trigger whose window had the given side."""
    if window_in_S:
        return ramp_release(tau_since, u_k, r)
    return ramp_apply(tau_since, u_k, r)


def xor_transition(a_in_S: bool, b_in_S: bool) -> int:
    return int(bool(a_in_S) != bool(b_in_S))


@dataclass(frozen=True)
class TriggerPolicy:
    """Complete event-triggered mechanism for one indicator and threshold."""

    indicator: IndicatorSpec
    theta: float
    Delta: int
    ramps: RampPair
    u_ref: float | None = None
    alignment: str = "identity"

    def __post_init__(self) -> None:
        problems = []
        if not isinstance(self.Delta, int) or self.Delta < 1:
            problems.append(f"Delta={self.Delta!r} must be a positive integer")
        elif self.Delta < self.hist:
            problems.append(f"Delta={self.Delta} < tau={self.hist} violates Δ ≥ τ")
        if self.u_ref is None:
            object.__setattr__(self, "u_ref", self.ramps.u_max)
        elif not 0.0 <= self.u_ref <= self.ramps.u_max:
            problems.append(f"u_ref={self.u_ref} outside [0, {self.ramps.u_max}]")
        if self.alignment not in ALIGNMENTS:
            problems.append(f"unknown alignment {self.alignment!r}")
        if math.isnan(self.theta):
            problems.append("theta must not be NaN")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def build(
        cls,
        indicator: IndicatorSpec,
        theta: float,
        Delta: int,
        delta_hat: float,
        u_ref: float | None = None,
        alignment: str = "identity",
    ) -> TriggerPolicy:
        """Policy whose ramps saturate in exactly ``Delta`` days."""
        return cls(indicator, theta, Delta, RampPair(Delta, delta_hat), u_ref, alignment)

    @property
    def hist(self) -> int:
        return self.indicator.tau

    @property
    def event_set(self) -> EventSet:
        return EventSet(self.indicator, self.theta)

    def align(self, t: int) -> int:
        return ALIGNMENTS[self.alignment](t)


@dataclass(frozen=True)
class SwitchLog:
    """Trigger times ``t_0 < t_1 < ...`` and the regime of the first interval.

    Interval ``k`` is ``[t_k, t_{k+1}]``; the last one closes at ``horizon``.
    Regimes alternate, starting with ``initial_regime``.
    """

    trigger_times: tuple[int, ...]
    initial_regime: str
    horizon: int

    def __post_init__(self) -> None:
        if self.initial_regime not in (APPLIED, RELEASED):
            raise ValueError(f"initial_regime must be {APPLIED!r} or {RELEASED!r}")
        if not self.trigger_times:
            raise ValueError("a switch log contains at least the initial time")
        if any(b <= a for a, b in zip(self.trigger_times, self.trigger_times[1:])):
            raise ValueError("trigger times must be strictly increasing")
        if self.trigger_times[-1] > self.horizon:
            raise ValueError("trigger times must not exceed the horizon")

    @property
    def t0(self) -> int:
        return self.trigger_times[0]

    @property
    def n_switches(self) -> int:
        return len(self.trigger_times) - 1

    def regimes(self) -> list[str]:
        other = RELEASED if self.initial_regime == APPLIED else APPLIED
        return [self.initial_regime if k % 2 == 0 else other for k in range(len(self.trigger_times))]

    def intervals(self) -> list[tuple[int, int, str]]:
        ends = list(self.trigger_times[1:]) + [self.horizon]
        return list(zip(self.trigger_times, ends, self.regimes()))

    def gaps(self) -> list[int]:
        return [b - a for a, b in zip(self.trigger_times, self.trigger_times[1:])]

    def regime_at(self, t: int) -> str:
        """Regime governing the control on day ``t`` (intervals are ``(t_k, t_{k+1}]``)."""
        k = int(np.searchsorted(self.trigger_times, t, side="left")) - 1
        return self.regimes()[max(k, 0)]


def _state_type_for(compartments: Sequence[str]) -> type:
    return _STATE_TYPES.get(tuple(compartments), tuple)


def history_at(traj: Trajectory, t: int, tau: int) -> HistoryWindow:
    """Window ``(x(t - tau), ..., x(t))``, left-padded with ``x(t0)`` before the start."""
    if not traj.t0 <= t <= traj.horizon + 1:
        raise IndexError(f"day {t} outside [{traj.t0}, {traj.horizon + 1}]")
    make = _state_type_for(traj.compartments)
    rows = [traj.states[max(s - traj.t0, 0)] for s in range(t - tau, t + 1)]
    return HistoryWindow(t=t, entries=tuple(make(*map(float, r)) for r in rows))


def window_observations(obs: Sequence[float], i: int, tau: int) -> list[float]:
    """Observation window ending at list position ``i``, padded with ``obs[0]``."""
    start = i - tau
    if start >= 0:
        return list(obs[start : i + 1])
    return [obs[0]] * (-start) + list(obs[: i + 1])


@dataclass
class ClosedLoopRun:
    """Growing record of a closed-loop simulation (engine internal).

    ``states[i]``, ``obs[i]`` and ``controls[i]`` refer to day ``t0 + i``.
    """

    model: CompartmentModel
    policy: TriggerPolicy
    t0: int
    states: list = field(default_factory=list)
    obs: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    _weights: tuple = ()

    def __post_init__(self) -> None:
        self._weights = self.policy.indicator.observation.weights_for(self.model.compartments)

    @property
    def last_day(self) -> int:
        return self.t0 + len(self.states) - 1

    def push_state(self, x) -> None:
        self.states.append(x)
        self.obs.append(math.fsum(w * v for w, v in zip(self._weights, x) if w))

    def advance(self) -> None:
        """Compute x(t+1) from the latest state and control."""
        day = self.last_day
        try:
            self.push_state(self.model.step(self.states[-1], self.controls[-1]))
        except NegativeStateError as exc:
            raise NegativeStateError(str(exc), day=day) from exc

    def in_event_set(self, t: int) -> bool:
        spec = self.policy.indicator
        window = window_observations(self.obs, t - self.t0, spec.tau)
        return self.policy.event_set.contains_value(spec.aggregate(window))

    def trajectory(self) -> Trajectory:
        return Trajectory(
            t0=self.t0,
            states=np.array(self.states, dtype=float),
            controls=np.array(self.controls, dtype=float),
            compartments=self.model.compartments,
        )


class TriggerOutcome(NamedTuple):
    t_next: int
    switched: bool


def next_trigger(run: ClosedLoopRun, t_k: int, side_in_S: bool, horizon: int) -> TriggerOutcome:
    """Extend ``run`` from trigger time ``t_k`` up to the next trigger time.

    On entry ``run`` holds states and controls up to day ``t_k``.  On return it
    holds them up to ``t_next``.  When no transition happens before the
    horizon (or the aligned switch would fall at or past it) the run is
    extended to ``horizon`` and ``(horizon, False)`` is returned.
    """
    policy = run.policy
    if run.last_day != t_k or len(run.controls) != len(run.states):
        raise EngineError("closed-loop record is not positioned at the trigger time")
    u_k = run.controls[-1]
    earliest = t_k + policy.Delta
    pending: int | None = None
    for t in range(t_k + 1, horizon + 1):
        run.advance()
        if pending is None and t >= earliest and run.in_event_set(t) != side_in_S:
            pending = earliest + policy.align(t - earliest)
        run.controls.append(controller_eval(t - t_k, side_in_S, u_k, policy.ramps))
        if pending == t and t < horizon:
            return TriggerOutcome(t, True)
    return TriggerOutcome(horizon, False)


class ClosedLoopResult(NamedTuple):
    trajectory: Trajectory
    log: SwitchLog


def simulate_closed_loop(
    model: CompartmentModel, x0, policy: TriggerPolicy, t0: int = 0, horizon: int = 1826
) -> ClosedLoopResult:
    """Simulate the event-triggered feedback from ``x0`` over days ``t0..horizon``."""
    if horizon < t0:
        raise ValueError("horizon must not precede the initial time")
    if policy.ramps.u_max > model.u_max + 1e-12:
        raise ValueError(f"policy saturates at {policy.ramps.u_max}, model admits at most {model.u_max}")
    x0 = model.state_type(*x0)
    model.validate_state(x0, check_total=False)
    run = ClosedLoopRun(model=model, policy=policy, t0=t0)
    run.push_state(x0)

    side = run.in_event_set(t0)
    run.controls.append(0.0 if side else float(policy.u_ref))
    triggers = [t0]
    t_k = t0
    while True:
        t_k, switched = next_trigger(run, t_k, side, horizon)
        if not switched:
            break
        triggers.append(t_k)
        side = not side
    run.advance()
    log = SwitchLog(
        trigger_times=tuple(triggers),
        initial_regime=RELEASED if run.in_event_set(t0) else APPLIED,
        horizon=horizon,
    )
    return ClosedLoopResult(run.trajectory(), log)


def indicator_series(traj: Trajectory, spec: IndicatorSpec) -> np.ndarray:
    """Indicator value for every day of ``traj``; NaN where it is undefined."""
    weights = np.asarray(spec.observation.weights_for(traj.compartments))
    obs = list(traj.states @ weights)
    out = np.empty(len(obs))
    for i in range(len(obs)):
        try:
            out[i] = spec.aggregate(window_observations(obs, i, spec.tau))
        except ZeroDivisionError:
            out[i] = math.nan
    return out
