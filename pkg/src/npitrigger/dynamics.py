"""Discrete-time compartmental models and open-loop simulation.

Two models are provided:

* ``ChileModel``: eight compartments (S, E, Im, I, R, H, Hc, D) advanced by one
  difference step per day.
* ``ChinaModel``: nine compartments (S, E, I, Iu, HR, HD, Rd, Ru, D) obtained by
  explicit Euler with an hourly step, 24 sub-steps per day, control held
  constant within the day.

States are immutable named tuples of floats (persons).  A model exposes
``step(x, u)`` advancing one calendar day; everything else in the package is
written against that single method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import ClassVar, NamedTuple, Sequence

import numpy as np

from .errors import DegeneratePopulationError, NegativeStateError

NEGATIVE_TOL = 1e-9


class ChileState(NamedTuple):
    S: float
    E: float
    Im: float
    I: float  # noqa: E741
    R: float
    H: float
    Hc: float
    D: float


class ChinaState(NamedTuple):
    S: float
    E: float
    I: float  # noqa: E741
    Iu: float
    HR: float
    HD: float
    Rd: float
    Ru: float
    D: float


def _check_fraction(name: str, value: float, problems: list[str], *, open_: bool = False) -> None:
    ok = 0.0 < value < 1.0 if open_ else 0.0 <= value <= 1.0
    if not (math.isfinite(value) and ok):
        interval = "(0, 1)" if open_ else "[0, 1]"
        problems.append(f"{name}={value} must lie in {interval}")


def _check_rate(name: str, value: float, problems: list[str]) -> None:
    if not (math.isfinite(value) and value > 0.0):
        problems.append(f"{name}={value} must be a positive rate")


@dataclass(frozen=True)
class ChileParams:
    """Posterior-mean style parameter block of the eight-compartment model.

    The defaults are the calibrated means for the Metropolitan Region
    (Santiago); ``phi_EI`` is held fixed at 0.6.
    """

    beta_E: float = 0.04
    beta_Im: float = 0.04
    beta_I: float = 0.2
    gamma_E: float = 0.39
    gamma_Im: float = 0.17
    gamma_I: float = 0.17
    gamma_H: float = 0.17
    gamma_Hc: float = 0.14
    phi_EI: float = 0.6
    phi_IR: float = 0.61
    phi_HR: float = 0.61
    phi_HD: float = 0.12
    phi_HcD: float = 0.12
    delta_hat: float = 0.2
    N: float = 7_112_808.0

    def __post_init__(self) -> None:
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out: list[str] = []
        for name in ("beta_E", "beta_Im", "beta_I"):
            _check_rate(name, getattr(self, name), out)
        for name in ("gamma_E", "gamma_Im", "gamma_I", "gamma_H", "gamma_Hc"):
            value = getattr(self, name)
            _check_rate(name, value, out)
            if value > 1.0:
                out.append(f"{name}={value} exceeds 1/day; the daily update would overshoot")
        for name in ("phi_EI", "phi_IR", "phi_HR", "phi_HD", "phi_HcD"):
            _check_fraction(name, getattr(self, name), out)
        if self.phi_HR + self.phi_HD > 1.0:
            out.append("phi_HR + phi_HD must not exceed 1")
        _check_fraction("delta_hat", self.delta_hat, out, open_=True)
        if not (math.isfinite(self.N) and self.N > 0):
            out.append(f"N={self.N} must be a positive population")
        return out


@dataclass(frozen=True)
class ChinaParams:
    """Parameter block of the nine-compartment model.

    No defaults are shipped for the rates: the calibrated values live in an
    external source and must be supplied by the user.
    """

    beta_E: float
    beta_I: float
    beta_Iu: float
    beta_HR: float
    beta_HD: float
    gamma_E: float
    gamma_I: float
    gamma_Iu: float
    gamma_HR: float
    gamma_HD: float
    phi_IHR: float
    phi_IHD: float
    N: float
    delta_hat: float = 0.25
    dt: float = 1.0 / 24.0

    def __post_init__(self) -> None:
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out: list[str] = []
        for name in ("beta_E", "beta_I", "beta_Iu", "beta_HR", "beta_HD"):
            _check_rate(name, getattr(self, name), out)
        for name in ("gamma_E", "gamma_I", "gamma_Iu", "gamma_HR", "gamma_HD"):
            value = getattr(self, name)
            _check_rate(name, value, out)
            if value * self.dt > 1.0:
                out.append(f"dt*{name}={value * self.dt} exceeds 1; Euler step would overshoot")
        for name in ("phi_IHR", "phi_IHD"):
            _check_fraction(name, getattr(self, name), out)
        if self.phi_IHR + self.phi_IHD > 1.0:
            out.append("phi_IHR + phi_IHD must not exceed 1")
        _check_fraction("delta_hat", self.delta_hat, out, open_=True)
        if not (math.isfinite(self.N) and self.N > 0):
            out.append(f"N={self.N} must be a positive population")
        steps = 1.0 / self.dt if self.dt > 0 else math.inf
        if not (math.isfinite(steps) and abs(steps - round(steps)) < 1e-9):
            out.append(f"dt={self.dt} must divide one day into an integer number of steps")
        return out


def _finish(values: Sequence[float], population: float, state_type: type) -> tuple:
    """Clamp round-off negatives to zero; reject anything larger."""
    floor = -NEGATIVE_TOL * population
    if min(values) < 0.0:
        out = []
        for name, v in zip(state_type._fields, values):
            if v < floor:
                raise NegativeStateError(f"compartment {name} became negative ({v:.6g})")
            out.append(v if v > 0.0 else 0.0)
        values = out
    return state_type(*values)


def chile_contagion_rate(x: ChileState, u: float, p: ChileParams) -> float:
    """Controlled force of infection of the eight-compartment model (1/day)."""
    alive = p.N - x.D
    if alive <= 0.0:
        raise DegeneratePopulationError(f"N - D = {alive} is not positive")
    return ((1.0 - u) * (p.beta_E * x.E + p.beta_Im * x.Im) + p.delta_hat * p.beta_I * x.I) / alive


def chile_step(x: ChileState, u: float, p: ChileParams) -> ChileState:
    S, E, Im, I, R, H, Hc, D = x  # noqa: E741
    lam = chile_contagion_rate(x, u, p)
    new_inf = lam * S
    out_E = p.gamma_E * E
    out_Im = p.gamma_Im * Im
    out_I = p.gamma_I * I
    out_H = p.gamma_H * H
    out_Hc = p.gamma_Hc * Hc
    return _finish(
        (
            S - new_inf,
            E + new_inf - out_E,
            Im + (1.0 - p.phi_EI) * out_E - out_Im,
            I + p.phi_EI * out_E - out_I,
            R + out_Im + p.phi_IR * out_I + p.phi_HR * out_H,
            H + (1.0 - p.phi_IR) * out_I + (1.0 - p.phi_HcD) * out_Hc - out_H,
            Hc + (1.0 - p.phi_HR - p.phi_HD) * out_H - out_Hc,
            D + p.phi_HD * out_H + p.phi_HcD * out_Hc,
        ),
        p.N,
        ChileState,
    )


def china_contagion_rate(x: ChinaState, u: float, p: ChinaParams) -> float:
    """Controlled force of infection of the nine-compartment model (1/day)."""
    return (1.0 - u) * (
        p.beta_E * x.E + p.beta_I * x.I + p.beta_Iu * x.Iu + p.beta_HR * x.HR + p.beta_HD * x.HD
    ) / p.N


def china_substep(x: ChinaState, u: float, p: ChinaParams) -> tuple[float, ...]:
    """One explicit Euler step of length ``p.dt`` (no clamping)."""
    S, E, I, Iu, HR, HD, Rd, Ru, D = x  # noqa: E741
    dt = p.dt
    new_inf = dt * china_contagion_rate(x, u, p) * S
    out_E = dt * p.gamma_E * E
    out_I = dt * p.gamma_I * I
    out_Iu = dt * p.gamma_Iu * Iu
    out_HR = dt * p.gamma_HR * HR
    out_HD = dt * p.gamma_HD * HD
    return (
        S - new_inf,
        E + new_inf - out_E,
        I + out_E - out_I,
        Iu + (1.0 - p.phi_IHR - p.phi_IHD) * out_I - out_Iu,
        HR + p.phi_IHR * out_I - out_HR,
        HD + p.phi_IHD * out_I - out_HD,
        Rd + out_HR,
        Ru + out_Iu,
        D + out_HD,
    )


def china_step_day(x: ChinaState, u: float, p: ChinaParams) -> ChinaState:
    # Inlined copy of china_substep: this loop dominates sweep runtime.
    S, E, I, Iu, HR, HD, Rd, Ru, D = x  # noqa: E741
    dt = p.dt
    coef = dt * (1.0 - u) / p.N
    bE, bI, bIu, bHR, bHD = p.beta_E, p.beta_I, p.beta_Iu, p.beta_HR, p.beta_HD
    gE, gI, gIu, gHR, gHD = dt * p.gamma_E, dt * p.gamma_I, dt * p.gamma_Iu, dt * p.gamma_HR, dt * p.gamma_HD
    fU = 1.0 - p.phi_IHR - p.phi_IHD
    fR, fD = p.phi_IHR, p.phi_IHD
    for _ in range(int(round(1.0 / dt))):
        new_inf = coef * (bE * E + bI * I + bIu * Iu + bHR * HR + bHD * HD) * S
        out_E = gE * E
        out_I = gI * I
        out_Iu = gIu * Iu
        out_HR = gHR * HR
        out_HD = gHD * HD
        S = S - new_inf
        E = E + new_inf - out_E
        I = I + out_E - out_I  # noqa: E741
        Iu = Iu + fU * out_I - out_Iu
        HR = HR + fR * out_I - out_HR
        HD = HD + fD * out_I - out_HD
        Rd = Rd + out_HR
        Ru = Ru + out_Iu
        D = D + out_HD
    return _finish((S, E, I, Iu, HR, HD, Rd, Ru, D), p.N, ChinaState)


class CompartmentModel:
    """Interface every model used by the trigger engine provides.

    Subclasses set ``name``, ``state_type`` and implement ``step``.  The
    admissible control set is ``[0, u_max]`` with ``u_max = 1 - delta_hat``.
    """

    name: ClassVar[str] = "model"
    state_type: ClassVar[type] = tuple
    substeps: ClassVar[int] = 1

    @property
    def compartments(self) -> tuple[str, ...]:
        return tuple(self.state_type._fields)

    @property
    def population(self) -> float:
        raise NotImplementedError

    @property
    def delta_hat(self) -> float:
        raise NotImplementedError

    @property
    def u_max(self) -> float:
        return 1.0 - self.delta_hat

    def step(self, x, u: float):
        raise NotImplementedError

    def contagion_rate(self, x, u: float) -> float:
        raise NotImplementedError

    def state(self, *args, **kwargs):
        """Build and validate a state of this model."""
        x = self.state_type(*(float(v) for v in args), **{k: float(v) for k, v in kwargs.items()})
        self.validate_state(x)
        return x

    def validate_state(self, x, *, check_total: bool = True) -> None:
        if len(x) != len(self.compartments):
            raise ValueError(f"{self.name} expects {len(self.compartments)} compartments, got {len(x)}")
        bad = [f"{n}={v}" for n, v in zip(self.compartments, x) if not (math.isfinite(v) and v >= 0.0)]
        if bad:
            raise ValueError("compartments must be finite and nonnegative: " + ", ".join(bad))
        if check_total:
            total = math.fsum(x)
            if abs(total - self.population) > NEGATIVE_TOL * self.population:
                raise ValueError(f"compartments sum to {total}, population is {self.population}")

    def check_control(self, u: float) -> None:
        if not (0.0 <= u <= self.u_max + 1e-12):
            raise ValueError(f"control {u} outside [0, {self.u_max}]")


@dataclass(frozen=True)
class ChileModel(CompartmentModel):
    params: ChileParams = ChileParams()

    name: ClassVar[str] = "chile8"
    state_type: ClassVar[type] = ChileState

    @property
    def population(self) -> float:
        return self.params.N

    @property
    def delta_hat(self) -> float:
        return self.params.delta_hat

    def step(self, x: ChileState, u: float) -> ChileState:
        return chile_step(x, u, self.params)

    def contagion_rate(self, x: ChileState, u: float) -> float:
        return chile_contagion_rate(x, u, self.params)


@dataclass(frozen=True)
class ChinaModel(CompartmentModel):
    params: ChinaParams

    name: ClassVar[str] = "china9"
    state_type: ClassVar[type] = ChinaState

    @property
    def substeps(self) -> int:  # type: ignore[override]
        return int(round(1.0 / self.params.dt))

    @property
    def population(self) -> float:
        return self.params.N

    @property
    def delta_hat(self) -> float:
        return self.params.delta_hat

    def step(self, x: ChinaState, u: float) -> ChinaState:
        return china_step_day(x, u, self.params)

    def contagion_rate(self, x: ChinaState, u: float) -> float:
        return china_contagion_rate(x, u, self.params)


def param_names(params_type: type) -> list[str]:
    return [f.name for f in fields(params_type)]


@dataclass(frozen=True)
class Trajectory:
    """States x(t0..T+1) and controls u(t0..T) of one simulation.

    ``states`` has shape ``(T - t0 + 2, n_compartments)`` and ``controls``
    shape ``(T - t0 + 1,)``; both arrays are read-only.
    """

    t0: int
    states: np.ndarray
    controls: np.ndarray
    compartments: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.states) != len(self.controls) + 1:
            raise ValueError("a trajectory needs exactly one more state than controls")
        self.states.setflags(write=False)
        self.controls.setflags(write=False)

    @property
    def horizon(self) -> int:
        return self.t0 + len(self.controls) - 1

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + len(self.states))

    def state_at(self, t: int) -> np.ndarray:
        if not self.t0 <= t <= self.horizon + 1:
            raise IndexError(f"day {t} outside [{self.t0}, {self.horizon + 1}]")
        return self.states[t - self.t0]

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.compartments.index(name)]


def simulate_open_loop(model: CompartmentModel, x0, controls: Sequence[float], t0: int = 0) -> Trajectory:
    """Apply ``model.step`` once per control value starting from ``x0`` at day ``t0``."""
    if len(controls) == 0:
        raise ValueError("at least one control value is required (horizon >= t0)")
    x = model.state_type(*x0)
    model.validate_state(x)
    states = [x]
    for offset, u in enumerate(controls):
        model.check_control(u)
        try:
            x = model.step(x, u)
        except NegativeStateError as exc:
            raise NegativeStateError(str(exc), day=t0 + offset) from exc
        states.append(x)
    return Trajectory(
        t0=t0,
        states=np.array(states, dtype=float),
        controls=np.array(controls, dtype=float),
        compartments=model.compartments,
    )
