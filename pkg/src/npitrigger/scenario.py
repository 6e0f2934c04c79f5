"""Scenario files: loading, validation, serialisation and bundled cases.

Scenarios are YAML documents.  Calendar dates are converted to day indices
with ``t0`` mapped to day 0.  See ``scenarios/chile.yaml`` for a complete
example.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import __version__
from .dynamics import ChileModel, ChileParams, ChileState, ChinaModel, ChinaParams, ChinaState, param_names
from .errors import ConfigError
from .indicators import AGGREGATORS, CUSTOM, OBSERVATIONS, IndicatorSpec, ObservationKind
from .tradeoff import OutcomeSpec, Scenario, ThresholdDomain
from .trigger import ALIGNMENTS

EXTERNAL_REQUIRED = "external-required"
CHINA_SOURCE_HINT = (
    "the china9 rate/fraction block (beta_*, gamma_*, phi_*) is not bundled; supply the values of "
    "Ivorra et al. (2020), Table 3, experiment EXP_29M, e.g. with --params <file.yaml>"
)

MODELS = {
    "chile8": (ChileState, ChileParams, ChileModel),
    "china9": (ChinaState, ChinaParams, ChinaModel),
}
_DERIVED_PARAMS = {"N", "delta_hat", "dt"}


@dataclass(frozen=True)
class GridConfig:
    kind: str  # "log" | "linear"
    min: float
    max: float
    n: int = 64


@dataclass(frozen=True)
class IndicatorConfig:
    observation: str
    aggregator: str = "mean"
    per_capita: float | None = None
    weights: tuple[float, ...] | None = None
    grid: GridConfig | None = None


@dataclass(frozen=True)
class PolicyConfig:
    tau: int = 14
    Delta: int = 14
    delta_hat: float = 0.2
    u_ref: float | None = None
    alignment: str = "identity"


@dataclass(frozen=True)
class OutcomesConfig:
    peak: str
    label: str = "peak"
    finals: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model: str
    parameters: Mapping[str, float] | None
    initial_conditions: Mapping[str, float]
    t0: dt.date
    horizon_days: int
    policy: PolicyConfig
    indicators: Mapping[str, IndicatorConfig]
    outcomes: OutcomesConfig
    population: float | None = None
    description: str = ""

    # ------------------------------------------------------------------ views
    @property
    def N(self) -> float:
        if self.population is not None:
            return float(self.population)
        return math.fsum(self.initial_conditions.values())

    @property
    def u_ref(self) -> float:
        return 1.0 - self.policy.delta_hat if self.policy.u_ref is None else self.policy.u_ref

    def date_of(self, day: int) -> dt.date:
        return self.t0 + dt.timedelta(days=day)

    def x0(self) -> tuple[float, ...]:
        state_type = MODELS[self.model][0]
        return state_type(*(float(self.initial_conditions[c]) for c in state_type._fields))

    def build_model(self):
        _, params_type, model_type = MODELS[self.model]
        if self.parameters is None:
            raise ConfigError(CHINA_SOURCE_HINT)
        extra: dict[str, float] = {"N": self.N, "delta_hat": self.policy.delta_hat}
        return model_type(params_type(**dict(self.parameters), **extra))

    def build(self) -> Scenario:
        obs = self.observation(self.outcomes.peak, None, None)
        return Scenario(
            name=self.name,
            model=self.build_model(),
            x0=self.x0(),
            t0=0,
            horizon=self.horizon_days,
            Delta=self.policy.Delta,
            u_ref=self.u_ref,
            outcomes=OutcomeSpec(obs, self.outcomes.label, tuple(self.outcomes.finals)),
            alignment=self.policy.alignment,
        )

    def observation(self, tag: str, per_capita: float | None, weights) -> ObservationKind:
        scale = 1.0 if per_capita is None else per_capita / self.N
        return ObservationKind(tag, tuple(weights) if weights is not None else None, scale)

    def indicator(self, ind_id: str) -> IndicatorSpec:
        try:
            ic = self.indicators[ind_id]
        except KeyError:
            raise ConfigError(f"unknown indicator {ind_id!r}; scenario defines {sorted(self.indicators)}") from None
        return IndicatorSpec(self.observation(ic.observation, ic.per_capita, ic.weights), ic.aggregator, self.policy.tau)

    def domain(self, ind_id: str, n: int | None = None) -> ThresholdDomain:
        ic = self.indicators[ind_id]
        g = ic.grid or default_grid(ic.aggregator, self.N)
        count = n or g.n
        if g.kind == "log":
            return ThresholdDomain.log(g.min, g.max, count)
        return ThresholdDomain.linear(g.min, g.max, count)

    # -------------------------------------------------------- serialisation
    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "description": self.description,
            "model": self.model,
            "t0": self.t0.isoformat(),
            "horizon_days": self.horizon_days,
            "population": self.population,
            "parameters": dict(self.parameters) if self.parameters is not None else EXTERNAL_REQUIRED,
            "initial_conditions": dict(self.initial_conditions),
            "policy": asdict(self.policy),
            "indicators": {},
            "outcomes": {"peak": self.outcomes.peak, "label": self.outcomes.label, "finals": list(self.outcomes.finals)},
        }
        for key, ic in self.indicators.items():
            d: dict[str, Any] = {"observation": ic.observation, "aggregator": ic.aggregator}
            if ic.per_capita is not None:
                d["per_capita"] = ic.per_capita
            if ic.weights is not None:
                d["weights"] = list(ic.weights)
            if ic.grid is not None:
                d["grid"] = asdict(ic.grid)
            out["indicators"][key] = d
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def default_grid(aggregator: str, population: float) -> GridConfig:
    """Threshold grid used when a scenario does not specify one."""
    if aggregator == "mean":
        return GridConfig("log", 1.0, population / 100.0)
    if aggregator == "mean_diff":
        return GridConfig("linear", -population / 1e5, population / 1e5)
    return GridConfig("linear", -1.0, 1.0)


# ---------------------------------------------------------------- parsing
def _num(d: Mapping, key: str, problems: list[str], where: str, default=None, kind=float):
    if key not in d:
        if default is None:
            problems.append(f"{where}: missing field {key!r}")
        return default
    value = d[key]
    try:
        if kind is int:
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        if isinstance(value, bool):
            raise ValueError
        return float(value)
    except (TypeError, ValueError):
        problems.append(f"{where}.{key}: expected a {kind.__name__}, got {value!r}")
        return default


def scenario_from_dict(raw: Any, params_override: Mapping[str, float] | None = None) -> ScenarioConfig:
    """Validate a parsed document; every violated invariant is reported at once."""
    if not isinstance(raw, Mapping):
        raise ConfigError("scenario document must be a mapping")
    problems: list[str] = []

    model = raw.get("model")
    if model not in MODELS:
        raise ConfigError(f"model: expected one of {sorted(MODELS)}, got {model!r}")
    state_type, params_type, _ = MODELS[model]

    name = str(raw.get("name", model))
    t0_raw = raw.get("t0")
    try:
        t0 = t0_raw if isinstance(t0_raw, dt.date) else dt.date.fromisoformat(str(t0_raw))
    except ValueError:
        problems.append(f"t0: expected an ISO date, got {t0_raw!r}")
        t0 = dt.date(2000, 1, 1)
    horizon = _num(raw, "horizon_days", problems, "scenario", kind=int)
    if horizon is not None and horizon < 1:
        problems.append("horizon_days must be >= 1")

    ic_raw = raw.get("initial_conditions")
    ic: dict[str, float] = {}
    if not isinstance(ic_raw, Mapping):
        problems.append("initial_conditions: expected a mapping of compartment -> persons")
    else:
        unknown = set(ic_raw) - set(state_type._fields)
        if unknown:
            problems.append(f"initial_conditions: unknown compartments {sorted(unknown)}")
        for c in state_type._fields:
            v = _num(ic_raw, c, problems, "initial_conditions")
            if v is not None:
                if not (math.isfinite(v) and v >= 0):
                    problems.append(f"initial_conditions.{c}={v} must be nonnegative")
                ic[c] = v

    population = raw.get("population")
    if population is not None:
        population = _num(raw, "population", problems, "scenario")
    if ic and population is not None and len(ic) == len(state_type._fields):
        total = math.fsum(ic.values())
        if abs(total - population) > 1e-9 * population:
            problems.append(f"initial conditions sum to {total:.0f} but population is {population:.0f}")

    pol_raw = raw.get("policy") or {}
    tau = _num(pol_raw, "tau", problems, "policy", 14, int)
    Delta = _num(pol_raw, "Delta", problems, "policy", 14, int)
    delta_hat = _num(pol_raw, "delta_hat", problems, "policy", 0.2)
    u_ref_raw = pol_raw.get("u_ref")
    u_ref = None if u_ref_raw in (None, "max") else _num(pol_raw, "u_ref", problems, "policy")
    alignment = str(pol_raw.get("alignment", "identity"))
    if tau is not None and tau < 0:
        problems.append("policy.tau must be >= 0")
    if Delta is not None and tau is not None and Delta < tau:
        problems.append(f"policy: Delta={Delta} < tau={tau} violates Δ ≥ τ")
    if Delta is not None and Delta < 1:
        problems.append("policy.Delta must be >= 1")
    if delta_hat is not None and not 0.0 < delta_hat < 1.0:
        problems.append(f"policy.delta_hat={delta_hat} must lie in (0, 1)")
    elif u_ref is not None and not 0.0 <= u_ref <= 1.0 - delta_hat:
        problems.append(f"policy.u_ref={u_ref} outside [0, 1 - delta_hat]")
    if alignment not in ALIGNMENTS:
        problems.append(f"policy.alignment: expected one of {sorted(ALIGNMENTS)}, got {alignment!r}")
    policy = PolicyConfig(tau or 0, Delta or 1, delta_hat or 0.2, u_ref, alignment)

    params_raw = raw.get("parameters")
    if params_override is not None:
        merged = dict(params_raw) if isinstance(params_raw, Mapping) else {}
        merged.update(params_override)
        params_raw = merged
    parameters: dict[str, float] | None = None
    if params_raw is None or params_raw == EXTERNAL_REQUIRED:
        problems.append(f"parameters: {CHINA_SOURCE_HINT}" if model == "china9" else "parameters: missing")
    elif not isinstance(params_raw, Mapping):
        problems.append("parameters: expected a mapping")
    else:
        allowed = set(param_names(params_type)) - _DERIVED_PARAMS
        unknown = set(params_raw) - allowed
        if unknown:
            problems.append(f"parameters: unknown names {sorted(unknown)}")
        placeholders = sorted(k for k, v in params_raw.items() if v == EXTERNAL_REQUIRED)
        if placeholders:
            problems.append(f"parameters {placeholders} are placeholders: {CHINA_SOURCE_HINT}")
        parameters = {}
        for k in sorted(allowed & set(params_raw)):
            if k in placeholders:
                continue
            v = _num(params_raw, k, problems, "parameters")
            if v is not None:
                parameters[k] = v
        if not problems:
            try:
                extra = {"N": population if population is not None else math.fsum(ic.values()), "delta_hat": delta_hat}
                params_type(**parameters, **extra)
            except TypeError as exc:
                problems.append(f"parameters: {exc}")
            except ValueError as exc:
                problems.append(f"parameters: {exc}")

    indicators: dict[str, IndicatorConfig] = {}
    ind_raw = raw.get("indicators")
    if not isinstance(ind_raw, Mapping) or not ind_raw:
        problems.append("indicators: expected a non-empty mapping of id -> indicator")
        ind_raw = {}
    for key, d in ind_raw.items():
        where = f"indicators.{key}"
        if not isinstance(d, Mapping):
            problems.append(f"{where}: expected a mapping")
            continue
        obs = d.get("observation")
        agg = d.get("aggregator", "mean")
        weights = d.get("weights")
        if obs != CUSTOM and obs not in OBSERVATIONS:
            problems.append(f"{where}.observation: unknown tag {obs!r}")
        elif obs != CUSTOM and OBSERVATIONS[obs][0] is not state_type:
            problems.append(f"{where}.observation: {obs!r} does not apply to model {model}")
        if obs == CUSTOM:
            if not isinstance(weights, (list, tuple)) or len(weights) != len(state_type._fields):
                problems.append(f"{where}.weights: need {len(state_type._fields)} weights for {model}")
            else:
                weights = tuple(float(w) for w in weights)
        else:
            weights = None
        if agg not in AGGREGATORS:
            problems.append(f"{where}.aggregator: expected one of {list(AGGREGATORS)}, got {agg!r}")
        elif agg.startswith("variation_rate") and tau is not None and tau < 1:
            problems.append(f"{where}: {agg} needs tau >= 1")
        per_capita = d.get("per_capita")
        if per_capita is not None:
            per_capita = _num(d, "per_capita", problems, where)
            if per_capita is not None and per_capita <= 0:
                problems.append(f"{where}.per_capita must be positive")
        grid = None
        if d.get("grid") is not None:
            g = d["grid"]
            kind = g.get("kind", "log")
            lo = _num(g, "min", problems, f"{where}.grid")
            hi = _num(g, "max", problems, f"{where}.grid")
            n = _num(g, "n", problems, f"{where}.grid", 64, int)
            if kind not in ("log", "linear"):
                problems.append(f"{where}.grid.kind must be 'log' or 'linear'")
            elif lo is not None and hi is not None:
                if not lo < hi:
                    problems.append(f"{where}.grid: min must be < max")
                if kind == "log" and lo <= 0:
                    problems.append(f"{where}.grid: log grids need min > 0")
            if n is not None and n < 1:
                problems.append(f"{where}.grid.n must be >= 1")
            grid = GridConfig(kind, lo or 0.0, hi or 1.0, n or 64)
        indicators[str(key)] = IndicatorConfig(str(obs), str(agg), per_capita, weights, grid)

    out_raw = raw.get("outcomes") or {}
    peak = out_raw.get("peak")
    if peak not in OBSERVATIONS or OBSERVATIONS[peak][0] is not state_type:
        problems.append(f"outcomes.peak: {peak!r} is not an observation of model {model}")
    finals = tuple(out_raw.get("finals") or ())
    bad_finals = [c for c in finals if c not in state_type._fields]
    if bad_finals:
        problems.append(f"outcomes.finals: unknown compartments {bad_finals}")
    outcomes = OutcomesConfig(str(peak), str(out_raw.get("label", "peak")), finals)

    if problems:
        raise ConfigError(problems)
    return ScenarioConfig(
        name=name,
        model=model,
        parameters=parameters,
        initial_conditions=ic,
        t0=t0,
        horizon_days=horizon,
        policy=policy,
        indicators=indicators,
        outcomes=outcomes,
        population=population,
        description=str(raw.get("description", "")),
    )


def parse_yaml(text: str, source: str = "<string>") -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark is not None else source
        raise ConfigError(f"{where}: {getattr(exc, 'problem', None) or exc}") from exc


def load_params(path: str | os.PathLike) -> dict[str, float]:
    raw = parse_yaml(Path(path).read_text(encoding="utf-8"), str(path))
    if isinstance(raw, Mapping) and isinstance(raw.get("parameters"), Mapping):
        raw = raw["parameters"]
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: expected a mapping of parameter name -> value")
    return dict(raw)


def load_scenario(path: str | os.PathLike, params_override: Mapping[str, float] | None = None) -> ScenarioConfig:
    """Read and validate a scenario file (or the name of a bundled scenario)."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_scenarios():
        text = resources.files(__package__).joinpath("scenarios", f"{path}.yaml").read_text(encoding="utf-8")
    else:
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    return scenario_from_dict(parse_yaml(text, str(path)), params_override)


def bundled_scenarios() -> list[str]:
    folder = resources.files(__package__).joinpath("scenarios")
    return sorted(f.name[: -len(".yaml")] for f in folder.iterdir() if f.name.endswith(".yaml"))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files(__package__).joinpath("scenarios", f"{name}.yaml")))


# ---------------------------------------------------------------- outputs
def write_text_atomic(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    engine_version: str = __version__
    timestamp: str = field(default_factory=lambda: dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"))
    outputs: tuple[str, ...] = ()
    command: str = ""

    def write(self, path: str | os.PathLike) -> Path:
        return write_text_atomic(path, json.dumps(asdict(self), indent=2) + "\n")
