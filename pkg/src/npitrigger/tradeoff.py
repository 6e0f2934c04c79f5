"""Outcomes, threshold sweeps and comparison of trade-off curves.

A trade-off curve is the set of outcome vectors produced by one indicator
when its threshold runs over a grid.  By convention every outcome is to be
minimised; the last outcome is the compared quantity (days in lockdown) and
the others are objectives bounded from above (e.g. peak ICU demand).
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .dynamics import CompartmentModel, Trajectory
from .errors import EngineError, InfeasibleObjectiveError
from .indicators import IndicatorSpec, ObservationKind
from .trigger import APPLIED, RELEASED, SwitchLog, TriggerPolicy, simulate_closed_loop

LOCKDOWN = "lockdown_pct"

VERDICTS = ("a_dominates", "b_dominates", "crossing", "incomparable", "incomparable-by-tie")


@dataclass(frozen=True)
class OutcomeVec:
    labels: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.values) or len(self.labels) < 2:
            raise ValueError("an outcome vector needs at least two labelled values")
        if LOCKDOWN in self.labels and not 0.0 <= self[LOCKDOWN] <= 100.0:
            raise ValueError(f"{LOCKDOWN}={self[LOCKDOWN]} outside [0, 100]")

    def __getitem__(self, label: str) -> float:
        return self.values[self.labels.index(label)]

    @property
    def objectives(self) -> tuple[float, ...]:
        return self.values[:-1]

    @property
    def compared(self) -> float:
        return self.values[-1]


def outcome_peak(traj: Trajectory, obs: ObservationKind) -> float:
    """Maximum of an observation over every stored day, ``t0 .. T+1``."""
    weights = np.asarray(obs.weights_for(traj.compartments))
    return float(np.max(traj.states @ weights))


def outcome_lockdown_pct(log: SwitchLog, t0: int, horizon: int) -> float:
    """Percentage of ``[t0, horizon]`` spent in the applied regime."""
    if log.t0 != t0 or log.horizon != horizon:
        raise ValueError("switch log does not cover the requested period")
    if horizon == t0:
        return 100.0 if log.initial_regime == APPLIED else 0.0
    times = list(log.trigger_times) + [horizon]
    # Applied at t0: sum t_{2k+1} - t_{2k}; otherwise t_{2k+2} - t_{2k+1}.
    first = 0 if log.initial_regime == APPLIED else 1
    days = sum(times[i + 1] - times[i] for i in range(first, len(times) - 1, 2))
    return 100.0 * days / (horizon - t0)


@dataclass(frozen=True)
class OutcomeSpec:
    """Which outcomes to report: a peak observation, optional final-value
    compartments (e.g. ``D`` for total deaths), and the lockdown percentage."""

    peak: ObservationKind
    peak_label: str = "peak"
    finals: tuple[str, ...] = ()

    @property
    def labels(self) -> tuple[str, ...]:
        return (self.peak_label, *(f"final_{c}" for c in self.finals), LOCKDOWN)

    def evaluate(self, traj: Trajectory, log: SwitchLog) -> OutcomeVec:
        values = [outcome_peak(traj, self.peak)]
        values += [float(traj.column(c)[-1]) for c in self.finals]
        values.append(outcome_lockdown_pct(log, traj.t0, traj.horizon))
        return OutcomeVec(self.labels, tuple(values))


@dataclass(frozen=True)
class Scenario:
    """Everything but the indicator and threshold needed to run a policy."""

    name: str
    model: CompartmentModel
    x0: tuple
    t0: int
    horizon: int
    Delta: int
    u_ref: float
    outcomes: OutcomeSpec
    alignment: str = "identity"

    def policy(self, indicator: IndicatorSpec, theta: float) -> TriggerPolicy:
        return TriggerPolicy.build(
            indicator, theta, self.Delta, self.model.delta_hat, u_ref=self.u_ref, alignment=self.alignment
        )

    def run(self, indicator: IndicatorSpec, theta: float):
        return simulate_closed_loop(self.model, self.x0, self.policy(indicator, theta), self.t0, self.horizon)


def evaluate_policy(scenario: Scenario, indicator: IndicatorSpec, theta: float) -> OutcomeVec:
    try:
        traj, log = scenario.run(indicator, theta)
    except EngineError as exc:
        raise type(exc)(f"theta={theta}: {exc}") from exc
    return scenario.outcomes.evaluate(traj, log)


@dataclass(frozen=True)
class ThresholdDomain:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        v = self.values
        if not v:
            raise ValueError("threshold domain is empty")
        if not all(math.isfinite(x) for x in v):
            raise ValueError("threshold domain values must be finite")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("threshold domain must be strictly increasing")

    @classmethod
    def log(cls, lo: float, hi: float, n: int) -> ThresholdDomain:
        return cls(tuple(float(x) for x in np.geomspace(lo, hi, n)))

    @classmethod
    def linear(cls, lo: float, hi: float, n: int) -> ThresholdDomain:
        return cls(tuple(float(x) for x in np.linspace(lo, hi, n)))


@dataclass(frozen=True)
class TradeOffPoint:
    theta: float
    outcome: OutcomeVec | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.outcome is not None


@dataclass(frozen=True)
class TradeOffCurve:
    points: tuple[TradeOffPoint, ...]
    labels: tuple[str, ...]
    indicator_id: str = ""
    tau: int | None = None
    Delta: int | None = None
    scenario_id: str = ""

    def ok_points(self) -> list[TradeOffPoint]:
        return [p for p in self.points if p.ok]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["theta", *self.labels, "status"])
        for p in self.points:
            if p.ok:
                assert p.outcome is not None
                writer.writerow([repr(p.theta), *(repr(v) for v in p.outcome.values), "ok"])
            else:
                writer.writerow([repr(p.theta), *([""] * len(self.labels)), f"error: {p.error}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, indicator_id: str = "") -> TradeOffCurve:
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        if header[0] != "theta" or header[-1] != "status" or len(header) < 4:
            raise ValueError("curve CSV header must be theta,<outcomes...>,status")
        labels = tuple(header[1:-1])
        points = []
        for row in rows[1:]:
            if not row:
                continue
            theta = float(row[0])
            if row[-1] == "ok":
                points.append(TradeOffPoint(theta, OutcomeVec(labels, tuple(float(v) for v in row[1:-1]))))
            else:
                points.append(TradeOffPoint(theta, error=row[-1].removeprefix("error: ")))
        return cls(tuple(points), labels, indicator_id=indicator_id)


def _evaluate_point(args: tuple[Scenario, IndicatorSpec, float]) -> TradeOffPoint:
    scenario, indicator, theta = args
    try:
        return TradeOffPoint(theta, evaluate_policy(scenario, indicator, theta))
    except (EngineError, ValueError) as exc:
        return TradeOffPoint(theta, error=str(exc))


def sweep(
    scenario: Scenario,
    indicator: IndicatorSpec,
    domain: ThresholdDomain,
    indicator_id: str = "",
    parallel: int = 1,
) -> TradeOffCurve:
    """Evaluate one policy per threshold; failed points are kept with their error."""
    jobs = [(scenario, indicator, theta) for theta in domain.values]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            points = list(pool.map(_evaluate_point, jobs, chunksize=max(1, len(jobs) // (4 * parallel))))
    else:
        points = [_evaluate_point(job) for job in jobs]
    return TradeOffCurve(
        tuple(points),
        scenario.outcomes.labels,
        indicator_id=indicator_id,
        tau=indicator.tau,
        Delta=scenario.Delta,
        scenario_id=scenario.name,
    )


def worker_count(requested: int | None = None) -> int:
    env = os.environ.get("TRIGGER_SIM_THREADS")
    if env:
        return max(1, int(env))
    return max(1, requested or 1)


@dataclass(frozen=True)
class LookupResult:
    theta: float
    outcome: OutcomeVec
    refined: bool = False
    non_monotone: bool = False
    evaluations: int = 0

    @property
    def compared(self) -> float:
        return self.outcome.compared


def _as_targets(target: float | Sequence[float], n: int) -> tuple[float, ...]:
    targets = (float(target),) if np.isscalar(target) else tuple(float(t) for t in target)  # type: ignore[arg-type]
    if len(targets) != n:
        raise ValueError(f"expected {n} objective bound(s), got {len(targets)}")
    return targets


def _feasible(outcome: OutcomeVec, targets: Sequence[float]) -> bool:
    return all(v <= t for v, t in zip(outcome.objectives, targets))


def _rank(p: TradeOffPoint) -> tuple:
    assert p.outcome is not None
    # Least lockdown first, then the objective closest to its bound.
    return (p.outcome.compared, tuple(-v for v in p.outcome.objectives), p.theta)


def objective_lookup(
    curve: TradeOffCurve,
    target: float | Sequence[float],
    evaluate: Callable[[float], OutcomeVec] | None = None,
    rel_tol: float = 0.01,
    max_iter: int = 40,
) -> LookupResult:
    """Lowest compared outcome among points meeting the objective bound(s).

    With ``evaluate`` (threshold -> outcome) the best grid point is refined by
    bisection towards each infeasible grid neighbour, assuming the objective is
    locally monotone in the threshold.  Refinement stops once the objective is
    within ``rel_tol`` of the bound or the bracket collapses; a midpoint that
    breaks monotonicity sets ``non_monotone`` and the best point seen so far is
    returned.
    """
    ok = sorted(curve.ok_points(), key=lambda p: p.theta)
    if not ok:
        raise InfeasibleObjectiveError("curve has no successfully evaluated point")
    targets = _as_targets(target, len(ok[0].outcome.objectives))  # type: ignore[union-attr]
    feasible = [p for p in ok if _feasible(p.outcome, targets)]  # type: ignore[arg-type]
    if not feasible:
        best_obj = min(p.outcome.objectives[0] for p in ok)  # type: ignore[union-attr]
        raise InfeasibleObjectiveError(f"no threshold reaches the objective {targets}; best attained {best_obj:.6g}")
    best = min(feasible, key=_rank)
    if evaluate is None or len(targets) != 1:
        return LookupResult(best.theta, best.outcome)  # type: ignore[arg-type]

    bound = targets[0]

    def close_enough(p: TradeOffPoint) -> bool:
        return abs(p.outcome.objectives[0] - bound) <= rel_tol * abs(bound)  # type: ignore[union-attr]

    idx = next(i for i, p in enumerate(ok) if p is best)
    neighbours = [ok[j] for j in (idx - 1, idx + 1) if 0 <= j < len(ok) and not _feasible(ok[j].outcome, targets)]  # type: ignore[arg-type]
    anchor = best
    refined = non_monotone = False
    evaluations = 0
    for nb in neighbours:
        if close_enough(best):
            break
        lo, hi = anchor, nb  # lo feasible, hi infeasible
        for _ in range(max_iter):
            if abs(hi.theta - lo.theta) <= 1e-9 * max(1.0, abs(lo.theta)):
                break
            mid_theta = 0.5 * (lo.theta + hi.theta)
            mid = TradeOffPoint(mid_theta, evaluate(mid_theta))
            evaluations += 1
            a, b, m = lo.outcome.objectives[0], hi.outcome.objectives[0], mid.outcome.objectives[0]  # type: ignore[union-attr]
            if not min(a, b) <= m <= max(a, b):
                non_monotone = True
            if _feasible(mid.outcome, targets):  # type: ignore[arg-type]
                if _rank(mid) < _rank(best):
                    best, refined = mid, True
                lo = mid
            else:
                hi = mid
            if close_enough(best):
                break
    return LookupResult(best.theta, best.outcome, refined, non_monotone, evaluations)  # type: ignore[arg-type]


@dataclass(frozen=True)
class ComparisonReport:
    targets: tuple[float, ...]
    a_values: tuple[float | None, ...]
    b_values: tuple[float | None, ...]
    verdict: str
    a_id: str = "a"
    b_id: str = "b"
    details: dict = field(default_factory=dict)


def _lookup_or_none(curve: TradeOffCurve, target: float) -> float | None:
    try:
        return objective_lookup(curve, target).compared
    except InfeasibleObjectiveError:
        return None


def dominance(a: TradeOffCurve, b: TradeOffCurve, objectives: Iterable[float]) -> ComparisonReport:
    """Compare the compared outcome of two curves at each objective bound."""
    targets = tuple(float(t) for t in objectives)
    a_vals = tuple(_lookup_or_none(a, t) for t in targets)
    b_vals = tuple(_lookup_or_none(b, t) for t in targets)
    pairs = [(x, y) for x, y in zip(a_vals, b_vals) if x is not None and y is not None]
    a_better = sum(x < y for x, y in pairs)
    b_better = sum(y < x for x, y in pairs)
    ties = len(pairs) - a_better - b_better
    if not pairs:
        verdict = "incomparable"
    elif a_better == len(pairs):
        verdict = "a_dominates"
    elif b_better == len(pairs):
        verdict = "b_dominates"
    elif a_better and b_better:
        verdict = "crossing"
    elif ties == len(pairs):
        verdict = "incomparable-by-tie"
    else:
        verdict = "incomparable"
    return ComparisonReport(
        targets,
        a_vals,
        b_vals,
        verdict,
        a.indicator_id or "a",
        b.indicator_id or "b",
        {"comparable": len(pairs), "a_better": a_better, "b_better": b_better, "ties": ties},
    )


def objective_grid(curves: Sequence[TradeOffCurve], n: int = 32) -> tuple[float, ...]:
    """Objective bounds spanning the range every curve can attain."""
    lows, highs = [], []
    for c in curves:
        vals = [p.outcome.objectives[0] for p in c.ok_points()]  # type: ignore[union-attr]
        if not vals:
            return ()
        lows.append(min(vals))
        highs.append(max(vals))
    lo, hi = max(lows), min(highs)
    if hi < lo:
        return ()
    return tuple(float(x) for x in np.linspace(lo, hi, n))


def extreme_outcomes(scenario: Scenario, indicator: IndicatorSpec) -> dict[str, OutcomeVec]:
    return {
        RELEASED: evaluate_policy(scenario, indicator, math.inf),
        APPLIED: evaluate_policy(scenario, indicator, -math.inf),
    }


@dataclass(frozen=True)
class CompareRow:
    indicator_id: str
    lookup: LookupResult | None
    error: str | None = None


@dataclass(frozen=True)
class CompareResult:
    target: float
    rows: tuple[CompareRow, ...]
    curves: dict[str, TradeOffCurve]
    reports: tuple[ComparisonReport, ...]

    def lockdown(self) -> dict[str, float | None]:
        return {r.indicator_id: (r.lookup.compared if r.lookup else None) for r in self.rows}

    def ranking(self) -> list[str]:
        """Feasible indicators from least to most lockdown."""
        feasible = [r for r in self.rows if r.lookup is not None]
        return [r.indicator_id for r in sorted(feasible, key=lambda r: r.lookup.compared)]  # type: ignore[union-attr]


def compare_indicators(
    scenario: Scenario,
    indicators: dict[str, tuple[IndicatorSpec, ThresholdDomain]],
    target: float,
    parallel: int = 1,
    n_objectives: int = 32,
) -> CompareResult:
    """Sweep every indicator, look up the objective and compare curves pairwise."""
    curves: dict[str, TradeOffCurve] = {}
    rows = []
    for ind_id, (spec, domain) in indicators.items():
        curve = sweep(scenario, spec, domain, indicator_id=ind_id, parallel=parallel)
        curves[ind_id] = curve
        try:
            result = objective_lookup(curve, target, evaluate=lambda th, s=spec: evaluate_policy(scenario, s, th))
            rows.append(CompareRow(ind_id, result))
        except InfeasibleObjectiveError as exc:
            rows.append(CompareRow(ind_id, None, str(exc)))
    ids = list(curves)
    reports = []
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            grid = objective_grid([curves[a], curves[b]], n_objectives)
            reports.append(dominance(curves[a], curves[b], grid))
    return CompareResult(float(target), tuple(rows), curves, tuple(reports))
