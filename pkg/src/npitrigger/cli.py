"""Command-line driver: ``npitrigger simulate|sweep|compare|lookup``.

Exit codes: 0 success, 2 configuration error, 3 engine error, 4 infeasible
objective.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, EngineError, InfeasibleObjectiveError
from .scenario import RunManifest, ScenarioConfig, load_params, load_scenario, write_text_atomic
from .tradeoff import (
    CompareResult,
    TradeOffCurve,
    compare_indicators,
    evaluate_policy,
    objective_lookup,
    sweep,
    worker_count,
)
from .trigger import indicator_series

log = logging.getLogger("npitrigger")

EXIT_OK, EXIT_CONFIG, EXIT_ENGINE, EXIT_INFEASIBLE = 0, 2, 3, 4


def _load(args) -> ScenarioConfig:
    override = load_params(args.params) if getattr(args, "params", None) else None
    return load_scenario(args.scenario, override)


def _indicator_ids(cfg: ScenarioConfig, spec: str | None) -> list[str]:
    if not spec or spec == "all":
        return list(cfg.indicators)
    ids = [s.strip() for s in spec.split(",") if s.strip()]
    for i in ids:
        cfg.indicator(i)  # raises ConfigError for unknown ids
    return ids


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if not args.indicator or "," in args.indicator:
        raise ConfigError("simulate needs exactly one --indicator")
    spec = cfg.indicator(args.indicator)
    scenario = cfg.build()
    traj, switch_log = scenario.run(spec, args.theta)
    outcome = scenario.outcomes.evaluate(traj, switch_log)

    values = indicator_series(traj, spec)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "date", *traj.compartments, "u", "indicator", "regime"])
    for i, row in enumerate(traj.states):
        t = traj.t0 + i
        if i < len(traj.controls):
            u, regime = repr(float(traj.controls[i])), switch_log.regime_at(t)
        else:
            u, regime = "", ""
        w.writerow([t, cfg.date_of(t).isoformat(), *(repr(float(v)) for v in row), u, repr(float(values[i])), regime])
    out = Path(args.out)
    files = [
        write_text_atomic(out / f"trajectory_{args.indicator}.csv", buf.getvalue()),
    ]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "t", "date", "regime"])
    for k, (t, regime) in enumerate(zip(switch_log.trigger_times, switch_log.regimes())):
        w.writerow([k, t, cfg.date_of(t).isoformat(), regime])
    files.append(write_text_atomic(out / f"switchlog_{args.indicator}.csv", buf.getvalue()))
    RunManifest(cfg.config_hash(), outputs=tuple(str(f) for f in files), command="simulate").write(out / "manifest.json")

    print(",".join(outcome.labels))
    print(",".join(_fmt(v) for v in outcome.values))
    return EXIT_OK


def _plot(curves: dict[str, TradeOffCurve], path: Path, target: float | None = None) -> Path | None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:  # pragma: no cover - matplotlib is optional
        log.warning("matplotlib unavailable; skipping chart")
        return None
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for ind_id, curve in curves.items():
        pts = sorted((p.outcome.values[0], p.outcome.compared) for p in curve.ok_points())  # type: ignore[union-attr]
        if pts:
            ax.plot(*zip(*pts), marker=".", label=ind_id)
    if target is not None:
        ax.axvline(target, color="grey", linestyle="--", linewidth=0.8)
    labels = next(iter(curves.values())).labels
    ax.set_xlabel(labels[0])
    ax.set_ylabel("% of days in lockdown")
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def cmd_sweep(args) -> int:
    cfg = _load(args)
    scenario = cfg.build()
    parallel = worker_count(args.parallel)
    out = Path(args.out)
    curves, files = {}, []
    for ind_id in _indicator_ids(cfg, args.indicator):
        curve = sweep(scenario, cfg.indicator(ind_id), cfg.domain(ind_id, args.grid), ind_id, parallel)
        curves[ind_id] = curve
        files.append(write_text_atomic(out / f"curve_{ind_id}.csv", curve.to_csv()))
        failed = sum(not p.ok for p in curve.points)
        print(f"{ind_id}: {len(curve.points)} points, {failed} failed -> {files[-1]}")
    if args.chart:
        chart = _plot(curves, out / "tradeoff.svg")
        if chart:
            files.append(chart)
    RunManifest(cfg.config_hash(), outputs=tuple(str(f) for f in files), command="sweep").write(out / "manifest.json")
    return EXIT_OK


def format_compare(result: CompareResult) -> str:
    lines = ["indicator,theta,lockdown_pct"]
    for row in result.rows:
        if row.lookup is None:
            lines.append(f"{row.indicator_id},,infeasible")
        else:
            flag = " (non-monotone neighbourhood)" if row.lookup.non_monotone else ""
            lines.append(f"{row.indicator_id},{_fmt(row.lookup.theta)},{row.lookup.compared:.1f}{flag}")
    ranking = result.ranking()
    if ranking:
        lines.append("ranking (least lockdown first): " + " < ".join(ranking))
    for rep in result.reports:
        lines.append(f"dominance {rep.a_id} vs {rep.b_id}: {rep.verdict}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    if args.target is None:
        raise ConfigError("compare needs --target")
    cfg = _load(args)
    scenario = cfg.build()
    ids = _indicator_ids(cfg, args.indicator)
    indicators = {i: (cfg.indicator(i), cfg.domain(i, args.grid)) for i in ids}
    result = compare_indicators(scenario, indicators, args.target, parallel=worker_count(args.parallel))
    print(format_compare(result))
    if args.out:
        out = Path(args.out)
        files = [write_text_atomic(out / f"curve_{i}.csv", c.to_csv()) for i, c in result.curves.items()]
        files.append(write_text_atomic(out / "compare.csv", format_compare(result) + "\n"))
        if args.chart:
            chart = _plot(result.curves, out / "tradeoff.svg", args.target)
            if chart:
                files.append(chart)
        RunManifest(cfg.config_hash(), outputs=tuple(str(f) for f in files), command="compare").write(
            out / "manifest.json"
        )
    return EXIT_INFEASIBLE if any(r.lookup is None for r in result.rows) else EXIT_OK


def cmd_lookup(args) -> int:
    if args.target is None:
        raise ConfigError("lookup needs --target")
    path = Path(args.curve)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    ind_id = args.indicator or path.stem.removeprefix("curve_")
    try:
        curve = TradeOffCurve.from_csv(text, ind_id)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    result = objective_lookup(curve, args.target)
    print("indicator,theta,lockdown_pct")
    print(f"{ind_id},{_fmt(result.theta)},{_fmt(result.compared)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npitrigger", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, scenario: bool = True) -> None:
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario YAML file or bundled name (chile, china)")
            p.add_argument("--params", help="YAML file with the model parameter block (required for china)")
        p.add_argument("--indicator", help="indicator id, comma-separated list or 'all'")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("simulate", help="run one closed-loop policy and write the daily trajectory")
    common(p)
    p.add_argument("--theta", type=float, required=True)
    p.set_defaults(func=cmd_simulate, out="out")

    for name, func, help_ in (
        ("sweep", cmd_sweep, "compute trade-off curves over the threshold grid"),
        ("compare", cmd_compare, "look up an objective on every curve and compare indicators"),
    ):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("--grid", type=int, help="number of thresholds per indicator")
        p.add_argument("--parallel", type=int, default=1, help="worker processes (TRIGGER_SIM_THREADS overrides)")
        p.add_argument("--chart", action="store_true", help="also write tradeoff.svg")
        if name == "compare":
            p.add_argument("--target", type=float, help="upper bound on the peak outcome")
        p.set_defaults(func=func)
    sub.choices["sweep"].set_defaults(out="out")

    p = sub.add_parser("lookup", help="objective lookup on a stored curve CSV")
    common(p, scenario=False)
    p.add_argument("--curve", required=True, help="curve CSV written by sweep")
    p.add_argument("--target", type=float)
    p.set_defaults(func=cmd_lookup)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleObjectiveError as exc:
        print(f"infeasible objective: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except EngineError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
