from __future__ import annotations

import math
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CHILE_X0, CHINA_X0
from npitrigger.dynamics import ChileModel, simulate_open_loop
from npitrigger.errors import IndicatorError
from npitrigger.indicators import (
    EventSet,
    HistoryWindow,
    IndicatorSpec,
    ObservationKind,
    in_event_set,
    ind_mean,
    ind_mean_diff,
    ind_variation_rate,
    ind_variation_rate_diff,
    indicator_value,
    observe,
)
from npitrigger.trigger import history_at

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
positive = st.floats(min_value=1e-3, max_value=1e6)


def test_builtin_observations_on_initial_states():
    assert observe(ObservationKind("chile_icu"), CHILE_X0) == 433
    assert observe(ObservationKind("chile_active"), CHILE_X0) == 2540 + 1157 + 433
    assert observe(ObservationKind("china_hospitalized"), CHINA_X0) == 2035 + 270
    assert observe(ObservationKind("china_detected"), CHINA_X0) == 2


def test_observation_scale_and_custom_weights():
    assert observe(ObservationKind("chile_icu", scale=0.5), CHILE_X0) == 216.5
    kind = ObservationKind("custom_linear", weights=(0, 0, 0, 1, 0, 1, 1, 0))
    assert observe(kind, CHILE_X0) == observe(ObservationKind("chile_active"), CHILE_X0)


def test_observation_rejects_wrong_model():
    with pytest.raises(ValueError):
        observe(ObservationKind("china_detected"), CHILE_X0)
    with pytest.raises(ValueError):
        ObservationKind("icu_beds")


@pytest.mark.parametrize(
    "fn, obs, expected",
    [
        (ind_mean, [1, 2, 3, 4], 2.5),
        (ind_mean_diff, [1, 2, 3, 4], 0.75),
        (ind_mean_diff, [5], 0.0),
        (ind_variation_rate, [2, 3, 5], 1.5),
        (ind_variation_rate_diff, [2, 4, 2], 0.25),
        (ind_variation_rate_diff, [1, 2, 4, 8], 1.0),
    ],
)
def test_aggregator_examples(fn, obs, expected):
    assert fn(obs) == pytest.approx(expected, rel=1e-15)


def test_variation_rates_reject_zero_denominators():
    with pytest.raises(IndicatorError):
        ind_variation_rate([0.0, 1.0])
    with pytest.raises(IndicatorError):
        ind_variation_rate_diff([1.0, 0.0, 1.0])
    # still a ZeroDivisionError for callers that only know the builtin
    with pytest.raises(ZeroDivisionError):
        ind_variation_rate([0.0, 1.0])


def test_spec_validation():
    with pytest.raises(ValueError, match="tau >= 1"):
        IndicatorSpec(ObservationKind("chile_icu"), "variation_rate", tau=0)
    with pytest.raises(ValueError):
        IndicatorSpec(ObservationKind("chile_icu"), "median")
    spec = IndicatorSpec(ObservationKind("chile_icu"), "mean", tau=2)
    with pytest.raises(ValueError, match="expected tau"):
        spec.aggregate([1.0, 2.0])


@given(st.lists(finite, min_size=1, max_size=30))
def test_mean_diff_telescopes(obs):
    explicit = math.fsum(b - a for a, b in zip(obs, obs[1:])) / len(obs)
    assert ind_mean_diff(obs) == pytest.approx(explicit, rel=1e-12, abs=1e-6)


@given(st.lists(finite, min_size=1, max_size=30), finite)
def test_mean_shift_equivariant(obs, c):
    assert ind_mean([o + c for o in obs]) == pytest.approx(ind_mean(obs) + c, rel=1e-12, abs=1e-6)
    assert ind_mean_diff([o + c for o in obs]) == pytest.approx(ind_mean_diff(obs), rel=1e-9, abs=1e-6)


@given(st.lists(positive, min_size=2, max_size=30), st.floats(min_value=1e-3, max_value=1e3))
def test_scale_invariance_of_rates(obs, s):
    scaled = [s * o for o in obs]
    assert ind_variation_rate(scaled) == pytest.approx(ind_variation_rate(obs), rel=1e-9, abs=1e-12)
    assert ind_variation_rate_diff(scaled) == pytest.approx(ind_variation_rate_diff(obs), rel=1e-9, abs=1e-12)
    assert ind_mean(scaled) == pytest.approx(s * ind_mean(obs), rel=1e-12)


@given(st.floats(min_value=1e-3, max_value=1e3), st.floats(min_value=0.1, max_value=3.0), st.integers(1, 20))
def test_geometric_window_has_constant_daily_rate(a, r, tau):
    obs = [a * r**k for k in range(tau + 1)]
    assert ind_variation_rate_diff(obs) == pytest.approx(r - 1, rel=1e-9, abs=1e-12)


@given(st.lists(finite, min_size=3, max_size=3), finite, finite)
def test_event_set_monotone_in_theta(obs, t1, t2):
    spec = IndicatorSpec(ObservationKind("custom_linear", weights=(1.0,)), "mean", tau=2)
    lo, hi = sorted((t1, t2))
    window = HistoryWindow(0, tuple((o,) for o in obs))
    if in_event_set(EventSet(spec, lo), window):
        assert in_event_set(EventSet(spec, hi), window)


def test_event_set_boundary_is_inclusive():
    spec = IndicatorSpec(ObservationKind("chile_icu"), "mean", tau=0)
    window = HistoryWindow(0, (CHILE_X0,))
    assert in_event_set(EventSet(spec, 433.0), window)
    assert not in_event_set(EventSet(spec, math.nextafter(433.0, 0.0)), window)
    assert in_event_set(EventSet(spec, math.inf), window)
    assert not in_event_set(EventSet(spec, -math.inf), window)


def test_event_set_checks_window_length():
    spec = IndicatorSpec(ObservationKind("chile_icu"), "mean", tau=3)
    with pytest.raises(ValueError, match="tau"):
        in_event_set(EventSet(spec, 0.0), HistoryWindow(0, (CHILE_X0,)))


def test_fifteen_day_icu_mean_matches_statistics():
    traj = simulate_open_loop(ChileModel(), CHILE_X0, [0.3] * 20)
    spec = IndicatorSpec(ObservationKind("chile_icu"), "mean", tau=14)
    window = history_at(traj, 17, 14)
    expected = statistics.fmean(float(traj.states[k, 6]) for k in range(3, 18))
    assert indicator_value(spec, window) == pytest.approx(expected, rel=1e-14)


@settings(max_examples=50)
@given(st.integers(0, 20), st.integers(0, 14))
def test_history_pads_with_initial_state(t, tau):
    traj = simulate_open_loop(ChileModel(), CHILE_X0, [0.0] * 20)
    window = history_at(traj, t, tau)
    assert len(window.entries) == tau + 1 and window.tau == tau
    for j, x in enumerate(window.entries):
        assert tuple(x) == tuple(traj.states[max(t - tau + j, 0)])
