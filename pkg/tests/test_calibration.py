from dataclasses import replace

import pytest

from dustsense import scenarios
from dustsense.calibration import (
    PAPER_TARGETS, InfeasibleTargets, Targets, angle_profile, calibrate, predicted_daily,
)
from dustsense.simulator import DustParams, iter_days
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture(scope="module")
def fitted():
    return calibrate(scenarios.april_month(), PAPER_TARGETS, base=DustParams())


def test_residuals_within_tolerance(fitted):
    tol = {7: 1.0, 15: 1.5, 30: 2.0}
    assert [r[0] for r in fitted.residuals_pp] == [7, 15, 30]
    for day, target, value, res in fitted.residuals_pp:
        assert abs(res) <= tol[day], (day, value)
        assert abs(res) <= 1.0


def test_angle_anchors(fitted):
    assert abs(fitted.angle_residuals_pp["midday"]) <= 1.0
    assert abs(fitted.angle_residuals_pp["afternoon"]) <= 1.0
    assert fitted.params.c0 + fitted.params.c1 == pytest.approx(1.0)


def test_k_held_fixed(fitted):
    assert fitted.params.k == DustParams().k


def test_fit_matches_frozen_preset(fitted):
    p = fitted.params
    assert p.beta == pytest.approx(scenarios.CALIBRATED.beta, rel=1e-4)
    assert p.b_max == pytest.approx(scenarios.CALIBRATED.b_max, rel=1e-4)
    assert p.c1 == pytest.approx(scenarios.CALIBRATED.c1, rel=1e-4)


def test_fitted_values_recomputed(fitted):
    frames = list(iter_days(scenarios.april_month(), params=fitted.params))
    for day, _, value, _ in fitted.residuals_pp:
        assert value == pytest.approx(100 * predicted_daily(frames[day - 1], fitted.params))


def test_midday_above_afternoon(fitted):
    frame = list(iter_days(scenarios.april_month(), params=fitted.params))[6]
    mid, aft = angle_profile(frame, fitted.params.c1)
    assert mid > 1.0 > aft


def test_single_target_warns():
    res = calibrate(scenarios.april_month(), Targets(daily=[(15, 19.05)]))
    assert any("underdetermined" in w for w in res.warnings)
    assert abs(res.residuals_pp[0][3]) < 1e-4


def test_two_targets_warn_exact():
    res = calibrate(scenarios.april_month(), Targets(daily=[(7, 8.44), (30, 31.0)]))
    assert any("exact" in w for w in res.warnings)
    assert all(abs(r[3]) < 1e-4 for r in res.residuals_pp)


def test_decreasing_targets_without_rain():
    with pytest.raises(InfeasibleTargets, match="no rain or cleaning"):
        calibrate(scenarios.april_month(), Targets(daily=[(7, 20.0), (15, 10.0)]))


def test_decreasing_targets_with_rain_allowed():
    sc = replace(scenarios.april_month(), rain_series=[0.0] * 10 + [30.0] + [0.0] * 19)
    # feasibility passes; the fit itself may be poor
    calibrate(sc, Targets(daily=[(7, 8.0), (15, 5.0)]))


@pytest.mark.parametrize("targets", [
    Targets(daily=[]),
    Targets(daily=[(0, 5.0)]),
    Targets(daily=[(31, 5.0)]),
    Targets(daily=[(5, 120.0)]),
])
def test_bad_targets(targets):
    with pytest.raises(InfeasibleTargets):
        calibrate(scenarios.april_month(), targets)


def test_parse_targets_file():
    t = Targets.parse((DATA / "paper_targets.csv").read_text())
    assert t.daily == PAPER_TARGETS.daily
    assert t.tolerance_pp == PAPER_TARGETS.tolerance_pp
    assert (t.midday_pct, t.afternoon_pct, t.angle_day) == (9.86, 6.17, 7)


def test_parse_minimal():
    t = Targets.parse("30,31\n7,8.44\n")
    assert t.daily == [(7, 8.44), (30, 31.0)]
    assert t.midday_pct is None
