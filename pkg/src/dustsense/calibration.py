"""Fit simulator constants to observed daily-average blockage targets."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from dustsense.simulator import DayFrame, DustParams, SimScenario, angle_factor, iter_days

log = logging.getLogger(__name__)

# midday is the hour centred on solar noon; afternoon is the last valid hour
MIDDAY_HALF_WIDTH_H = 0.5
LAST_HOUR_S = 3600


class InfeasibleTargets(ValueError):
    pass


@dataclass
class Targets:
    """Daily-average blockage targets in percent, keyed by 1-based scenario day.

    ``tolerance_pp`` weights each target in the fit (residual / tolerance).
    """

    daily: list[tuple[int, float]]
    tolerance_pp: dict[int, float] = field(default_factory=dict)
    midday_pct: Optional[float] = None
    afternoon_pct: Optional[float] = None
    angle_day: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "Targets":
        """Read ``day,blockage_pct[,tolerance_pp]`` rows.

        ``midday``/``afternoon`` rows set the angle anchors; their optional
        third column names the scenario day they were observed on.
        """
        t = cls(daily=[])
        for row in csv.reader(io.StringIO(text)):
            row = [c.strip() for c in row]
            if not row or not row[0] or row[0].startswith("#") or row[0].lower() == "day":
                continue
            key = row[0].lower()
            if key in ("midday", "afternoon"):
                setattr(t, f"{key}_pct", float(row[1]))
                if len(row) > 2 and row[2]:
                    t.angle_day = int(row[2])
            else:
                t.daily.append((int(row[0]), float(row[1])))
                if len(row) > 2 and row[2]:
                    t.tolerance_pp[int(row[0])] = float(row[2])
        t.daily.sort()
        return t


PAPER_TARGETS = Targets(daily=[(7, 8.44), (15, 19.05), (30, 31.0)],
                        tolerance_pp={7: 1.0, 15: 1.5, 30: 2.0},
                        midday_pct=9.86, afternoon_pct=6.17, angle_day=7)


@dataclass
class CalibrationResult:
    params: DustParams
    residuals_pp: list[tuple[int, float, float, float]]   # day, target, fitted, residual
    angle_residuals_pp: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def summary(self) -> str:
        p = self.params
        lines = [f"k={p.k:.6g} beta={p.beta:.6g} b_max={p.b_max:.6g} "
                 f"gamma={p.gamma:.6g} c0={p.c0:.6g} c1={p.c1:.6g}"]
        for day, target, fitted, res in self.residuals_pp:
            lines.append(f"day {day}: target {target:.2f}% fitted {fitted:.2f}% residual {res:+.2f} pp")
        for name, res in self.angle_residuals_pp.items():
            lines.append(f"{name}: residual {res:+.2f} pp")
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def _frames(scenario: SimScenario, params: DustParams) -> list[DayFrame]:
    return list(iter_days(scenario, params=params))


def _window_masks(frame: DayFrame) -> tuple[np.ndarray, np.ndarray]:
    valid = frame.valid
    noon_idx = int(np.argmax(frame.sin_elev))
    noon_t = frame.epoch[noon_idx]
    midday = valid & (np.abs(frame.epoch - noon_t) <= MIDDAY_HALF_WIDTH_H * 3600)
    last_valid = frame.epoch[valid].max()
    afternoon = valid & (frame.epoch > last_valid - LAST_HOUR_S)
    return midday, afternoon


def angle_profile(frame: DayFrame, c1: float) -> tuple[float, float]:
    """(midday, afternoon) mean angle factors for a noise-free day."""
    s = frame.sin_elev
    f = angle_factor(s, float(s[frame.valid].mean()), c1)
    midday, afternoon = _window_masks(frame)
    return float(f[midday].mean()), float(f[afternoon].mean())


def predicted_daily(frame: DayFrame, params: DustParams) -> float:
    v = frame.valid
    s = frame.sin_elev
    base = params.b_max * (1.0 - np.exp(-params.beta * frame.load[v]))
    return float(np.mean(base * angle_factor(s[v], float(s[v].mean()), params.c1)))


def check_feasible(scenario: SimScenario, targets: Targets) -> None:
    """Reject targets that fall over time with nothing in between to remove dust."""
    cleaning = set(scenario.cleaning_dates)
    days = scenario.dates()
    for (d1, v1), (d2, v2) in zip(targets.daily, targets.daily[1:]):
        if v2 >= v1:
            continue
        between = range(d1, d2)  # indexes of days d1+1..d2
        washed = any(scenario.rain_series[i] > 0 or days[i] in cleaning for i in between)
        if not washed:
            raise InfeasibleTargets(
                f"target falls from {v1}% (day {d1}) to {v2}% (day {d2}) with no rain or "
                "cleaning in between; dust load cannot decrease")


def calibrate(scenario: SimScenario, targets: Targets,
              base: Optional[DustParams] = None) -> CalibrationResult:
    params = base or scenario.params
    warnings = []
    if not targets.daily:
        raise InfeasibleTargets("no daily targets given")
    for day, value in targets.daily:
        if not 1 <= day <= scenario.days:
            raise InfeasibleTargets(f"target day {day} outside scenario ({scenario.days} days)")
        if not 0 <= value <= 100:
            raise InfeasibleTargets(f"target {value}% outside [0, 100]")
    check_feasible(scenario, targets)

    frames = _frames(scenario, params)

    if targets.midday_pct is not None and targets.afternoon_pct is not None:
        angle_day = targets.angle_day or targets.daily[0][0]
        day_mean = dict(targets.daily).get(angle_day)
        if day_mean is None:
            raise InfeasibleTargets(f"angle anchors need a daily target on day {angle_day}")
        frame = frames[angle_day - 1]

        def angle_cost(c1):
            mid, aft = angle_profile(frame, c1)
            return (day_mean * mid - targets.midday_pct) ** 2 + \
                (day_mean * aft - targets.afternoon_pct) ** 2

        c1 = float(minimize_scalar(angle_cost, bounds=(0.0, 0.99), method="bounded",
                                   options={"xatol": 1e-8}).x)
        params = replace(params, c1=c1)
        mid, aft = angle_profile(frame, c1)
        angle_res = {"midday": day_mean * mid - targets.midday_pct,
                     "afternoon": day_mean * aft - targets.afternoon_pct}
    else:
        angle_res = {}

    used = [frames[d - 1] for d, _ in targets.daily]
    observed = np.array([v for _, v in targets.daily]) / 100.0
    weights = np.array([1.0 / targets.tolerance_pp.get(d, 1.0) for d, _ in targets.daily])

    def residuals(x):
        p = replace(params, beta=x[0], b_max=x[1])
        return weights * (np.array([predicted_daily(f, p) for f in used]) - observed)

    if len(targets.daily) == 1:
        warnings.append("single target: fit is underdetermined; b_max held at "
                        f"{params.b_max:.4g} and only beta fitted")
        sol = least_squares(lambda x: residuals([x[0], params.b_max]), [params.beta],
                            bounds=([1e-9], [np.inf]), xtol=1e-12, ftol=1e-12)
        params = replace(params, beta=float(sol.x[0]))
    else:
        sol = least_squares(residuals, [params.beta, min(params.b_max, 0.99)],
                            bounds=([1e-9, 1e-6], [np.inf, 1.0]), xtol=1e-12, ftol=1e-12)
        params = replace(params, beta=float(sol.x[0]), b_max=float(sol.x[1]))
        if len(targets.daily) == 2:
            warnings.append("two targets for two constants: exact fit, no residual check")

    rows = []
    for (day, target), frame in zip(targets.daily, used):
        fitted = 100.0 * predicted_daily(frame, params)
        rows.append((day, target, fitted, fitted - target))
    for w in warnings:
        log.warning(w)
    return CalibrationResult(params, rows, angle_res, warnings)
