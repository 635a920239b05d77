"""Built-in simulation presets for the Gazipur field site."""

from __future__ import annotations

import calendar
import math
from dataclasses import replace
from datetime import date
from pathlib import Path

from dustsense.simulator import DustParams, SimScenario

# fitted by `dustsense calibrate` on april-month against the 7/15/30-day and
# midday/afternoon anchors (see data/paper_targets.csv)
CALIBRATED = DustParams(
    k=1e-3,
    beta=0.21798036534049067,
    b_max=0.6177542246226437,
    gamma=0.08,
    c1=0.44826717461814275,
)

JUNE_RAIN_MM = [0, 0, 28, 47, 14, 22, 25, 18, 12, 9, 24, 8, 13, 21, 0,
                0, 0, 0, 0, 12, 0, 14, 0, 11, 0, 15, 0, 10, 0, 0]

# effective monthly PM10 for the six-month run; see six_month()
SIX_MONTH_PM = {1: 300.0, 2: 295.0, 3: 265.0, 4: 240.0, 5: 128.0, 6: 108.0}


def weekly_pm(mean: float, days: int, amplitude: float = 0.08) -> list[float]:
    """PM10 series with a mild weekly cycle around ``mean``."""
    return [mean * (1 + amplitude * math.sin(2 * math.pi * i / 7)) for i in range(days)]


def april_month(seed: int = 0) -> SimScenario:
    return SimScenario("april-month", date(2024, 4, 1), date(2024, 4, 30),
                       weekly_pm(110.0, 30), [0.0] * 30, seed=seed, params=CALIBRATED)


def march_33d(seed: int = 0) -> SimScenario:
    return SimScenario("march-33d", date(2024, 3, 1), date(2024, 4, 2),
                       weekly_pm(116.0, 33), [0.0] * 33, seed=seed, params=CALIBRATED)


def june_rain(seed: int = 0) -> SimScenario:
    return SimScenario("june-rain", date(2024, 6, 1), date(2024, 6, 30),
                       weekly_pm(34.0, 30), [float(r) for r in JUNE_RAIN_MM],
                       seed=seed, params=CALIBRATED)


def six_month(seed: int = 0) -> SimScenario:
    """January to June with the glass cleaned on the first of each month.

    The monthly figures are month-long accumulations rather than rain-washed
    daily values, so this preset carries no rain. Its PM levels are
    effective deposition drivers tuned to those monthly means; they are not
    interchangeable with the single-month presets.
    """
    pm, cleaning = [], []
    for month, level in SIX_MONTH_PM.items():
        pm += weekly_pm(level, calendar.monthrange(2024, month)[1])
        cleaning.append(date(2024, month, 1))
    return SimScenario("six-month", date(2024, 1, 1), date(2024, 6, 30), pm, [0.0] * len(pm),
                       seed=seed, cleaning_dates=cleaning, params=CALIBRATED)


def zero_dust(seed: int = 0, days: int = 3) -> SimScenario:
    return SimScenario("zero-dust", date(2024, 4, 1), date(2024, 4, days),
                       [0.0] * days, [0.0] * days, seed=seed, params=CALIBRATED)


PRESETS = {
    "april-month": april_month,
    "march-33d": march_33d,
    "june-rain": june_rain,
    "six-month": six_month,
    "zero-dust": zero_dust,
}


def resolve(name_or_path: str, seed: int | None = None) -> SimScenario:
    """Look up a preset by name, or load a scenario JSON file."""
    if name_or_path in PRESETS:
        sc = PRESETS[name_or_path]()
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise KeyError(f"unknown scenario {name_or_path!r}; presets: {', '.join(PRESETS)}")
        sc = SimScenario.from_json(path.read_text())
    return sc if seed is None else replace(sc, seed=seed)
