"""
Blockage math for the paired light-sensor dust detector.

Two measurement modes exist. In daylight an open-air sensor and a sensor
under the exposed glass are read together; at night a fixed LED sits under
the glass and the measured value is compared with the LED's stored clean
reading. Both reduce to the same quantity: the fraction of visible light the
dust layer removes, clamped to [0, 1].

All values are fractions internally. Percentages only appear at I/O edges.
"""

from __future__ import annotations

import bisect
import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Iterable, Optional, Sequence

from dustsense.errors import DegenerateFit, DomainError, MissingCalibration, RejectedReading

DAY_VALIDITY_FLOOR_LUX = 1000.0
PAIRING_WINDOW_S = 5.0
NATURAL_CLEANING_MM = 20.0
SITE_TIMEZONE = "Asia/Dhaka"


class Role(str, enum.Enum):
    OPEN = "open"
    UNDER_GLASS = "glass"


class Mode(str, enum.Enum):
    DAY = "day"
    NIGHT = "night"


@enum.unique
class DustLevel(enum.IntEnum):
    LOW = 0
    MODERATE = 1
    HIGH = 2
    SEVERE = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, text: str) -> "DustLevel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown dust level {text!r}") from None


@dataclass(frozen=True)
class LevelThresholds:
    """Lower bounds (fractions) of the Moderate, High and Severe bands."""

    moderate: float = 0.05
    high: float = 0.20
    severe: float = 0.40

    def __post_init__(self):
        if not 0.0 < self.moderate < self.high < self.severe <= 1.0:
            raise ValueError("thresholds must satisfy 0 < moderate < high < severe <= 1")


DEFAULT_LEVELS = LevelThresholds()


@dataclass(frozen=True)
class LuxReading:
    node_id: str
    timestamp: datetime
    role: Role
    mode: Mode
    lux: float

    def __post_init__(self):
        if not self.lux >= 0 or math.isinf(self.lux):
            raise DomainError(f"lux must be finite and non-negative, got {self.lux}")
        if self.role is Role.OPEN and self.mode is Mode.NIGHT:
            raise DomainError("night mode has no open sensor reading")


@dataclass(frozen=True)
class BlockagePoint:
    timestamp: datetime
    blockage: float
    mode: Mode
    reference_lux: float
    measured_lux: float
    node_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.blockage <= 1.0:
            raise DomainError(f"blockage {self.blockage} outside [0, 1]")
        if not self.reference_lux > 0:
            raise DomainError("reference lux must be positive")


@dataclass(frozen=True)
class DailySummary:
    """Per-day blockage statistics. ``sample_count == 0`` is the no-data marker."""

    date: date
    mean_blockage: Optional[float]
    peak_blockage: Optional[float]
    min_blockage: Optional[float]
    sample_count: int

    @property
    def has_data(self) -> bool:
        return self.sample_count > 0


@dataclass(frozen=True)
class EfficiencyModel:
    slope: float
    intercept: float
    pearson_r: float
    n: int = 0


@dataclass(frozen=True)
class RainRecord:
    date: date
    rain_mm: float

    def __post_init__(self):
        if not self.rain_mm >= 0:
            raise DomainError("rain_mm must be non-negative")


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def relative_change(v1: float, v2: float) -> float:
    """Signed fractional change from ``v1`` to ``v2``."""
    if not v1 > 0:
        raise DomainError(f"relative change needs a positive base value, got {v1}")
    return (v2 - v1) / v1


def blockage_day(open_lux: float, glass_lux: float,
                 floor: float = DAY_VALIDITY_FLOOR_LUX) -> float:
    """Fraction of open-air light lost under the glass.

    Readings taken with too little sun (``open_lux < floor``) are unstable and
    raise :class:`RejectedReading` with reason ``below_validity_floor``.
    """
    if not open_lux >= floor or open_lux <= 0:
        raise RejectedReading("below_validity_floor",
                              f"open lux {open_lux} below validity floor {floor}")
    if glass_lux < 0:
        raise DomainError("glass lux must be non-negative")
    return _clamp01((open_lux - glass_lux) / open_lux)


def blockage_night(led_reference_lux: Optional[float], measured_lux: float) -> float:
    if led_reference_lux is None:
        raise MissingCalibration("no LED reference lux stored for this node")
    if not led_reference_lux > 0:
        raise DomainError("LED reference lux must be positive")
    if measured_lux < 0:
        raise DomainError("measured lux must be non-negative")
    return _clamp01((led_reference_lux - measured_lux) / led_reference_lux)


def classify_dust_level(blockage: float,
                        thresholds: LevelThresholds = DEFAULT_LEVELS) -> DustLevel:
    # bands are left-closed: a value on a boundary belongs to the higher level
    if not 0.0 <= blockage <= 1.0:
        raise DomainError(f"blockage {blockage} outside [0, 1]")
    if blockage < thresholds.moderate:
        return DustLevel.LOW
    if blockage < thresholds.high:
        return DustLevel.MODERATE
    if blockage < thresholds.severe:
        return DustLevel.HIGH
    return DustLevel.SEVERE


@dataclass
class PairingResult:
    pairs: list[tuple[LuxReading, LuxReading]] = field(default_factory=list)
    rejects: list[tuple[LuxReading, str]] = field(default_factory=list)
    night: list[LuxReading] = field(default_factory=list)


def pair_readings(stream: Iterable[LuxReading],
                  window_s: float = PAIRING_WINDOW_S) -> PairingResult:
    """Pair each day-mode under-glass reading with the nearest open reading.

    Pairing is one-to-one and per node. Candidates farther apart than
    ``window_s`` are never paired; equal distances favour the later open
    reading. Readings left over are returned in ``rejects`` with reason
    ``unpaired``. Night-mode readings pass through untouched in ``night``.
    """
    result = PairingResult()
    by_node: dict[str, tuple[list[LuxReading], list[LuxReading]]] = defaultdict(lambda: ([], []))
    for r in stream:
        if r.mode is Mode.NIGHT:
            result.night.append(r)
            continue
        opens, glasses = by_node[r.node_id]
        (opens if r.role is Role.OPEN else glasses).append(r)

    for node in sorted(by_node):
        opens, glasses = by_node[node]
        opens.sort(key=lambda r: r.timestamp)
        glasses.sort(key=lambda r: r.timestamp)
        open_ts = [o.timestamp.timestamp() for o in opens]
        used = [False] * len(opens)
        for g in glasses:
            t = g.timestamp.timestamp()
            best = None
            best_d = None
            # scan outward from the insertion point; the window bounds the work
            i = bisect.bisect_left(open_ts, t - window_s)
            while i < len(opens) and open_ts[i] <= t + window_s:
                if not used[i]:
                    d = abs(open_ts[i] - t)
                    if best_d is None or d <= best_d:
                        best, best_d = i, d
                i += 1
            if best is None:
                result.rejects.append((g, "unpaired"))
            else:
                used[best] = True
                result.pairs.append((opens[best], g))
        result.rejects.extend((o, "unpaired") for o, u in zip(opens, used) if not u)
    return result


def daily_aggregate(points: Sequence[BlockagePoint], day: date) -> DailySummary:
    if not points:
        return DailySummary(day, None, None, None, 0)
    values = [p.blockage for p in points]
    return DailySummary(
        date=day,
        mean_blockage=math.fsum(values) / len(values),
        peak_blockage=max(values),
        min_blockage=min(values),
        sample_count=len(values),
    )


def monthly_aggregate(summaries: Sequence[DailySummary]) -> Optional[float]:
    """Sample-weighted mean of daily means; ``None`` when the month has no data."""
    total = sum(s.sample_count for s in summaries if s.has_data)
    if total == 0:
        return None
    return math.fsum(s.mean_blockage * s.sample_count for s in summaries if s.has_data) / total


def fit_efficiency_model(rows: Sequence[tuple[float, float]]) -> EfficiencyModel:
    """Ordinary least squares of efficiency loss (%) on blockage (%)."""
    n = len(rows)
    if n < 2:
        raise DegenerateFit("at least two rows are required")
    xs = [float(x) for x, _ in rows]
    ys = [float(y) for _, y in rows]
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    if sxx == 0.0:
        raise DegenerateFit("blockage values are constant")
    slope = sxy / sxx
    r = sxy / math.sqrt(sxx * syy) if syy > 0 else 0.0
    return EfficiencyModel(slope=slope, intercept=my - slope * mx,
                           pearson_r=max(-1.0, min(1.0, r)), n=n)


def predict_efficiency_loss(model: EfficiencyModel, blockage_pct: float) -> float:
    return model.slope * blockage_pct + model.intercept


def natural_cleaning_check(recent_rain: Sequence[RainRecord], window_days: int,
                           threshold_mm: float = NATURAL_CLEANING_MM) -> bool:
    """True when the rain over the last ``window_days`` calendar days reaches the threshold.

    The window ends on the latest record's date.
    """
    if window_days < 1:
        raise DomainError("window_days must be >= 1")
    if not recent_rain:
        return False
    last = max(r.date for r in recent_rain)
    start = last - timedelta(days=window_days - 1)
    total = math.fsum(r.rain_mm for r in recent_rain if start <= r.date <= last)
    return total >= threshold_mm


def compute_points(readings: Iterable[LuxReading],
                   led_reference: Optional[dict[str, float]] = None,
                   floor: float = DAY_VALIDITY_FLOOR_LUX,
                   window_s: float = PAIRING_WINDOW_S,
                   ) -> tuple[list[BlockagePoint], list[tuple[LuxReading, str]]]:
    """Turn a raw reading stream into blockage points plus rejected readings.

    Day points are stamped with the under-glass reading's time.
    """
    led_reference = led_reference or {}
    paired = pair_readings(readings, window_s)
    points, rejects = [], list(paired.rejects)
    for o, g in paired.pairs:
        try:
            b = blockage_day(o.lux, g.lux, floor)
        except RejectedReading as exc:
            rejects.append((g, exc.reason))
            continue
        points.append(BlockagePoint(g.timestamp, b, Mode.DAY, o.lux, g.lux, g.node_id))
    for r in paired.night:
        if r.role is not Role.UNDER_GLASS:
            rejects.append((r, "open_in_night_mode"))
            continue
        ref = led_reference.get(r.node_id)
        if ref is None:
            rejects.append((r, "missing_calibration"))
            continue
        points.append(BlockagePoint(r.timestamp, blockage_night(ref, r.lux), Mode.NIGHT,
                                    ref, r.lux, r.node_id))
    points.sort(key=lambda p: (p.node_id, p.timestamp))
    return points, rejects


def summarize_by_day(points: Iterable[BlockagePoint], tz: str = SITE_TIMEZONE,
                     mode: Optional[Mode] = Mode.DAY) -> dict[date, DailySummary]:
    """Daily summaries keyed by local calendar date in ``tz``."""
    from zoneinfo import ZoneInfo

    zone = ZoneInfo(tz)
    buckets: dict[date, list[BlockagePoint]] = defaultdict(list)
    for p in points:
        if mode is None or p.mode is mode:
            buckets[p.timestamp.astimezone(zone).date()].append(p)
    return {d: daily_aggregate(buckets[d], d) for d in sorted(buckets)}


def summarize_by_month(daily: dict[date, DailySummary]) -> dict[tuple[int, int], Optional[float]]:
    months: dict[tuple[int, int], list[DailySummary]] = defaultdict(list)
    for d, s in daily.items():
        months[(d.year, d.month)].append(s)
    return {m: monthly_aggregate(months[m]) for m in sorted(months)}
