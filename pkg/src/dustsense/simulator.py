"""
Deterministic environment simulator for the two-sensor rig.

Dust load grows linearly with airborne PM10 and is converted to a base
blockage through a saturating curve ``b_max * (1 - exp(-beta * load))``.
Heavy rain (>= 20 mm in a day) removes 98% of the load; lighter rain removes
an exponential share. The instantaneous blockage the under-glass sensor sees
rises with solar elevation, normalised so that the day's mean over valid
daylight samples equals the base blockage.

All randomness comes from one PCG64 generator seeded by the scenario, drawn
in a fixed order, so a scenario always yields the same stream.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from typing import Iterator, Optional, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from dustsense.soiling import (
    DAY_VALIDITY_FLOOR_LUX, NATURAL_CLEANING_MM, SITE_TIMEZONE, LuxReading, Mode, Role,
)

DECLINATION_DEG = 23.44
CLEAR_SKY_EXPONENT = 1.2
HEAVY_RAIN_RESIDUAL = 0.02
NIGHT_SAMPLE_HOUR = 22.0

ROLE_OPEN, ROLE_GLASS = 0, 1
MODE_DAY, MODE_NIGHT = 0, 1


@dataclass(frozen=True)
class DustParams:
    """Deposition, washout and angle constants.

    ``k`` converts PM10 (ug/m3) x days into load units; only the product
    ``k * beta`` shapes the blockage curve, so calibration holds ``k`` fixed.
    The angle weights satisfy ``c0 + c1 = 1``.
    """

    k: float = 1e-3
    beta: float = 0.25
    b_max: float = 0.557
    gamma: float = 0.08
    c1: float = 0.4

    @property
    def c0(self) -> float:
        return 1.0 - self.c1


@dataclass(frozen=True)
class DustState:
    load: float = 0.0
    base_blockage: float = 0.0

    @classmethod
    def from_load(cls, load: float, params: DustParams) -> "DustState":
        load = max(0.0, load)
        return cls(load, base_blockage_from_load(load, params))


def base_blockage_from_load(load, params: DustParams):
    out = params.b_max * (1.0 - np.exp(-params.beta * np.asarray(load, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


def day_of_year(d: date) -> int:
    return d.timetuple().tm_yday


def declination_deg(d: date) -> float:
    return DECLINATION_DEG * math.sin(2 * math.pi * (284 + day_of_year(d)) / 365)


def solar_elevation(latitude: float, d: date, time_of_day) -> float | np.ndarray:
    """Solar elevation in degrees; ``time_of_day`` is local solar time in hours."""
    phi = math.radians(latitude)
    delta = math.radians(declination_deg(d))
    hour_angle = np.radians(15.0 * (np.asarray(time_of_day, dtype=float) - 12.0))
    s = math.sin(phi) * math.sin(delta) + math.cos(phi) * math.cos(delta) * np.cos(hour_angle)
    elev = np.degrees(np.arcsin(np.clip(s, -1.0, 1.0)))
    return float(elev) if np.ndim(elev) == 0 else elev


def clear_sky_lux(elevation, clean_max_lux: float, cloud_factor=1.0):
    s = np.maximum(0.0, np.sin(np.radians(elevation)))
    out = clean_max_lux * s ** CLEAR_SKY_EXPONENT * cloud_factor
    return float(out) if np.ndim(out) == 0 else out


def deposit_step(state: DustState, pm10: float, dt: float, params: DustParams) -> DustState:
    """Accumulate ``k * pm10 * dt`` load over ``dt`` days."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return DustState.from_load(state.load + params.k * max(0.0, pm10) * dt, params)


def rain_wash(state: DustState, rain_mm: float, params: DustParams) -> DustState:
    if rain_mm < 0:
        raise ValueError("rain must be non-negative")
    if rain_mm >= NATURAL_CLEANING_MM:
        return DustState.from_load(HEAVY_RAIN_RESIDUAL * state.load, params)
    return DustState.from_load(state.load * math.exp(-params.gamma * rain_mm), params)


def angle_factor(sin_elev, mean_sin: float, c1: float):
    """Multiplier on base blockage; averages to 1 over samples whose mean sine is ``mean_sin``."""
    c0 = 1.0 - c1
    denom = c0 + c1 * mean_sin
    return (c0 + c1 * np.maximum(0.0, sin_elev)) / denom if denom > 0 else np.ones_like(sin_elev)


def effective_blockage(state: DustState, elevation, mean_sin: float, c1: float):
    s = np.sin(np.radians(elevation))
    out = np.clip(state.base_blockage * angle_factor(s, mean_sin, c1), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SimScenario:
    name: str
    start_date: date
    end_date: date
    pm10_series: list[float]
    rain_series: list[float]
    seed: int = 0
    latitude: float = 23.98
    longitude: float = 90.41
    clean_max_lux: float = 120000.0
    led_reference_lux: float = 800.0
    sample_interval: int = 60
    node_id: str = "node1"
    timezone: str = SITE_TIMEZONE
    noise: float = 0.02
    cloud_min: float = 0.75
    validity_floor: float = DAY_VALIDITY_FLOOR_LUX
    initial_load: float = 0.0
    cleaning_dates: list[date] = field(default_factory=list)
    params: DustParams = field(default_factory=DustParams)

    def __post_init__(self):
        if self.end_date < self.start_date:
            raise ValueError("end_date precedes start_date")
        n = self.days
        if len(self.pm10_series) != n or len(self.rain_series) != n:
            raise ValueError(f"series must cover {n} days")
        if min(self.pm10_series) < 0 or min(self.rain_series) < 0:
            raise ValueError("pm10 and rain values must be non-negative")
        if self.sample_interval < 1:
            raise ValueError("sample_interval must be >= 1 s")
        if not self.seed >= 0 or self.seed >= 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def days(self) -> int:
        return (self.end_date - self.start_date).days + 1

    def dates(self) -> list[date]:
        return [self.start_date + timedelta(days=i) for i in range(self.days)]

    def with_seed(self, seed: int) -> "SimScenario":
        return replace(self, seed=seed)

    def to_json(self) -> str:
        d = asdict(self)
        d["start_date"] = self.start_date.isoformat()
        d["end_date"] = self.end_date.isoformat()
        d["cleaning_dates"] = [c.isoformat() for c in self.cleaning_dates]
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SimScenario":
        d = json.loads(text)
        d["start_date"] = date.fromisoformat(d["start_date"])
        d["end_date"] = date.fromisoformat(d["end_date"])
        d["cleaning_dates"] = [date.fromisoformat(c) for c in d.get("cleaning_dates", [])]
        d["params"] = DustParams(**d.get("params", {}))
        return cls(**d)


@dataclass
class DayFrame:
    """Noise-free per-instant quantities for one local day."""

    day: date
    epoch: np.ndarray          # int64 UTC seconds
    sin_elev: np.ndarray
    clear_lux: np.ndarray
    load: np.ndarray
    base: np.ndarray
    truth: np.ndarray          # effective blockage
    valid: np.ndarray
    night_epoch: int
    night_base: float
    end_load: float


def _local_midnight_epoch(d: date, tz: ZoneInfo) -> int:
    return int(datetime(d.year, d.month, d.day, tzinfo=tz).timestamp())


def iter_days(scenario: SimScenario, cloud_factors: Optional[Sequence[float]] = None,
              params: Optional[DustParams] = None) -> Iterator[DayFrame]:
    """Walk the scenario day by day without sensor noise.

    Order of events each day: manual cleaning, then the day's rain (applied at
    local midnight), then the day's deposition. Readings see the load at its
    midday value (half the day's dose) for the whole day, so the intra-day
    profile is purely the sun-angle effect; the rest of the dose lands after.
    """
    p = params or scenario.params
    tz = ZoneInfo(scenario.timezone)
    load = scenario.initial_load
    cleaning = set(scenario.cleaning_dates)
    for i, d in enumerate(scenario.dates()):
        if d in cleaning:
            load = 0.0
        load = rain_wash(DustState.from_load(load, p), scenario.rain_series[i], p).load
        t0 = _local_midnight_epoch(d, tz)
        t1 = _local_midnight_epoch(d + timedelta(days=1), tz)
        epoch = np.arange(t0, t1, scenario.sample_interval, dtype=np.int64)
        solar_hours = ((epoch % 86400) / 3600.0 + scenario.longitude / 15.0) % 24.0
        elev = solar_elevation(scenario.latitude, d, solar_hours)
        sin_elev = np.maximum(0.0, np.sin(np.radians(elev)))
        cloud = 1.0 if cloud_factors is None else cloud_factors[i]
        clear = clear_sky_lux(elev, scenario.clean_max_lux, cloud)
        pm = scenario.pm10_series[i]
        day_load = deposit_step(DustState.from_load(load, p), pm, 0.5, p).load
        loads = np.full(len(epoch), day_load)
        base = base_blockage_from_load(loads, p)
        valid = clear >= scenario.validity_floor
        mean_sin = float(sin_elev[valid].mean()) if valid.any() else 0.0
        truth = np.clip(base * angle_factor(sin_elev, mean_sin, p.c1), 0.0, 1.0)
        night_epoch = t0 + int(NIGHT_SAMPLE_HOUR * 3600)
        night_base = base_blockage_from_load(day_load, p)
        end_load = deposit_step(DustState.from_load(day_load, p), pm, 0.5, p).load
        yield DayFrame(d, epoch, sin_elev, clear, loads, base, truth, valid,
                       night_epoch, night_base, end_load)
        load = end_load


@dataclass
class SimStream:
    """Generated readings (column arrays) plus the ground truth behind them."""

    node_id: str
    epoch: np.ndarray
    role: np.ndarray
    mode: np.ndarray
    lux: np.ndarray
    truth_epoch: np.ndarray
    truth_blockage: np.ndarray
    truth_mode: np.ndarray
    daily_base: dict[date, float]

    def __len__(self) -> int:
        return len(self.epoch)

    def readings(self) -> Iterator[LuxReading]:
        roles = (Role.OPEN, Role.UNDER_GLASS)
        modes = (Mode.DAY, Mode.NIGHT)
        for t, r, m, v in zip(self.epoch.tolist(), self.role.tolist(),
                              self.mode.tolist(), self.lux.tolist()):
            yield LuxReading(self.node_id, datetime.fromtimestamp(t, timezone.utc),
                             roles[r], modes[m], v)

    def wire_lines(self) -> Iterator[str]:
        roles = ("open", "glass")
        modes = ("day", "night")
        node = json.dumps(self.node_id)
        for t, r, m, v in zip(self.epoch.tolist(), self.role.tolist(),
                              self.mode.tolist(), self.lux.tolist()):
            ts = datetime.fromtimestamp(t, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            yield (f'{{"node":{node},"ts":"{ts}","role":"{roles[r]}",'
                   f'"mode":"{modes[m]}","lux":{v!r}}}')

    def truth_lines(self) -> Iterator[str]:
        yield "timestamp,true_blockage,mode"
        modes = ("day", "night")
        for t, b, m in zip(self.truth_epoch.tolist(), self.truth_blockage.tolist(),
                           self.truth_mode.tolist()):
            ts = datetime.fromtimestamp(t, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            yield f"{ts},{b!r},{modes[m]}"

    def truth_at(self) -> dict[int, float]:
        day = self.truth_mode == MODE_DAY
        return dict(zip(self.truth_epoch[day].tolist(), self.truth_blockage[day].tolist()))


def _lux_round(x: np.ndarray) -> np.ndarray:
    # sensors report with millilux resolution
    return np.round(x, 3)


def generate_stream(scenario: SimScenario) -> SimStream:
    rng = np.random.Generator(np.random.PCG64(scenario.seed))
    clouds = rng.uniform(scenario.cloud_min, 1.0, size=scenario.days)
    a = scenario.noise
    led = scenario.led_reference_lux

    epochs, roles, modes, luxes = [], [], [], []
    t_epochs, t_vals, t_modes = [], [], []
    daily_base = {}
    for frame in iter_days(scenario, clouds):
        n = len(frame.epoch)
        u_open = rng.uniform(-a, a, size=n)
        u_glass = rng.uniform(-a, a, size=n)
        u_led = rng.uniform(-a, a)
        open_lux = _lux_round(frame.clear_lux * (1.0 + u_open))
        glass_lux = _lux_round(frame.clear_lux * (1.0 - frame.truth) * (1.0 + u_glass))

        # the node is in night mode at the LED instant, so no day pair is taken there
        keep = frame.epoch != frame.night_epoch
        d_epoch, d_truth = frame.epoch[keep], frame.truth[keep]
        open_lux, glass_lux = open_lux[keep], glass_lux[keep]
        n = len(d_epoch)

        # open then glass at each instant; the LED reading slots in at its own time
        ep = np.repeat(d_epoch, 2)
        ro = np.tile(np.array([ROLE_OPEN, ROLE_GLASS], dtype=np.int8), n)
        lx = np.empty(2 * n)
        lx[0::2], lx[1::2] = open_lux, glass_lux
        mo = np.zeros(2 * n, dtype=np.int8)
        k = int(np.searchsorted(ep, frame.night_epoch, side="right"))
        night_lux = float(_lux_round(np.array(led * (1.0 - frame.night_base) * (1.0 + u_led))))
        epochs += [ep[:k], [frame.night_epoch], ep[k:]]
        roles += [ro[:k], [ROLE_GLASS], ro[k:]]
        modes += [mo[:k], [MODE_NIGHT], mo[k:]]
        luxes += [lx[:k], [night_lux], lx[k:]]

        j = int(np.searchsorted(d_epoch, frame.night_epoch, side="right"))
        t_epochs += [d_epoch[:j], [frame.night_epoch], d_epoch[j:]]
        t_vals += [d_truth[:j], [frame.night_base], d_truth[j:]]
        t_modes += [np.zeros(j, np.int8), [MODE_NIGHT], np.zeros(n - j, np.int8)]
        daily_base[frame.day] = float(frame.base[frame.valid].mean()) if frame.valid.any() else 0.0

    cat = np.concatenate
    return SimStream(
        node_id=scenario.node_id,
        epoch=cat(epochs).astype(np.int64), role=cat(roles).astype(np.int8),
        mode=cat(modes).astype(np.int8), lux=cat(luxes).astype(np.float64),
        truth_epoch=cat(t_epochs).astype(np.int64), truth_blockage=cat(t_vals).astype(np.float64),
        truth_mode=cat(t_modes).astype(np.int8), daily_base=daily_base,
    )


def load_trajectory(scenario: SimScenario, params: Optional[DustParams] = None) -> list[float]:
    """End-of-day dust load for each scenario day (no noise)."""
    return [f.end_load for f in iter_days(scenario, params=params)]


def recover_daily(stream: SimStream, scenario: SimScenario):
    """Daily summaries recovered from a generated stream through the blockage math."""
    from dustsense.soiling import compute_points, summarize_by_day

    points, _ = compute_points(stream.readings(), {scenario.node_id: scenario.led_reference_lux},
                               floor=scenario.validity_floor)
    return points, summarize_by_day(points, scenario.timezone)
