"""Daily/monthly tables, SVG plots and a text summary from a derived point log."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Optional

from dustsense.soiling import (SITE_TIMEZONE, BlockagePoint, DailySummary, Mode,
                               summarize_by_day, summarize_by_month)
from dustsense.telemetry.store import read_derived
from dustsense.telemetry.wire import parse_timestamp

DAILY_HEADER = "date,mean_blockage,peak_blockage,min_blockage,samples"
MONTHLY_HEADER = "month,mean_blockage,samples"


@dataclass
class ReportBundle:
    daily: dict[date, DailySummary]
    monthly: dict[tuple[int, int], Optional[float]]
    monthly_samples: dict[tuple[int, int], int]
    files: list[Path] = field(default_factory=list)

    @property
    def total_samples(self) -> int:
        return sum(s.sample_count for s in self.daily.values())

    @property
    def overall_mean(self) -> Optional[float]:
        n = self.total_samples
        if n == 0:
            return None
        return math.fsum(s.mean_blockage * s.sample_count for s in self.daily.values()) / n


def load_points(path: str | Path, mode: Optional[Mode] = Mode.DAY) -> list[BlockagePoint]:
    points = []
    for ts, node, m, value in read_derived(path):
        pm = Mode(m)
        if mode is not None and pm is not mode:
            continue
        # reference/measured lux are not in the derived log; keep the ratio consistent
        points.append(BlockagePoint(parse_timestamp(ts), value, pm, 1.0, 1.0 - value, node))
    return points


def build(points: Iterable[BlockagePoint], tz: str = SITE_TIMEZONE,
          period: Optional[tuple[date, date]] = None) -> ReportBundle:
    daily = summarize_by_day(points, tz, mode=None)
    if period is not None:
        daily = {d: s for d, s in daily.items() if period[0] <= d <= period[1]}
    counts: dict[tuple[int, int], int] = {}
    for d, s in daily.items():
        counts[(d.year, d.month)] = counts.get((d.year, d.month), 0) + s.sample_count
    return ReportBundle(daily, summarize_by_month(daily), counts)


def _cell(v: Optional[float]) -> str:
    return "" if v is None else repr(v)


def daily_table(bundle: ReportBundle) -> str:
    rows = [DAILY_HEADER]
    for d, s in bundle.daily.items():
        rows.append(f"{d.isoformat()},{_cell(s.mean_blockage)},{_cell(s.peak_blockage)},"
                    f"{_cell(s.min_blockage)},{s.sample_count}")
    return "\n".join(rows) + "\n"


def monthly_table(bundle: ReportBundle) -> str:
    rows = [MONTHLY_HEADER]
    for (y, m), v in bundle.monthly.items():
        rows.append(f"{y:04d}-{m:02d},{_cell(v)},{bundle.monthly_samples[(y, m)]}")
    return "\n".join(rows) + "\n"


def summary_text(bundle: ReportBundle) -> str:
    lines = [f"points: {bundle.total_samples}",
             f"days with data: {sum(1 for s in bundle.daily.values() if s.has_data)}"]
    mean = bundle.overall_mean
    if mean is None:
        lines.append("overall mean blockage: n/a")
    else:
        peak = max(s.peak_blockage for s in bundle.daily.values() if s.has_data)
        lines.append(f"overall mean blockage: {100 * mean:.2f}%")
        lines.append(f"peak blockage: {100 * peak:.2f}%")
    for (y, m), v in bundle.monthly.items():
        shown = "n/a" if v is None else f"{100 * v:.2f}%"
        lines.append(f"{y:04d}-{m:02d}: {shown} ({bundle.monthly_samples[(y, m)]} samples)")
    return "\n".join(lines) + "\n"


def _plot(path: Path, xs, ys, title: str, xlabel: str, kind: str = "line") -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dustsense"
    fig, ax = plt.subplots(figsize=(8, 3.5))
    if xs:
        if kind == "bar":
            ax.bar(xs, ys, color="#8c6d31")
        else:
            ax.plot(xs, ys, marker="o", markersize=3, color="#8c6d31")
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("blockage (%)")
    ax.grid(alpha=0.3)
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_bundle(bundle: ReportBundle, out_dir: str | Path) -> ReportBundle:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "daily.csv": daily_table(bundle),
        "monthly.csv": monthly_table(bundle),
        "summary.txt": summary_text(bundle),
    }
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    days = [d for d, s in bundle.daily.items() if s.has_data]
    _plot(out / "daily.svg", days, [100 * bundle.daily[d].mean_blockage for d in days],
          "Daily mean blockage", "date")
    months = [m for m, v in bundle.monthly.items() if v is not None]
    _plot(out / "monthly.svg", [f"{y:04d}-{m:02d}" for y, m in months],
          [100 * bundle.monthly[m] for m in months], "Monthly mean blockage", "month", "bar")
    bundle.files = [out / n for n in ("daily.csv", "monthly.csv", "summary.txt",
                                      "daily.svg", "monthly.svg")]
    return bundle
