"""
Ingestion core: dedupe, per-node pairing, blockage points, datastreams, alerts.

Every accepted record goes through one serialized path. That keeps pairing
and rate-limit state single-owner and makes the derived store a pure
function of the raw log, which is what replay relies on. Datastream reads
use their own lock so they stay responsive during heavy ingestion.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Optional

from dustsense.errors import DustsenseError, RejectedReading
from dustsense.soiling import (DAY_VALIDITY_FLOOR_LUX, DEFAULT_LEVELS, PAIRING_WINDOW_S,
                               SITE_TIMEZONE, BlockagePoint, LevelThresholds, Mode,
                               blockage_day, blockage_night)
from dustsense.telemetry.alerts import AlertRule, Notification, evaluate_alerts, load_rules
from dustsense.telemetry.store import PartitionedStore, iter_log_lines
from dustsense.telemetry.wire import WireRecord, parse_record

log = logging.getLogger(__name__)


class StreamNotFound(DustsenseError, KeyError):
    pass


@dataclass
class ServiceConfig:
    data_dir: str = "data"
    host: str = "127.0.0.1"
    http_port: int = 8080
    tcp_port: Optional[int] = 9000
    timezone: str = SITE_TIMEZONE
    window_s: float = PAIRING_WINDOW_S
    floor: float = DAY_VALIDITY_FLOOR_LUX
    rules_file: Optional[str] = None
    led_reference: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**known)

    @classmethod
    def load(cls, path: str | Path) -> "ServiceConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Ack:
    status: str                      # ok | duplicate | rejected
    reason: str = ""
    points: list[BlockagePoint] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status != "rejected"


@dataclass
class Datastream:
    name: str
    latest: Optional[tuple[datetime, float]] = None
    history: list[tuple[datetime, float]] = field(default_factory=list)


@dataclass
class _Pending:
    opens: list[WireRecord] = field(default_factory=list)
    glasses: list[WireRecord] = field(default_factory=list)
    newest: Optional[datetime] = None


def stream_name(node: str, mode: Mode) -> str:
    return f"{node}/blockage" if mode is Mode.DAY else f"{node}/night_blockage"


def _nearest(candidates: list[WireRecord], ts: datetime, window_s: float) -> Optional[int]:
    best, best_d = None, None
    for i, c in enumerate(candidates):
        d = abs((c.ts - ts).total_seconds())
        if d > window_s:
            continue
        # equal distance: the later reading wins
        if best_d is None or d < best_d or (d == best_d and c.ts > candidates[best].ts):
            best, best_d = i, d
    return best


class IngestService:
    def __init__(self, config: ServiceConfig, rules: Optional[list[AlertRule]] = None,
                 notify: Optional[Callable[[Notification], None]] = None,
                 thresholds: LevelThresholds = DEFAULT_LEVELS, recover: bool = True):
        self.config = config
        if rules is None:
            rules = load_rules(config.rules_file) if config.rules_file else []
        self.rules = rules
        self.notify = notify
        self.thresholds = thresholds
        self.store = PartitionedStore(config.data_dir, config.timezone)

        self._lock = threading.RLock()          # pairing, dedupe, counters, rate limits
        self._stream_lock = threading.Lock()
        self._seen: set[tuple] = set()
        self._pending: dict[str, _Pending] = defaultdict(_Pending)
        self.last_fired: dict[str, datetime] = {}
        self.streams: dict[str, Datastream] = {}
        self.notifications: list[Notification] = []
        self.counters: Counter = Counter()
        self.rejects: Counter = Counter()

        if recover and self.store.raw_files():
            self._recover()

    # -- ingestion ---------------------------------------------------------

    def ingest_line(self, line: str | bytes, *, alerts: bool = True) -> Ack:
        """Parse and ingest one wire line. Malformed input is counted, never raised."""
        try:
            rec = parse_record(line)
        except RejectedReading as exc:
            with self._lock:
                self.counters["rejected"] += 1
                self.rejects[exc.reason] += 1
            return Ack("rejected", exc.reason)
        raw = line.decode("utf-8") if isinstance(line, bytes) else line
        return self.ingest(rec, raw.strip(), alerts=alerts)

    def ingest(self, rec: WireRecord, raw_line: Optional[str] = None, *,
               alerts: bool = True, persist_raw: bool = True) -> Ack:
        """Persist one record and run everything it triggers before returning.

        Raises :class:`~dustsense.telemetry.store.StorageError` when the raw
        log cannot be written; nothing is recorded in that case.
        """
        if raw_line is None:
            from dustsense.telemetry.wire import format_record
            raw_line = format_record(rec)
        with self._lock:
            if rec.key in self._seen:
                self.counters["duplicates"] += 1
                return Ack("duplicate")
            if persist_raw:
                self.store.append_raw(rec.ts, raw_line)
            self._seen.add(rec.key)
            self.counters["accepted"] += 1

            ack = Ack("ok")
            if rec.mode == "night":
                self._night_point(rec, ack)
            else:
                self._pair(rec, ack)
            for p in ack.points:
                self.store.append_point(p)
                self.counters["points"] += 1
                self._push(stream_name(p.node_id, p.mode), p.timestamp, p.blockage)
                if alerts and self.rules:
                    for note in evaluate_alerts(p, self.rules, self.last_fired, self.thresholds):
                        self.notifications.append(note)
                        if self.notify is not None:
                            self.notify(note)
            return ack

    def _reject(self, reason: str, ack: Optional[Ack] = None, n: int = 1) -> None:
        self.rejects[reason] += n
        if ack is not None and not ack.reason:
            ack.reason = reason

    def _night_point(self, rec: WireRecord, ack: Ack) -> None:
        ref = self.config.led_reference.get(rec.node)
        if ref is None:
            self._reject("missing_calibration", ack)
            return
        b = blockage_night(ref, rec.lux)
        ack.points.append(BlockagePoint(rec.ts, b, Mode.NIGHT, ref, rec.lux, rec.node))

    def _pair(self, rec: WireRecord, ack: Ack) -> None:
        w = self.config.window_s
        pend = self._pending[rec.node]
        if pend.newest is None or rec.ts > pend.newest:
            pend.newest = rec.ts
        others = pend.glasses if rec.role == "open" else pend.opens
        i = _nearest(others, rec.ts, w)
        if i is None:
            (pend.opens if rec.role == "open" else pend.glasses).append(rec)
        else:
            mate = others.pop(i)
            o, g = (rec, mate) if rec.role == "open" else (mate, rec)
            try:
                b = blockage_day(o.lux, g.lux, self.config.floor)
                ack.points.append(BlockagePoint(g.ts, b, Mode.DAY, o.lux, g.lux, g.node))
            except RejectedReading as exc:
                self._reject(exc.reason, ack)
        self._expire(pend, w)

    def _expire(self, pend: _Pending, window_s: float) -> None:
        cutoff = pend.newest
        for bucket in (pend.opens, pend.glasses):
            keep = [r for r in bucket if (cutoff - r.ts).total_seconds() <= window_s]
            if len(keep) != len(bucket):
                self._reject("unpaired", n=len(bucket) - len(keep))
                bucket[:] = keep

    def flush_pending(self) -> int:
        """Count every buffered reading as unpaired; used at shutdown."""
        with self._lock:
            n = 0
            for pend in self._pending.values():
                n += len(pend.opens) + len(pend.glasses)
                pend.opens.clear()
                pend.glasses.clear()
            if n:
                self._reject("unpaired", n=n)
            return n

    # -- datastreams -------------------------------------------------------

    def _push(self, name: str, ts: datetime, value: float) -> None:
        with self._stream_lock:
            ds = self.streams.get(name)
            if ds is None:
                ds = self.streams[name] = Datastream(name)
            ds.history.append((ts, value))
            if ds.latest is None or ts >= ds.latest[0]:
                ds.latest = (ts, value)

    def post_value(self, name: str, ts: datetime, value: float) -> None:
        """Write a non-sensor value (e.g. an image result) to a datastream."""
        with self._lock:
            self.store.append_stream_value(name, ts, value)
            self._push(name, ts, value)

    def get_latest(self, name: str) -> tuple[datetime, float]:
        with self._stream_lock:
            ds = self.streams.get(name)
            if ds is None or ds.latest is None:
                raise StreamNotFound(name)
            return ds.latest

    def stream_names(self) -> list[str]:
        with self._stream_lock:
            return sorted(self.streams)

    # -- replay ------------------------------------------------------------

    def replay(self, log_path: str | Path, *, alerts: bool = False) -> dict:
        """Ingest a raw log (file or directory) in order; corrupt lines are skipped."""
        stats = Counter()
        for line in iter_log_lines(log_path):
            ack = self.ingest_line(line, alerts=alerts)
            stats[ack.status] += 1
            if ack.status == "rejected":
                stats["corrupt"] += 1
                log.warning("replay: skipped corrupt line (%s)", ack.reason)
        return {"records": stats["ok"], "duplicates": stats["duplicate"],
                "corrupt": stats["corrupt"]}

    def _recover(self) -> None:
        """Rebuild in-memory state and the derived files from the raw log."""
        self.store.reset_derived()
        for line in iter_log_lines(self.config.data_dir):
            try:
                rec = parse_record(line)
            except RejectedReading:
                self.counters["corrupt_on_recovery"] += 1
                continue
            self.ingest(rec, persist_raw=False, alerts=False)

    def stats(self) -> dict:
        with self._lock:
            return {"accepted": self.counters["accepted"],
                    "duplicates": self.counters["duplicates"],
                    "rejected": self.counters["rejected"],
                    "points": self.counters["points"],
                    "unpaired": self.rejects["unpaired"],
                    "reasons": dict(sorted(self.rejects.items()))}

    def close(self) -> None:
        self.store.close()


def ingest_lines(service: IngestService, lines: Iterable[str | bytes]) -> Counter:
    out = Counter()
    for line in lines:
        if isinstance(line, bytes):
            line = line.rstrip(b"\r\n")
            if not line.strip():
                continue
        elif not line.strip():
            continue
        ack = service.ingest_line(line)
        out[ack.status] += 1
        if ack.status == "rejected":
            out[f"reason:{ack.reason}"] += 1
    return out
