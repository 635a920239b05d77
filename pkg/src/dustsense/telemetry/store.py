"""Daily-partitioned append-only files: raw wire lines and derived blockage points."""

from __future__ import annotations

import os
import threading
from datetime import date, datetime
from pathlib import Path
from typing import Iterator, Optional
from zoneinfo import ZoneInfo

from dustsense.errors import DustsenseError
from dustsense.soiling import BlockagePoint
from dustsense.telemetry.wire import format_timestamp

RAW_DIR = "raw"
DERIVED_DIR = "derived"
STREAMS_DIR = "streams"
DERIVED_HEADER = "ts,node,mode,blockage"
STREAMS_HEADER = "ts,stream,value"


class StorageError(DustsenseError, OSError):
    """Write failed; the sender should retry."""


def derived_line(p: BlockagePoint) -> str:
    return f"{format_timestamp(p.timestamp)},{p.node_id},{p.mode.value},{p.blockage!r}"


class _Partition:
    def __init__(self, path: Path, header: Optional[str]):
        self.path = path
        self.lock = threading.Lock()
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not path.exists() or path.stat().st_size == 0
        self.fh = open(path, "a", encoding="utf-8", newline="\n")
        if fresh and header:
            self.fh.write(header + "\n")
            self.fh.flush()

    def append(self, line: str) -> None:
        with self.lock:
            self.fh.write(line + "\n")
            self.fh.flush()

    def close(self) -> None:
        with self.lock:
            self.fh.close()


class PartitionedStore:
    """One writer (file handle plus lock) per partition file."""

    def __init__(self, root: str | Path, tz: str):
        self.root = Path(root)
        self.zone = ZoneInfo(tz)
        self._parts: dict[Path, _Partition] = {}
        self._lock = threading.Lock()

    def local_date(self, ts: datetime) -> date:
        return ts.astimezone(self.zone).date()

    def _partition(self, kind: str, day: date, suffix: str, header: Optional[str]) -> _Partition:
        path = self.root / kind / f"{day.isoformat()}.{suffix}"
        with self._lock:
            part = self._parts.get(path)
            if part is None:
                part = self._parts[path] = _Partition(path, header)
            return part

    def _write(self, kind, ts, suffix, header, line):
        try:
            self._partition(kind, self.local_date(ts), suffix, header).append(line)
        except OSError as exc:
            raise StorageError(f"cannot append to {kind} log: {exc}") from exc

    def append_raw(self, ts: datetime, line: str) -> None:
        self._write(RAW_DIR, ts, "ndjson", None, line)

    def append_point(self, p: BlockagePoint) -> None:
        self._write(DERIVED_DIR, p.timestamp, "csv", DERIVED_HEADER, derived_line(p))

    def append_stream_value(self, name: str, ts: datetime, value: float) -> None:
        self._write(STREAMS_DIR, ts, "csv", STREAMS_HEADER,
                    f"{format_timestamp(ts)},{name},{value!r}")

    def raw_files(self) -> list[Path]:
        return sorted((self.root / RAW_DIR).glob("*.ndjson"))

    def derived_files(self) -> list[Path]:
        return sorted((self.root / DERIVED_DIR).glob("*.csv"))

    def reset_derived(self) -> None:
        """Drop derived partitions so they can be rebuilt from the raw log."""
        with self._lock:
            for path in list(self._parts):
                if path.parent.name in (DERIVED_DIR, STREAMS_DIR):
                    self._parts.pop(path).close()
        for path in self.derived_files():
            os.remove(path)

    def close(self) -> None:
        with self._lock:
            for part in self._parts.values():
                part.close()
            self._parts.clear()


def iter_log_lines(path: str | Path) -> Iterator[bytes]:
    """Lines of a raw log file, or of every partition in a raw log directory."""
    path = Path(path)
    if path.is_dir():
        if (path / RAW_DIR).is_dir():
            path = path / RAW_DIR
        files = sorted(path.glob("*.ndjson"))
    else:
        files = [path]
    for f in files:
        with open(f, "rb") as fh:
            for line in fh:
                line = line.rstrip(b"\r\n")
                if line.strip():
                    yield line


def read_derived(path: str | Path) -> Iterator[tuple[str, str, str, float]]:
    """Rows ``(ts, node, mode, blockage)`` from one derived file or a directory of them."""
    path = Path(path)
    if path.is_dir():
        if (path / DERIVED_DIR).is_dir():
            path = path / DERIVED_DIR
        files = sorted(path.glob("*.csv"))
    else:
        files = [path]
    for f in files:
        with open(f, encoding="utf-8") as fh:
            for n, line in enumerate(fh):
                line = line.strip()
                if not line or (n == 0 and line == DERIVED_HEADER):
                    continue
                ts, node, mode, value = line.split(",")
                yield ts, node, mode, float(value)
