"""Newline-delimited JSON wire format for sensor records."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone

from dustsense.errors import RejectedReading
from dustsense.soiling import LuxReading, Mode, Role

REQUIRED = ("node", "ts", "role", "mode", "lux")
_ROLES = {"open": Role.OPEN, "glass": Role.UNDER_GLASS}
_MODES = {"day": Mode.DAY, "night": Mode.NIGHT}


@dataclass(frozen=True)
class WireRecord:
    node: str
    ts: datetime
    role: str
    mode: str
    lux: float

    @property
    def key(self) -> tuple[str, datetime, str]:
        return (self.node, self.ts, self.role)

    def to_reading(self) -> LuxReading:
        return LuxReading(self.node, self.ts, _ROLES[self.role], _MODES[self.mode], self.lux)


def parse_timestamp(text: str) -> datetime:
    """Parse RFC 3339 text; a trailing ``Z`` means UTC and an offset is required."""
    if not isinstance(text, str) or "T" not in text.upper():
        raise ValueError("not an RFC 3339 timestamp")
    s = text.strip()
    if s[-1] in "zZ":
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    if ts.microsecond:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_record(line: str | bytes) -> WireRecord:
    """Validate one wire line. Failures raise :class:`RejectedReading` with a reason code.

    Reason codes: ``encoding``, ``malformed_json``, ``not_an_object``,
    ``missing_field:<name>``, ``bad_node``, ``bad_timestamp``, ``bad_role``,
    ``bad_mode``, ``bad_lux``, ``negative_lux``, ``open_in_night_mode``.
    Unknown fields are ignored.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise RejectedReading("encoding") from None
    try:
        obj = json.loads(line)
    except ValueError:
        raise RejectedReading("malformed_json") from None
    if not isinstance(obj, dict):
        raise RejectedReading("not_an_object")
    for name in REQUIRED:
        if name not in obj or obj[name] is None:
            raise RejectedReading(f"missing_field:{name}")

    node = obj["node"]
    if not isinstance(node, str) or not node or "/" in node:
        raise RejectedReading("bad_node")
    try:
        ts = parse_timestamp(obj["ts"])
    except (ValueError, TypeError):
        raise RejectedReading("bad_timestamp") from None
    role, mode = obj["role"], obj["mode"]
    if role not in _ROLES:
        raise RejectedReading("bad_role")
    if mode not in _MODES:
        raise RejectedReading("bad_mode")
    lux = obj["lux"]
    if isinstance(lux, bool) or not isinstance(lux, (int, float)) or not math.isfinite(lux):
        raise RejectedReading("bad_lux")
    if lux < 0:
        raise RejectedReading("negative_lux")
    if role == "open" and mode == "night":
        raise RejectedReading("open_in_night_mode")
    return WireRecord(node, ts, role, mode, float(lux))


def format_record(rec: WireRecord) -> str:
    return json.dumps({"node": rec.node, "ts": format_timestamp(rec.ts), "role": rec.role,
                       "mode": rec.mode, "lux": rec.lux}, separators=(",", ":"))
