"""Threshold alert rules with a per-rule minimum interval between notifications."""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, MutableMapping, Optional
from urllib.parse import urlparse

from dustsense.soiling import (DEFAULT_LEVELS, BlockagePoint, DustLevel, LevelThresholds,
                               classify_dust_level)
from dustsense.telemetry.wire import format_timestamp

ANY_NODE = "*"


@dataclass(frozen=True)
class AlertRule:
    rule_id: str
    node: str
    level_at_least: DustLevel
    min_interval: float          # seconds
    webhook_url: str

    def __post_init__(self):
        if not self.rule_id:
            raise ValueError("rule_id must be non-empty")
        if not self.min_interval > 0:
            raise ValueError(f"rule {self.rule_id}: min_interval must be > 0")
        url = urlparse(self.webhook_url)
        if url.scheme not in ("http", "https") or not url.netloc:
            raise ValueError(f"rule {self.rule_id}: malformed webhook_url {self.webhook_url!r}")

    def applies_to(self, node: str) -> bool:
        return self.node == ANY_NODE or self.node == node

    @classmethod
    def from_dict(cls, d: dict) -> "AlertRule":
        level = d["level_at_least"]
        if not isinstance(level, DustLevel):
            level = DustLevel.from_label(str(level))
        return cls(str(d["rule_id"]), str(d.get("node", ANY_NODE)), level,
                   float(d["min_interval"]), str(d["webhook_url"]))

    def to_dict(self) -> dict:
        return {"rule_id": self.rule_id, "node": self.node,
                "level_at_least": self.level_at_least.label,
                "min_interval": self.min_interval, "webhook_url": self.webhook_url}


@dataclass(frozen=True)
class Notification:
    rule_id: str
    node: str
    level: DustLevel
    blockage_pct: float
    ts: datetime
    message: str
    webhook_url: str = ""

    def payload(self) -> dict:
        return {"rule_id": self.rule_id, "node": self.node, "level": self.level.label,
                "blockage_pct": self.blockage_pct, "ts": format_timestamp(self.ts),
                "message": self.message}

    def body(self) -> bytes:
        return json.dumps(self.payload(), separators=(",", ":")).encode("utf-8")


def load_rules(path: str | Path) -> list[AlertRule]:
    """Rules file: a JSON array, or one JSON object per line (``#`` comments allowed)."""
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        return []
    if text.startswith("["):
        items = json.loads(text)
    else:
        items = [json.loads(ln) for ln in text.splitlines()
                 if ln.strip() and not ln.lstrip().startswith("#")]
    rules = [AlertRule.from_dict(d) for d in items]
    ids = [r.rule_id for r in rules]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate rule_id in rules file")
    return rules


def evaluate_alerts(point: BlockagePoint, rules: Iterable[AlertRule],
                    last_fired: MutableMapping[str, datetime],
                    thresholds: LevelThresholds = DEFAULT_LEVELS) -> list[Notification]:
    """Notifications due for ``point``; ``last_fired`` is updated in place.

    Time is the point's own timestamp, so evaluation is deterministic under
    replay. A point older than a rule's last firing never fires that rule.
    """
    level = classify_dust_level(point.blockage, thresholds)
    out = []
    for rule in rules:
        if not rule.applies_to(point.node_id) or level < rule.level_at_least:
            continue
        prev: Optional[datetime] = last_fired.get(rule.rule_id)
        if prev is not None and (point.timestamp - prev).total_seconds() < rule.min_interval:
            continue
        last_fired[rule.rule_id] = point.timestamp
        pct = round(100.0 * point.blockage, 4)
        out.append(Notification(
            rule.rule_id, point.node_id, level, pct, point.timestamp,
            f"{point.node_id}: {level.label} dust, {pct:.2f}% of light blocked",
            rule.webhook_url))
    return out
