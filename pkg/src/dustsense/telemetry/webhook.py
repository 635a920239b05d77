"""Outbound webhook delivery with bounded retries and a delivery log."""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from dustsense.telemetry.alerts import Notification

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
BACKOFF_S = (1.0, 2.0, 4.0)
TIMEOUT_S = 5.0

# post(url, body) -> HTTP status; raises OSError when the connection fails
Poster = Callable[[str, bytes], int]


def http_post(url: str, body: bytes) -> int:
    req = urllib.request.Request(url, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=TIMEOUT_S) as resp:
            return resp.status
    except urllib.error.HTTPError as exc:
        return exc.code


@dataclass
class DeliveryResult:
    rule_id: str
    url: str
    delivered: bool
    attempts: int
    status: Optional[int] = None
    error: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps({"rule_id": self.rule_id, "url": self.url, "delivered": self.delivered,
                           "attempts": self.attempts, "status": self.status, "error": self.error},
                          separators=(",", ":"))


def deliver_webhook(note: Notification, url: Optional[str] = None, post: Poster = http_post,
                    sleep: Callable[[float], None] = time.sleep,
                    log_path: Optional[Path] = None) -> DeliveryResult:
    """POST the notification; 2xx is success, anything else is retried.

    Waits ``BACKOFF_S[i]`` after failed attempt ``i``; no wait follows the last
    attempt. The outcome is appended to ``log_path`` when given.
    """
    url = url or note.webhook_url
    body = note.body()
    status, error = None, None
    attempt = 0
    for attempt in range(1, MAX_ATTEMPTS + 1):
        try:
            status, error = post(url, body), None
        except OSError as exc:
            status, error = None, f"{type(exc).__name__}: {exc}"
        if status is not None and 200 <= status < 300:
            break
        if error is None:
            error = f"HTTP {status}"
        if attempt < MAX_ATTEMPTS:
            sleep(BACKOFF_S[attempt - 1])
    delivered = status is not None and 200 <= status < 300
    result = DeliveryResult(note.rule_id, url, delivered, attempt, status,
                            None if delivered else error)
    if not delivered:
        log.warning("webhook %s for rule %s failed permanently after %d attempts: %s",
                    url, note.rule_id, attempt, error)
    if log_path is not None:
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(result.to_json() + "\n")
    return result


class WebhookDispatcher:
    """Background worker so slow or dead endpoints never hold up ingestion."""

    def __init__(self, log_path: Optional[Path] = None, post: Poster = http_post,
                 sleep: Callable[[float], None] = time.sleep):
        self.log_path = log_path
        self.post = post
        self.sleep = sleep
        self.results: list[DeliveryResult] = []
        self._q: "queue.Queue[Optional[Notification]]" = queue.Queue()
        self._thread = threading.Thread(target=self._run, name="webhooks", daemon=True)
        self._thread.start()

    def submit(self, note: Notification) -> None:
        self._q.put(note)

    def _run(self):
        while True:
            note = self._q.get()
            try:
                if note is None:
                    return
                self.results.append(deliver_webhook(note, post=self.post, sleep=self.sleep,
                                                    log_path=self.log_path))
            except Exception:  # a bad notification must not kill the worker
                log.exception("webhook delivery crashed")
            finally:
                self._q.task_done()

    def drain(self) -> None:
        self._q.join()

    def close(self) -> None:
        self._q.put(None)
        self._thread.join()
