"""TCP line protocol and HTTP front ends over one :class:`IngestService`."""

from __future__ import annotations

import json
import logging
import socketserver
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import unquote

from dustsense.telemetry.service import IngestService, StreamNotFound
from dustsense.telemetry.store import StorageError
from dustsense.telemetry.wire import format_timestamp, parse_timestamp

log = logging.getLogger(__name__)

MAX_BODY = 64 * 1024 * 1024


class _LineHandler(socketserver.StreamRequestHandler):
    """One reply per line: ``ok``, ``duplicate``, ``rejected <reason>`` or ``retry <why>``."""

    def handle(self):
        service: IngestService = self.server.service
        for line in self.rfile:
            line = line.rstrip(b"\r\n")
            if not line.strip():
                continue
            try:
                ack = service.ingest_line(line)
                reply = ack.status if ack.status != "rejected" else f"rejected {ack.reason}"
            except StorageError as exc:
                reply = f"retry {exc}"
            except Exception:       # keep the connection and the service alive
                log.exception("tcp ingest failed")
                reply = "retry internal_error"
            try:
                self.wfile.write(reply.encode() + b"\n")
            except OSError:
                return


class LineServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, service: IngestService):
        super().__init__(addr, _LineHandler)
        self.service = service


class _HttpHandler(BaseHTTPRequestHandler):
    server_version = "dustsense"

    def log_message(self, fmt, *args):
        log.debug("%s - " + fmt, self.address_string(), *args)

    def _send(self, code: int, obj, headers: Optional[dict] = None):
        body = json.dumps(obj, separators=(",", ":")).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> Optional[bytes]:
        n = int(self.headers.get("Content-Length") or 0)
        if n > MAX_BODY:
            self._send(413, {"error": "body too large"})
            return None
        return self.rfile.read(n)

    @staticmethod
    def _stream_path(path: str, suffix: str) -> Optional[str]:
        prefix = "/datastream/"
        if path.startswith(prefix) and path.endswith(suffix) and len(path) > len(prefix) + len(suffix):
            return unquote(path[len(prefix):len(path) - len(suffix)])
        return None

    def do_GET(self):
        service: IngestService = self.server.service
        path = self.path.split("?", 1)[0]
        if path == "/health":
            self._send(200, {"status": "ok", **service.stats()})
            return
        name = self._stream_path(path, "/latest")
        if name is None:
            self._send(404, {"error": "not found"})
            return
        try:
            ts, value = service.get_latest(name)
        except StreamNotFound:
            self._send(404, {"error": f"unknown datastream {name!r}"})
            return
        self._send(200, {"ts": format_timestamp(ts), "value": value})

    def do_POST(self):
        service: IngestService = self.server.service
        path = self.path.split("?", 1)[0]
        body = self._body()
        if body is None:
            return
        if path == "/ingest":
            counts = {"accepted": 0, "duplicates": 0, "rejected": 0}
            reasons: dict[str, int] = {}
            for line in body.splitlines():
                if not line.strip():
                    continue
                try:
                    ack = service.ingest_line(line)
                except StorageError as exc:
                    self._send(503, {**counts, "reasons": reasons, "error": str(exc)},
                               {"Retry-After": "1"})
                    return
                if ack.status == "ok":
                    counts["accepted"] += 1
                elif ack.status == "duplicate":
                    counts["duplicates"] += 1
                else:
                    counts["rejected"] += 1
                    reasons[ack.reason] = reasons.get(ack.reason, 0) + 1
            self._send(200, {**counts, "reasons": reasons})
            return
        name = self._stream_path(path, "")
        if name:
            try:
                obj = json.loads(body)
                service.post_value(name, parse_timestamp(obj["ts"]), float(obj["value"]))
            except (ValueError, KeyError, TypeError) as exc:
                self._send(400, {"error": f"bad datastream value: {exc}"})
                return
            except StorageError as exc:
                self._send(503, {"error": str(exc)}, {"Retry-After": "1"})
                return
            self._send(200, {"status": "ok"})
            return
        self._send(404, {"error": "not found"})


class HttpServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, service: IngestService):
        super().__init__(addr, _HttpHandler)
        self.service = service


class ServiceRunner:
    """Starts the HTTP (and optionally TCP) servers on background threads."""

    def __init__(self, service: IngestService, host: str = "127.0.0.1",
                 http_port: int = 0, tcp_port: Optional[int] = 0):
        self.service = service
        self.http = HttpServer((host, http_port), service)
        self.tcp = LineServer((host, tcp_port), service) if tcp_port is not None else None
        self._threads: list[threading.Thread] = []

    @property
    def http_address(self) -> tuple[str, int]:
        return self.http.server_address[:2]

    @property
    def tcp_address(self) -> Optional[tuple[str, int]]:
        return self.tcp.server_address[:2] if self.tcp else None

    def start(self) -> "ServiceRunner":
        for srv in filter(None, (self.http, self.tcp)):
            t = threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.1},
                                 daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        for srv in filter(None, (self.http, self.tcp)):
            srv.shutdown()
            srv.server_close()
        for t in self._threads:
            t.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
