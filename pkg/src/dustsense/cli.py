"""dustsense command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import functools
import json
import logging
import signal
import socket
import sys
import threading
import urllib.request
from dataclasses import replace
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Optional

import click

from dustsense import detection, imaging, report, scenarios
from dustsense.calibration import PAPER_TARGETS, InfeasibleTargets, Targets, calibrate
from dustsense.errors import DustsenseError
from dustsense.simulator import generate_stream
from dustsense.soiling import Mode
from dustsense.telemetry.service import IngestService, ServiceConfig
from dustsense.telemetry.wire import format_timestamp

log = logging.getLogger("dustsense")

SEND_CHUNK = 2000


class DataError(click.ClickException):
    exit_code = 2


def data_errors(fn):
    """Report bad input files and domain failures as data errors."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (DustsenseError, OSError, ValueError, KeyError) as exc:
            raise DataError(str(exc) or type(exc).__name__) from exc
    return wrapper


class Settings:
    def __init__(self, config: dict, data_dir: Optional[str], seed: Optional[int],
                 tz: Optional[str]):
        self.raw = config
        self.seed = seed if seed is not None else config.get("seed")
        self.timezone = tz or config.get("timezone")
        self.data_dir = data_dir or config.get("data_dir")

    def service_config(self, **overrides) -> ServiceConfig:
        d = {k: v for k, v in self.raw.items() if k in ServiceConfig.__dataclass_fields__}
        if self.data_dir:
            d["data_dir"] = self.data_dir
        if self.timezone:
            d["timezone"] = self.timezone
        d.update({k: v for k, v in overrides.items() if v is not None})
        return ServiceConfig.from_dict(d)


def _rect(value: Optional[str]):
    if not value:
        return None
    try:
        x, y, w, h = (int(v) for v in value.split(","))
    except ValueError:
        raise click.BadParameter("expected x,y,w,h") from None
    return x, y, w, h


def _led(values) -> dict[str, float]:
    out = {}
    for v in values:
        node, _, lux = v.partition("=")
        try:
            out[node] = float(lux)
        except ValueError:
            raise click.BadParameter(f"expected NODE=LUX, got {v!r}") from None
    return out


def _post_value(url: str, stream: str, value: float, ts: datetime) -> None:
    body = json.dumps({"ts": format_timestamp(ts), "value": value}).encode()
    target = f"{url.rstrip('/')}/datastream/{urllib.request.quote(stream, safe='/')}"
    req = urllib.request.Request(target, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=10) as resp:
        resp.read()


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="JSON config file (service settings, seed, timezone).")
@click.option("--data-dir", help="Service data directory.")
@click.option("--seed", type=int, help="Override the scenario seed.")
@click.option("--timezone", "tz", help="Site timezone (IANA name).")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def cli(ctx, config_path, data_dir, seed, tz, verbose):
    """Dust detection toolkit for PV panels."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    config = {}
    if config_path:
        try:
            config = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(config, dict):
            raise DataError("config must be a JSON object")
    if tz:
        from zoneinfo import ZoneInfo, ZoneInfoNotFoundError
        try:
            ZoneInfo(tz)
        except (ZoneInfoNotFoundError, ValueError):
            raise click.BadParameter(f"unknown timezone {tz!r}", param_hint="--timezone")
    ctx.obj = Settings(config, data_dir, seed, tz)


# -- simulate ---------------------------------------------------------------

def _send_tcp(address: str, lines) -> int:
    host, _, port = address.rpartition(":")
    acked = [0]
    with socket.create_connection((host or "127.0.0.1", int(port)), timeout=30) as conn:
        def drain():
            for _ in conn.makefile("rb"):
                acked[0] += 1
        reader = threading.Thread(target=drain, daemon=True)
        reader.start()
        for line in lines:
            conn.sendall(line.encode() + b"\n")
        conn.shutdown(socket.SHUT_WR)
        reader.join()
    return acked[0]


def _send_http(url: str, lines) -> dict:
    totals: dict[str, int] = {}
    batch = []

    def flush():
        req = urllib.request.Request(url.rstrip("/") + "/ingest",
                                     data=("\n".join(batch) + "\n").encode(), method="POST")
        with urllib.request.urlopen(req, timeout=60) as resp:
            res = json.loads(resp.read())
        for k in ("accepted", "duplicates", "rejected"):
            totals[k] = totals.get(k, 0) + res[k]
        batch.clear()

    for line in lines:
        batch.append(line)
        if len(batch) >= SEND_CHUNK:
            flush()
    if batch:
        flush()
    return totals


@cli.command()
@click.argument("scenario")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".",
              show_default=True, help="Directory for the stream and ground-truth files.")
@click.option("--interval", type=click.IntRange(min=1), help="Sample interval in seconds.")
@click.option("--send", "send_tcp", metavar="HOST:PORT", help="Also stream lines over TCP.")
@click.option("--http", "send_http", metavar="URL", help="Also POST lines to URL/ingest.")
@click.pass_obj
@data_errors
def simulate(settings: Settings, scenario, out_dir, interval, send_tcp, send_http):
    """Generate a sensor stream for a preset name or scenario JSON file."""
    try:
        sc = scenarios.resolve(scenario, settings.seed)
    except KeyError as exc:
        raise click.BadParameter(exc.args[0], param_hint="SCENARIO") from None
    if interval:
        sc = replace(sc, sample_interval=interval)
    if settings.timezone:
        sc = replace(sc, timezone=settings.timezone)
    stream = generate_stream(sc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wire_path = out / f"{sc.name}.ndjson"
    truth_path = out / f"{sc.name}.truth.csv"
    lines = list(stream.wire_lines())
    wire_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    truth_path.write_text("\n".join(stream.truth_lines()) + "\n", encoding="utf-8")
    (out / f"{sc.name}.scenario.json").write_text(sc.to_json() + "\n", encoding="utf-8")
    click.echo(f"{sc.name}: {len(lines)} readings over {sc.days} days (seed {sc.seed})")
    click.echo(f"stream: {wire_path}")
    click.echo(f"truth: {truth_path}")
    if send_tcp:
        click.echo(f"tcp: {_send_tcp(send_tcp, lines)} lines acknowledged")
    if send_http:
        click.echo(f"http: {json.dumps(_send_http(send_http, lines), sort_keys=True)}")


# -- serve / replay ------------------------------------------------------------

def _service_options(fn):
    for opt in reversed([
        click.option("--rules", "rules_file", type=click.Path(dir_okay=False),
                     help="Alert rules file (JSON array or one object per line)."),
        click.option("--led-reference", multiple=True, metavar="NODE=LUX",
                     help="Clean LED reading for a node (repeatable)."),
        click.option("--window", "window_s", type=click.FloatRange(min=0), help="Pairing window (s)."),
        click.option("--floor", type=click.FloatRange(min=0), help="Day validity floor (lux)."),
    ]):
        fn = opt(fn)
    return fn


def _build_config(settings: Settings, rules_file, led_reference, window_s, floor, **extra):
    cfg = settings.service_config(rules_file=rules_file, window_s=window_s, floor=floor, **extra)
    if led_reference:
        cfg.led_reference = {**cfg.led_reference, **_led(led_reference)}
    return cfg


@cli.command()
@click.option("--host", help="Bind address.")
@click.option("--http-port", type=click.IntRange(0, 65535), help="HTTP port (0 = any free).")
@click.option("--tcp-port", type=click.IntRange(-1, 65535),
              help="TCP line port (0 = any free, -1 = disabled).")
@click.option("--duration", type=click.FloatRange(min=0),
              help="Stop after this many seconds instead of waiting for a signal.")
@_service_options
@click.pass_obj
@data_errors
def serve(settings: Settings, host, http_port, tcp_port, duration, rules_file, led_reference,
          window_s, floor):
    """Run the ingestion service until interrupted."""
    from dustsense.telemetry.server import ServiceRunner
    from dustsense.telemetry.webhook import WebhookDispatcher

    cfg = _build_config(settings, rules_file, led_reference, window_s, floor,
                        host=host, http_port=http_port)
    if tcp_port is not None:
        cfg.tcp_port = None if tcp_port < 0 else tcp_port
    Path(cfg.data_dir).mkdir(parents=True, exist_ok=True)
    dispatcher = WebhookDispatcher(Path(cfg.data_dir) / "deliveries.log")
    service = IngestService(cfg, notify=dispatcher.submit)
    runner = ServiceRunner(service, cfg.host, cfg.http_port, cfg.tcp_port).start()
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            signal.signal(sig, lambda *_: stop.set())
        except ValueError:  # not in the main thread
            pass
    h, p = runner.http_address
    click.echo(f"http: http://{h}:{p}", nl=True)
    if runner.tcp_address:
        click.echo("tcp: %s:%d" % runner.tcp_address)
    click.echo(f"data: {cfg.data_dir} rules: {len(service.rules)}")
    sys.stdout.flush()
    stop.wait(duration)
    runner.stop()
    service.flush_pending()
    dispatcher.drain()
    dispatcher.close()
    service.close()
    click.echo(f"stopped: {json.dumps(service.stats(), sort_keys=True)}")


@cli.command()
@click.argument("log_path", type=click.Path(exists=True))
@_service_options
@click.pass_obj
@data_errors
def replay(settings: Settings, log_path, rules_file, led_reference, window_s, floor):
    """Rebuild a derived store from a raw log file or directory into --data-dir."""
    cfg = _build_config(settings, rules_file, led_reference, window_s, floor)
    if not settings.data_dir and "data_dir" not in settings.raw:
        raise click.UsageError("replay needs --data-dir for the rebuilt store")
    target = Path(cfg.data_dir)
    if (target / "raw").is_dir() and any((target / "raw").iterdir()):
        raise DataError(f"{target} already holds a store; replay into an empty directory")
    service = IngestService(cfg, rules=[], recover=False)
    stats = service.replay(log_path)
    service.close()
    click.echo(json.dumps({**stats, "points": service.stats()["points"],
                           "unpaired": service.stats()["unpaired"]}, sort_keys=True))


# -- analyze -----------------------------------------------------------------

def _period(value: Optional[str]):
    if not value:
        return None
    start, _, end = value.partition(":")
    try:
        return date.fromisoformat(start), date.fromisoformat(end or start)
    except ValueError:
        raise click.BadParameter("expected START[:END] ISO dates") from None


@cli.command()
@click.argument("derived", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="report",
              show_default=True)
@click.option("--period", help="Restrict to local dates START[:END] (inclusive).")
@click.option("--mode", type=click.Choice(["day", "night", "all"]), default="day",
              show_default=True)
@click.pass_obj
@data_errors
def analyze(settings: Settings, derived, out_dir, period, mode):
    """Daily and monthly tables, SVG plots and a summary from a derived log."""
    span = _period(period)
    points = report.load_points(derived, None if mode == "all" else Mode(mode))
    bundle = report.build(points, settings.timezone or ServiceConfig().timezone, span)
    report.write_bundle(bundle, out_dir)
    click.echo(report.summary_text(bundle), nl=False)
    click.echo(f"wrote {len(bundle.files)} files to {out_dir}")


# -- images ------------------------------------------------------------------

def _image_options(fn):
    for opt in reversed([
        click.option("--rect", help="Crop to x,y,w,h before processing."),
        click.option("--radius", type=click.IntRange(min=1), default=imaging.DEFAULT_RADIUS,
                     show_default=True, help="Local-contrast window radius."),
        click.option("--threshold", type=click.IntRange(0, 256),
                     default=imaging.DEFAULT_THRESHOLD, show_default=True),
        click.option("--no-enhance", is_flag=True, help="Skip local-contrast enhancement."),
        click.option("--smooth", is_flag=True, help="3x3 mean filter before thresholding."),
        click.option("--invert", is_flag=True, help="Treat bright features as dark."),
        click.option("--post", "post_url", metavar="URL", help="Post the result to a service."),
        click.option("--stream", "stream_name", help="Datastream name for --post."),
    ]):
        fn = opt(fn)
    return fn


def _pipeline(path, rect, radius, threshold, no_enhance, smooth, invert):
    img = imaging.read_image(path)
    return img, imaging.run_pipeline(img, _rect(rect), radius=radius, threshold=threshold,
                                     enhance=not no_enhance, smooth=smooth, invert=invert)


@cli.command("classify-image")
@click.argument("image", type=click.Path(dir_okay=False))
@_image_options
@click.option("--binary-out", type=click.Path(dir_okay=False), help="Write the binary image (PGM).")
@data_errors
def classify_image(image, rect, radius, threshold, no_enhance, smooth, invert, post_url,
                   stream_name, binary_out):
    """Black/white pixel report and dust class for a PGM/PPM image."""
    _, res = _pipeline(image, rect, radius, threshold, no_enhance, smooth, invert)
    r = res.report
    click.echo(f"image: {image}")
    click.echo(f"black_pixels: {r.black_pixels}")
    click.echo(f"white_pixels: {r.white_pixels}")
    click.echo(f"black_ratio: {r.black_ratio!r} ({100 * r.black_ratio:.2f}%)")
    click.echo(f"class: {res.dust_class.label}")
    if binary_out:
        imaging.write_image(binary_out, imaging.binary_to_raster(res.binary))
    if post_url:
        # dust present -> 1, clean -> 0
        value = 0.0 if res.dust_class is imaging.ImageDustClass.NO_DUST else 1.0
        name = stream_name or f"{Path(image).stem}/dust"
        _post_value(post_url, name, value, datetime.now(timezone.utc))
        click.echo(f"posted {value} to {name}")


@cli.command()
@click.argument("image", type=click.Path(dir_okay=False))
@_image_options
@click.option("--min-area", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--image-id", help="Image id for the prediction rows (default: file stem).")
@click.option("--out", "out_file", type=click.Path(dir_okay=False),
              help="Write predictions CSV here instead of stdout.")
@data_errors
def detect(image, rect, radius, threshold, no_enhance, smooth, invert, post_url, stream_name,
           min_area, image_id, out_file):
    """Blob detector: boxes around connected dark regions, as prediction rows."""
    _, res = _pipeline(image, rect, radius, threshold, no_enhance, smooth, invert)
    dx, dy = (_rect(rect) or (0, 0, 0, 0))[:2]
    image_id = image_id or Path(image).stem
    dets = []
    for b in imaging.connected_components(res.binary, min_area):
        box = detection.BoundingBox(b.xmin + dx, b.ymin + dy, b.xmax + dx, b.ymax + dy)
        dets.append(detection.Detection(image_id, box, detection.DEFAULT_CLASS, 1.0))
    text = detection.format_predictions(dets)
    if out_file:
        Path(out_file).write_text(text, encoding="utf-8")
        click.echo(f"{len(dets)} detections written to {out_file}")
    else:
        click.echo(text, nl=False)
    if post_url:
        name = stream_name or f"{image_id}/detection"
        _post_value(post_url, name, 1.0 if dets else 0.0, datetime.now(timezone.utc))


@cli.command("eval-iou")
@click.argument("pred_file", type=click.Path(dir_okay=False))
@click.argument("voc_dir", type=click.Path())
@click.option("--threshold", type=click.FloatRange(0, 1, min_open=True),
              default=detection.DEFAULT_IOU_THRESHOLD, show_default=True)
@data_errors
def eval_iou(pred_file, voc_dir, threshold):
    """IoU report for predictions against VOC XML annotations."""
    preds = detection.read_predictions(Path(pred_file).read_text(encoding="utf-8"))
    voc = Path(voc_dir)
    files = sorted(voc.glob("*.xml")) if voc.is_dir() else [voc]
    if not files or not all(f.exists() for f in files):
        raise DataError(f"no VOC annotations found at {voc_dir}")
    anns = [detection.load_voc(f) for f in files]
    click.echo(detection.evaluate(preds, anns, threshold).render(), nl=False)


@cli.command("calibrate")
@click.argument("targets_file", type=click.Path(dir_okay=False), required=False)
@click.option("--scenario", "scenario_name", default="april-month", show_default=True,
              help="Scenario whose PM/rain series drive the fit.")
@click.option("--out", "out_file", type=click.Path(dir_okay=False),
              help="Write the calibrated scenario JSON here.")
@click.pass_obj
@data_errors
def calibrate_cmd(settings: Settings, targets_file, scenario_name, out_file):
    """Fit deposition and angle constants to daily blockage targets.

    Without TARGETS_FILE the built-in field anchors are used.
    """
    try:
        sc = scenarios.resolve(scenario_name, settings.seed)
    except KeyError as exc:
        raise click.BadParameter(exc.args[0], param_hint="--scenario") from None
    targets = (Targets.parse(Path(targets_file).read_text(encoding="utf-8"))
               if targets_file else PAPER_TARGETS)
    try:
        result = calibrate(sc, targets)
    except InfeasibleTargets as exc:
        raise DataError(f"infeasible targets: {exc}") from exc
    click.echo(result.summary())
    if out_file:
        Path(out_file).write_text(replace(sc, params=result.params).to_json() + "\n",
                                  encoding="utf-8")
        click.echo(f"scenario written to {out_file}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="dustsense", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
