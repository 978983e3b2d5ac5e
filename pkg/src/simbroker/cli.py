"""Command-line entry points.

``serve`` runs the control plane (API + embedded gateway); the ``session``
and ``plan`` groups are thin HTTP clients against a running server; ``bench``
drives the latency harness directly; ``fixture`` serves the synthetic RFB
endpoint.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import click
import httpx

from .api import Broker, build_app, build_broker
from .config import BrokerConfig, load_config
from .gateway import Gateway
from .harness import (
    cdf_fraction,
    compute_cdf,
    load_trace,
    read_report,
    replay,
    sweep,
    write_report,
)
from .journal import read_journal
from .rfb_fixture import RfbFixture, ServerFixtureConfig

log = logging.getLogger("simbroker")


@dataclass
class Runtime:
    config: BrokerConfig
    broker: Broker
    gateway: Gateway
    app: object
    _scheduler_stop: threading.Event

    def start_scheduler(self, interval_s: float = 30.0) -> None:
        def loop():
            while not self._scheduler_stop.wait(interval_s):
                try:
                    self.broker.controller.tick_scheduler()
                except Exception:  # survives engine hiccups; next tick retries
                    log.exception("snapshot scheduler tick failed")

        threading.Thread(target=loop, daemon=True).start()

    def shutdown(self) -> None:
        self._scheduler_stop.set()
        self.gateway.stop()


def build_runtime(config: BrokerConfig, engine=None) -> Runtime:
    gateway = Gateway(
        host=config.gateway_host, http_port=config.gateway_port, tls=config.tls
    )
    gateway.start()
    broker = build_broker(config, engine=engine, publisher=gateway)
    if read_journal(config.journal_path):
        count = len(broker.controller.recover_from_journal())
        log.info("recovered %d sessions from journal", count)
    broker.reports_dir.mkdir(parents=True, exist_ok=True)
    app = build_app(broker)
    return Runtime(config, broker, gateway, app, threading.Event())


@click.group()
@click.option("--server", envvar="SIMBROKER_SERVER", default="http://127.0.0.1:8000",
              show_default=True, help="Control API base URL (thin-client commands).")
@click.option("--token", envvar="SIMBROKER_TOKEN", default="", help="Bearer token.")
@click.pass_context
def main(ctx, server, token):
    logging.basicConfig(level=os.environ.get("SIMBROKER_LOG_LEVEL", "INFO"))
    ctx.obj = {"server": server, "token": token}


@contextmanager
def api_client(ctx):
    headers = {}
    if ctx.obj["token"]:
        headers["Authorization"] = f"Bearer {ctx.obj['token']}"
    with httpx.Client(base_url=ctx.obj["server"], headers=headers, timeout=30) as client:
        yield client


def show(resp: httpx.Response) -> None:
    if resp.status_code >= 400:
        click.echo(f"error {resp.status_code}: {resp.text}", err=True)
        raise SystemExit(1)
    click.echo(json.dumps(resp.json(), indent=2, default=str))


@main.command()
@click.option("--config", "config_path", envvar="SIMBROKER_CONFIG", required=True,
              type=click.Path(exists=True), help="YAML config file.")
def serve(config_path):
    """Run the control plane: API server plus embedded gateway."""
    import uvicorn

    cfg = load_config(config_path)
    runtime = build_runtime(cfg)
    runtime.start_scheduler()
    click.echo(
        f"api on {cfg.api_host}:{cfg.api_port}, "
        f"gateway on {cfg.gateway_host}:{runtime.gateway.http_port}"
    )
    try:
        uvicorn.run(runtime.app, host=cfg.api_host, port=cfg.api_port, log_level="info")
    finally:
        runtime.shutdown()


# -- session management (thin client) ---------------------------------------


@main.group()
def session():
    """Create and operate sessions through the control API."""


@session.command("create")
@click.option("--image", default=None)
@click.option("--cpu", type=float, default=None)
@click.option("--memory-bytes", type=int, default=None)
@click.option("--ssh", is_flag=True, help="Request a TCP stream port for SSH.")
@click.option("--aux", is_flag=True, help="Request the auxiliary game-engine bridge port.")
@click.pass_context
def session_create(ctx, image, cpu, memory_bytes, ssh, aux):
    body = {"stream_ssh": ssh, "aux_bridge": aux}
    if image:
        body["image"] = image
    if cpu:
        body["cpu_cores"] = cpu
    if memory_bytes:
        body["memory_bytes"] = memory_bytes
    with api_client(ctx) as client:
        show(client.post("/api/sessions", json=body))


@session.command("list")
@click.pass_context
def session_list(ctx):
    with api_client(ctx) as client:
        show(client.get("/api/sessions"))


def _op_command(name, method, path_suffix):
    @session.command(name)
    @click.argument("session_id", type=int)
    @click.pass_context
    def cmd(ctx, session_id):
        with api_client(ctx) as client:
            show(client.request(method, f"/api/sessions/{session_id}{path_suffix}"))

    cmd.__name__ = f"session_{name}"
    return cmd


_op_command("suspend", "POST", "/suspend")
_op_command("resume", "POST", "/resume")
_op_command("stop", "POST", "/stop")
_op_command("start", "POST", "/start")
_op_command("rm", "DELETE", "")


@main.command("plan")
@click.option("--hosts", "hosts_file", type=click.Path(exists=True), default=None,
              help="YAML list of hosts; defaults to the server's configured hosts.")
@click.option("--vehicles", type=int, required=True)
@click.option("--vehicle-cpu", type=float, default=2.0, show_default=True)
@click.option("--renderer-cpu", type=float, default=4.0, show_default=True)
@click.option("--rtt", multiple=True, metavar="A:B=MS", help="RTT entries, repeatable.")
@click.pass_context
def plan_cmd(ctx, hosts_file, vehicles, vehicle_cpu, renderer_cpu, rtt):
    """Dry-run placement of a renderer plus N vehicle workloads."""
    import yaml

    body = {"vehicles": vehicles, "vehicle_cpu": vehicle_cpu, "renderer_cpu": renderer_cpu}
    if hosts_file:
        doc = yaml.safe_load(Path(hosts_file).read_text())
        body["hosts"] = [
            {
                "id": h["id"],
                "cpu_capacity": float(h.get("cpu", 8)),
                "mem_capacity": int(h.get("memory_bytes", 32 * 1024**3)),
                "has_gpu": bool(h.get("gpu", False)),
                "overlay": h.get("overlay", "simnet"),
            }
            for h in doc
        ]
    if rtt:
        body["rtt_ms"] = {}
        for entry in rtt:
            pair, _, ms = entry.partition("=")
            body["rtt_ms"][pair] = float(ms)
    with api_client(ctx) as client:
        show(client.post("/api/plan", json=body))


# -- latency harness ------------------------------------------------------------


def _parse_roi(text):
    if not text:
        return None
    x, y, size = text.split(",")
    w, _, h = size.partition("x")
    return (int(x), int(y), int(w), int(h))


@main.group()
def bench():
    """Interactive response-time measurement."""


@bench.command("replay")
@click.option("--trace", "trace_file", type=click.Path(exists=True), required=True)
@click.option("--endpoint", default=None, metavar="HOST:PORT", help="Plain RFB endpoint.")
@click.option("--ws", "ws_url", default=None, metavar="URL", help="RFB over WebSocket.")
@click.option("--rule", type=click.Choice(["first", "roi"]), default="first", show_default=True)
@click.option("--roi", default=None, metavar="X,Y,WxH", help="Region of interest.")
@click.option("--timeout", "timeout_ms", type=float, default=5000.0, show_default=True)
@click.option("--out", "out_file", type=click.Path(), default=None, help="Write the report here.")
def bench_replay(trace_file, endpoint, ws_url, rule, roi, timeout_ms, out_file):
    """Replay a trace against an RFB endpoint and report response times."""
    if (endpoint is None) == (ws_url is None):
        raise click.UsageError("exactly one of --endpoint or --ws is required")
    trace = load_trace(trace_file, region_of_interest=_parse_roi(roi))
    if endpoint:
        host, _, port = endpoint.rpartition(":")
        target = (host, int(port))
    else:
        target = ws_url
    rule_name = "first-update" if rule == "first" else "roi-intersect"
    samples = replay(trace, target, rule=rule_name, timeout_ms=timeout_ms)
    report = compute_cdf(samples)
    if out_file:
        write_report(report, out_file)
    click.echo(_summary(report))


def _summary(report) -> str:
    pct = ", ".join(f"P{p}={report.percentiles[p]:.1f}ms" for p in sorted(report.percentiles))
    return f"{len(report.samples)} events, {report.skipped_count} skipped | {pct}"


@bench.command("sweep")
@click.option("--levels", required=True, metavar="N,N,...", help="Concurrent stub session counts.")
@click.option("--events", type=int, default=20, show_default=True)
@click.option("--spacing", type=float, default=120.0, show_default=True, help="Event spacing ms.")
@click.option("--delay-per-level", type=float, default=1.0, show_default=True,
              help="Fixture delay = level * this many ms.")
@click.option("--timeout", "timeout_ms", type=float, default=5000.0, show_default=True)
@click.option("--out-dir", type=click.Path(), default=None)
def bench_sweep(levels, events, spacing, delay_per_level, timeout_ms, out_dir):
    """Self-contained load sweep: stub sessions on a fake engine, one
    instrumented fixture endpoint per level."""
    from simbroker.harness import EventTrace, TraceEvent
    from simbroker import rfb as _rfb

    level_list = [int(x) for x in levels.split(",") if x]
    trace = EventTrace(
        tuple(TraceEvent(i * spacing, _rfb.KeyEvent(True, 0x61)) for i in range(events))
    )

    @contextmanager
    def factory(level):
        with _stub_sessions(level), RfbFixture(
            ServerFixtureConfig(response_delay=level * delay_per_level)
        ) as fx:
            yield ("127.0.0.1", fx.port)

    reports = sweep(level_list, factory, trace, timeout_ms=timeout_ms)
    for level, report in reports.items():
        click.echo(f"level {level}: {_summary(report)}")
        if out_dir:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_report(report, Path(out_dir) / f"sweep-{level}.json")


@contextmanager
def _stub_sessions(count):
    """Stand up ``count`` stub sessions against an in-memory control plane."""
    import tempfile

    from simbroker.lifecycle import Command, CommandKind
    from simbroker.sessions import ResourceLimits, SessionSpec

    with tempfile.TemporaryDirectory() as tmp:
        broker = build_broker(journal_path=Path(tmp) / "journal.bin")
        for _ in range(count):
            broker.controller.apply_command(
                Command(
                    kind=CommandKind.CREATE,
                    issued_by="bench",
                    spec=SessionSpec(
                        owner="bench",
                        tenant="asu",
                        image="stub-desktop:1",
                        limits=ResourceLimits(cpu_cores=0.1, memory_bytes=1024**2),
                    ),
                )
            )
        yield broker


@bench.command("report")
@click.option("--in", "in_file", type=click.Path(exists=True), required=True)
@click.option("--percentile", type=float, default=None, help="Print one percentile.")
@click.option("--at", "at_ms", type=float, default=None, help="Print CDF fraction at T ms.")
def bench_report(in_file, percentile, at_ms):
    """Inspect a stored latency report."""
    from simbroker.harness import nearest_rank

    report = read_report(in_file)
    if percentile is not None:
        times = sorted(t for t, _ in report.cdf)
        click.echo(f"P{percentile:g} = {nearest_rank(times, percentile):.1f} ms")
    elif at_ms is not None:
        click.echo(f"cdf({at_ms:g} ms) = {cdf_fraction(report, at_ms):.4f}")
    else:
        click.echo(_summary(report))


@main.command("fixture")
@click.option("--port", type=int, default=5900, show_default=True)
@click.option("--delay", type=float, default=0.0, show_default=True, help="Response delay ms.")
@click.option("--delays-file", type=click.Path(exists=True), default=None,
              help="One delay (ms) per line, consumed per event in order.")
@click.option("--size", default="640x480", show_default=True, metavar="WxH")
@click.option("--ws", is_flag=True, help="Speak RFB inside binary WebSocket frames.")
@click.option("--run-for", type=float, default=0.0, help="Exit after N seconds (0 = forever).")
def fixture_cmd(port, delay, delays_file, size, ws, run_for):
    """Serve the synthetic RFB endpoint with configurable latency."""
    width, _, height = size.partition("x")
    delays = delay
    if delays_file:
        delays = [
            float(line)
            for line in Path(delays_file).read_text().splitlines()
            if line.strip()
        ]
    cfg = ServerFixtureConfig(
        response_delay=delays, width=int(width), height=int(height)
    )
    fixture = RfbFixture(cfg, port=port, ws=ws)
    fixture.start()
    click.echo(f"rfb fixture on 127.0.0.1:{fixture.port} (ws={ws})")
    try:
        if run_for > 0:
            time.sleep(run_for)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        fixture.stop()


if __name__ == "__main__":
    main()
