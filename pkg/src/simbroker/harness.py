"""Interactive response-time measurement.

Replays a timed input-event trace against an RFB endpoint (directly or
through the gateway over WebSocket), measures how long each event takes to
produce a qualifying framebuffer update, and reduces the samples to a CDF
with nearest-rank percentiles.

Response time for event i is the arrival of the first qualifying update after
its injection. Exactly one incremental FramebufferUpdateRequest is kept
outstanding: the initial one before injection starts, re-issued immediately
after every update — standard viewer behavior and what the fixture's pacing
contract expects. Events that see no qualifying update within the timeout are
marked skipped.
"""

from __future__ import annotations

import json
import math
import socket
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from . import rfb

__all__ = [
    "TraceEvent",
    "EventTrace",
    "ResponseSample",
    "LatencyReport",
    "NoSamples",
    "HandshakeFailed",
    "ConnectionLost",
    "parse_trace",
    "format_trace",
    "load_trace",
    "replay",
    "compute_cdf",
    "cdf_fraction",
    "nearest_rank",
    "write_report",
    "read_report",
    "report_to_json",
    "report_from_json",
    "sweep",
]

DEFAULT_PERCENTILES = (50, 70, 90, 99, 100)

Rect = tuple[int, int, int, int]


class NoSamples(Exception):
    pass


class HandshakeFailed(Exception):
    pass


class ConnectionLost(Exception):
    """Connection died mid-replay; partial samples are attached."""

    def __init__(self, samples: list["ResponseSample"]):
        self.samples = samples
        super().__init__(f"connection lost after {len(samples)} attributed samples")


@dataclass(frozen=True)
class TraceEvent:
    offset_ms: float
    event: Union[rfb.KeyEvent, rfb.PointerEvent]


@dataclass(frozen=True)
class EventTrace:
    events: tuple[TraceEvent, ...]
    region_of_interest: Optional[Rect] = None

    def __post_init__(self) -> None:
        offsets = [e.offset_ms for e in self.events]
        if any(b < a for a, b in zip(offsets, offsets[1:])):
            raise ValueError("trace offsets must be non-decreasing")


@dataclass(frozen=True)
class ResponseSample:
    event_index: int
    response_ms: Optional[float]  # None means skipped

    def __post_init__(self) -> None:
        if self.response_ms is not None and self.response_ms < 0:
            raise ValueError("response_ms must be >= 0")

    @property
    def skipped(self) -> bool:
        return self.response_ms is None


@dataclass(frozen=True)
class LatencyReport:
    samples: tuple[ResponseSample, ...]
    cdf: tuple[tuple[float, float], ...]
    percentiles: Mapping[int, float]
    skipped_count: int


# -- trace files ----------------------------------------------------------
#
# Line-oriented: `<offset_ms> key <down|up> <keysym-hex>` or
# `<offset_ms> ptr <mask> <x> <y>`; `#` starts a comment.


def parse_trace(text: str) -> EventTrace:
    events = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            offset = float(parts[0])
            kind = parts[1]
            if kind == "key":
                down = {"down": True, "up": False}[parts[2]]
                event: Union[rfb.KeyEvent, rfb.PointerEvent] = rfb.KeyEvent(
                    down, int(parts[3], 16)
                )
            elif kind == "ptr":
                event = rfb.PointerEvent(int(parts[2]), int(parts[3]), int(parts[4]))
            else:
                raise ValueError(f"unknown event kind {kind!r}")
        except (IndexError, KeyError, ValueError) as exc:
            raise ValueError(f"trace line {lineno}: {raw!r}: {exc}") from exc
        events.append(TraceEvent(offset, event))
    return EventTrace(tuple(events))


def format_trace(trace: EventTrace) -> str:
    lines = []
    for te in trace.events:
        ev = te.event
        offset = f"{te.offset_ms:g}"
        if isinstance(ev, rfb.KeyEvent):
            lines.append(f"{offset} key {'down' if ev.down else 'up'} {ev.keysym:#x}")
        else:
            lines.append(f"{offset} ptr {ev.button_mask} {ev.x} {ev.y}")
    return "\n".join(lines) + ("\n" if lines else "")


def load_trace(path: str | Path, region_of_interest: Optional[Rect] = None) -> EventTrace:
    trace = parse_trace(Path(path).read_text())
    if region_of_interest is not None:
        trace = EventTrace(trace.events, region_of_interest)
    return trace


# -- replay -------------------------------------------------------------------


def _intersects(rect: rfb.Rectangle, roi: Rect) -> bool:
    rx, ry, rw, rh = roi
    return not (
        rect.x >= rx + rw
        or rx >= rect.x + rect.width
        or rect.y >= ry + rh
        or ry >= rect.y + rect.height
    )


def _qualifies(update: rfb.FramebufferUpdate, rule: str, roi: Optional[Rect]) -> bool:
    if rule == "first-update":
        return True
    if rule == "roi-intersect":
        if roi is None:
            return True
        return any(_intersects(r, roi) for r in update.rectangles)
    raise ValueError(f"unknown matching rule {rule!r}")


class _Receiver:
    """Reader thread: timestamps updates and keeps one request outstanding."""

    def __init__(self, transport, clock: Callable[[], float], fb_size: tuple[int, int]):
        self.transport = transport
        self.clock = clock
        self.fb_size = fb_size
        self.arrivals: list[tuple[float, rfb.FramebufferUpdate]] = []
        self.lock = threading.Lock()
        self.lost = False
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)

    def request(self) -> None:
        w, h = self.fb_size
        self.transport.write(
            rfb.encode_client(rfb.FramebufferUpdateRequest(True, 0, 0, w, h))
        )

    def snapshot(self) -> list[tuple[float, rfb.FramebufferUpdate]]:
        with self.lock:
            return list(self.arrivals)

    def _run(self) -> None:
        buf = b""
        self.transport.settimeout(0.05)
        while not self._stop.is_set():
            try:
                msg, used = rfb.decode_server(buf)
            except rfb.TruncatedMessage:
                try:
                    buf += self.transport.read_some()
                except (TimeoutError, socket.timeout):
                    continue  # poll timeout: check stop flag
                except OSError:
                    self.lost = True
                    return
                continue
            except rfb.RfbError:
                self.lost = True
                return
            buf = buf[used:]
            if isinstance(msg, rfb.FramebufferUpdate):
                now = self.clock()
                with self.lock:
                    self.arrivals.append((now, msg))
                try:
                    self.request()
                except OSError:
                    self.lost = True
                    return


def replay(
    trace: EventTrace,
    endpoint,
    rule: str = "first-update",
    timeout_ms: float = 5000.0,
    clock: Callable[[], float] = time.monotonic,
    connect_addr: Optional[tuple[str, int]] = None,
    host_header: Optional[str] = None,
) -> list[ResponseSample]:
    """Inject the trace and return one sample per event.

    ``endpoint`` is a (host, port) tuple for plain RFB or a ws:// URL for the
    noVNC-style path through the gateway.
    """
    try:
        transport = rfb.connect_endpoint(endpoint, connect_addr=connect_addr, host_header=host_header)
    except (OSError, ConnectionError) as exc:
        raise HandshakeFailed(str(exc)) from exc
    try:
        try:
            handshake = rfb.client_handshake(transport)
        except (rfb.RfbError, ConnectionError, OSError) as exc:
            raise HandshakeFailed(str(exc)) from exc

        receiver = _Receiver(transport, clock, (handshake.width, handshake.height))
        receiver.request()  # keep one incremental request outstanding from the start
        receiver.start()
        inject_ts: list[float] = []
        lost_midway = False
        try:
            t0 = clock()
            for te in trace.events:
                target = t0 + te.offset_ms / 1000.0
                delay = target - clock()
                if delay > 0:
                    time.sleep(delay)
                try:
                    transport.write(rfb.encode_client(te.event))
                except OSError:
                    lost_midway = True
                    break
                inject_ts.append(clock())

            if inject_ts and not lost_midway:
                deadline = inject_ts[-1] + timeout_ms / 1000.0
                while clock() < deadline:
                    if receiver.lost:
                        lost_midway = True
                        break
                    if _all_matched(inject_ts, receiver.snapshot(), rule, trace.region_of_interest):
                        break
                    time.sleep(0.005)
        finally:
            receiver.stop()

        samples = _attribute(
            inject_ts, receiver.snapshot(), rule, trace.region_of_interest, timeout_ms, clock()
        )
        if lost_midway or receiver.lost:
            raise ConnectionLost(samples)
        return samples
    finally:
        transport.close()


def _all_matched(
    inject_ts: Sequence[float],
    arrivals: Sequence[tuple[float, rfb.FramebufferUpdate]],
    rule: str,
    roi: Optional[Rect],
) -> bool:
    qualifying = [ts for ts, upd in arrivals if _qualifies(upd, rule, roi)]
    if not qualifying:
        return False
    latest = qualifying[-1]
    return all(ts < latest for ts in inject_ts)


def _attribute(
    inject_ts: Sequence[float],
    arrivals: Sequence[tuple[float, rfb.FramebufferUpdate]],
    rule: str,
    roi: Optional[Rect],
    timeout_ms: float,
    now: float,
) -> list[ResponseSample]:
    qualifying = [ts for ts, upd in arrivals if _qualifies(upd, rule, roi)]
    samples = []
    for i, injected in enumerate(inject_ts):
        arrival = next((ts for ts in qualifying if ts > injected), None)
        if arrival is not None and (arrival - injected) * 1000.0 <= timeout_ms:
            samples.append(ResponseSample(i, (arrival - injected) * 1000.0))
        else:
            samples.append(ResponseSample(i, None))
    return samples


# -- CDF / percentiles --------------------------------------------------------


def nearest_rank(sorted_times: Sequence[float], p: float) -> float:
    """p-th percentile as the ceil(p/100 * n)-th smallest sample."""
    if not sorted_times:
        raise NoSamples("no samples")
    n = len(sorted_times)
    rank = max(1, math.ceil(p * n / 100))
    return sorted_times[min(rank, n) - 1]


def compute_cdf(
    samples: Iterable[ResponseSample],
    percentiles: Sequence[int] = DEFAULT_PERCENTILES,
) -> LatencyReport:
    """Reduce samples to CDF points (t_i, i/n) and nearest-rank percentiles.

    Skipped samples are excluded from the CDF but counted.
    """
    samples = tuple(samples)
    times = sorted(s.response_ms for s in samples if not s.skipped)
    skipped = sum(1 for s in samples if s.skipped)
    if not times:
        raise NoSamples("all samples skipped")
    n = len(times)
    cdf = tuple((t, (i + 1) / n) for i, t in enumerate(times))
    pct = {int(p): nearest_rank(times, p) for p in percentiles}
    return LatencyReport(samples=samples, cdf=cdf, percentiles=pct, skipped_count=skipped)


def cdf_fraction(report: LatencyReport, t_ms: float) -> float:
    """Fraction of non-skipped samples at or below ``t_ms``."""
    n = len(report.cdf)
    return sum(1 for t, _ in report.cdf if t <= t_ms) / n


# -- report files ----------------------------------------------------------


def report_to_json(report: LatencyReport) -> str:
    doc = {
        "samples": [
            {"event_index": s.event_index, "response_ms": s.response_ms}
            for s in report.samples
        ],
        "cdf": [[t, f] for t, f in report.cdf],
        "percentiles": {str(p): report.percentiles[p] for p in sorted(report.percentiles)},
        "skipped_count": report.skipped_count,
    }
    return json.dumps(doc, indent=2) + "\n"


def report_from_json(text: str) -> LatencyReport:
    doc = json.loads(text)
    return LatencyReport(
        samples=tuple(
            ResponseSample(s["event_index"], s["response_ms"]) for s in doc["samples"]
        ),
        cdf=tuple((t, f) for t, f in doc["cdf"]),
        percentiles={int(p): v for p, v in doc["percentiles"].items()},
        skipped_count=doc["skipped_count"],
    )


def write_report(report: LatencyReport, path: str | Path) -> None:
    Path(path).write_text(report_to_json(report))


def read_report(path: str | Path) -> LatencyReport:
    return report_from_json(Path(path).read_text())


# -- load sweep ----------------------------------------------------------------


def sweep(
    load_levels: Sequence[int],
    session_factory,
    trace: EventTrace,
    rule: str = "first-update",
    timeout_ms: float = 5000.0,
) -> dict[int, LatencyReport]:
    """Measure one instrumented session per load level.

    ``session_factory(level)`` is a context manager standing up ``level``
    concurrent stub sessions and yielding the endpoint to measure against.
    """
    results: dict[int, LatencyReport] = {}
    for level in load_levels:
        with session_factory(level) as endpoint:
            samples = replay(trace, endpoint, rule=rule, timeout_ms=timeout_ms)
            results[level] = compute_cdf(samples)
    return results
