"""Deterministic session-ID to port/hostname allocation.

The web port is ``web_base + id`` (so session 5 is reachable on 4005 with the
defaults), the hostname is ``term-<id>.<domain>``, the auxiliary game-engine
bridge is ``aux_base + id`` on the host side (container side is always 9090),
and SSH stream ports are lowest-free within a configured range.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from typing import Optional

from .sessions import SessionId

__all__ = [
    "WEB_CONTAINER_PORT",
    "AUX_CONTAINER_PORT",
    "SSH_CONTAINER_PORT",
    "PortBinding",
    "AllocatorConfig",
    "AllocationError",
    "IdOutOfRange",
    "AlreadyBound",
    "StreamRangeExhausted",
    "PortAllocator",
]

WEB_CONTAINER_PORT = 40001
AUX_CONTAINER_PORT = 9090
SSH_CONTAINER_PORT = 22

_HOSTNAME_RE = re.compile(r"^term-([1-9][0-9]*)\.(.+)$")


class AllocationError(Exception):
    pass


class IdOutOfRange(AllocationError):
    pass


class AlreadyBound(AllocationError):
    pass


class StreamRangeExhausted(AllocationError):
    pass


@dataclass(frozen=True)
class PortBinding:
    session: SessionId
    web_host_port: int
    hostname: str
    web_container_port: int = WEB_CONTAINER_PORT
    aux_bridge_port: Optional[int] = None
    ssh_stream_port: Optional[int] = None

    def host_ports(self) -> set[int]:
        ports = {self.web_host_port}
        if self.aux_bridge_port is not None:
            ports.add(self.aux_bridge_port)
        if self.ssh_stream_port is not None:
            ports.add(self.ssh_stream_port)
        return ports

    def port_mappings(self) -> tuple[tuple[int, int], ...]:
        """(container_port, host_port) pairs for the container engine."""
        mappings = [(self.web_container_port, self.web_host_port)]
        if self.aux_bridge_port is not None:
            mappings.append((AUX_CONTAINER_PORT, self.aux_bridge_port))
        if self.ssh_stream_port is not None:
            mappings.append((SSH_CONTAINER_PORT, self.ssh_stream_port))
        return tuple(mappings)


@dataclass(frozen=True)
class AllocatorConfig:
    domain: str = "openuas.us"
    web_base: int = 4000
    max_sessions: int = 99
    stream_range: tuple[int, int] = (2200, 2299)
    aux_base: int = 9000

    def __post_init__(self) -> None:
        if self.max_sessions < 1:
            raise ValueError("max_sessions must be >= 1")
        web = range(self.web_base + 1, self.web_base + self.max_sessions + 1)
        aux = range(self.aux_base + 1, self.aux_base + self.max_sessions + 1)
        stream = range(self.stream_range[0], self.stream_range[1] + 1)
        if self.stream_range[0] > self.stream_range[1]:
            raise ValueError("stream_range must be a non-empty inclusive range")
        for a, b, names in (
            (web, stream, "web/stream"),
            (web, aux, "web/aux"),
            (aux, stream, "aux/stream"),
        ):
            if range(max(a.start, b.start), min(a.stop, b.stop)):
                raise ValueError(f"{names} port windows overlap")


class PortAllocator:
    """Tracks live bindings; state is a pure function of the operation history.

    Mutation is guarded for exclusive access; all operations are linearizable.
    """

    def __init__(self, cfg: AllocatorConfig | None = None):
        self.cfg = cfg or AllocatorConfig()
        self._bindings: dict[int, PortBinding] = {}
        self._by_hostname: dict[str, int] = {}
        self._ssh_in_use: set[int] = set()
        self._lock = threading.Lock()

    def allocate(
        self,
        id: SessionId,
        wants_ssh: bool = False,
        wants_aux: bool = False,
        domain: str | None = None,
    ) -> PortBinding:
        """Bind ports and a hostname for a session id.

        ``domain`` overrides the configured DNS suffix (per-tenant virtual
        hosts); the port scheme is unaffected.
        """
        cfg = self.cfg
        with self._lock:
            if id.value > cfg.max_sessions:
                raise IdOutOfRange(f"id {id.value} > max_sessions {cfg.max_sessions}")
            if id.value in self._bindings:
                raise AlreadyBound(f"session {id.value} already has a binding")
            ssh_port = None
            if wants_ssh:
                lo, hi = cfg.stream_range
                for p in range(lo, hi + 1):
                    if p not in self._ssh_in_use:
                        ssh_port = p
                        break
                else:
                    raise StreamRangeExhausted(f"no free port in {lo}-{hi}")
            binding = PortBinding(
                session=id,
                web_host_port=cfg.web_base + id.value,
                hostname=f"term-{id.value}.{domain or cfg.domain}",
                aux_bridge_port=cfg.aux_base + id.value if wants_aux else None,
                ssh_stream_port=ssh_port,
            )
            self._bindings[id.value] = binding
            self._by_hostname[binding.hostname.lower()] = id.value
            if ssh_port is not None:
                self._ssh_in_use.add(ssh_port)
            return binding

    def release(self, id: SessionId) -> None:
        """Free all ports of a binding; releasing an unbound id is a no-op."""
        with self._lock:
            binding = self._bindings.pop(id.value, None)
            if binding is None:
                return
            self._by_hostname.pop(binding.hostname.lower(), None)
            if binding.ssh_stream_port is not None:
                self._ssh_in_use.discard(binding.ssh_stream_port)

    def lookup(self, hostname: str) -> Optional[SessionId]:
        """Inverse of the hostname rule, for bound sessions only."""
        with self._lock:
            value = self._by_hostname.get(hostname.lower())
            return SessionId(value) if value is not None else None

    def get(self, id: SessionId) -> Optional[PortBinding]:
        with self._lock:
            return self._bindings.get(id.value)

    def bindings(self) -> list[PortBinding]:
        with self._lock:
            return sorted(self._bindings.values(), key=lambda b: b.session.value)

    def rebind(self, binding: PortBinding) -> None:
        """Re-register a binding verbatim (crash recovery path)."""
        with self._lock:
            if binding.session.value in self._bindings:
                raise AlreadyBound(f"session {binding.session.value} already bound")
            self._bindings[binding.session.value] = binding
            self._by_hostname[binding.hostname.lower()] = binding.session.value
            if binding.ssh_stream_port is not None:
                self._ssh_in_use.add(binding.ssh_stream_port)


def parse_hostname(hostname: str) -> Optional[tuple[int, str]]:
    """Split ``term-<id>.<domain>`` into (id, domain); None if it does not match."""
    m = _HOSTNAME_RE.match(hostname.lower())
    if not m:
        return None
    return int(m.group(1)), m.group(2)
