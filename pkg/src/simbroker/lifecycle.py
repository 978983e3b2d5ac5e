"""Single-writer lifecycle controller.

Turns API commands into engine calls, allocator updates, and gateway route
publications. Owns the command journal (appended durably before a command is
acknowledged), the nightly snapshot scheduler, and crash recovery.

Commands are processed strictly sequentially under one writer lock; reads of
the session table return snapshots and may run concurrently.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from datetime import datetime, time as dtime
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional

from .allocator import PortAllocator, PortBinding, AllocationError
from .engine import ContainerConfig, ContainerRef, EngineError, EngineStatus
from .gateway import RouteTable
from .journal import JournalEntry, JournalWriter, read_journal
from .sessions import (
    IllegalTransition,
    LifecycleEvent,
    ResourceLimits,
    Session,
    SessionId,
    SessionSpec,
    SessionState,
    transition,
)

__all__ = [
    "CommandKind",
    "Command",
    "SnapshotPolicy",
    "SnapshotAction",
    "UnknownSession",
    "SessionExists",
    "AllocatorExhausted",
    "Controller",
    "replay_journal",
    "recover",
]

log = logging.getLogger(__name__)


class CommandKind(Enum):
    CREATE = "Create"
    SUSPEND = "Suspend"
    RESUME = "Resume"
    STOP = "Stop"
    START = "Start"
    DESTROY = "Destroy"


_EVENT_FOR = {
    CommandKind.SUSPEND: LifecycleEvent.SUSPEND,
    CommandKind.RESUME: LifecycleEvent.RESUME,
    CommandKind.STOP: LifecycleEvent.STOP,
    CommandKind.START: LifecycleEvent.START,
    CommandKind.DESTROY: LifecycleEvent.DESTROY,
}

_ENGINE_ACTION_FOR = {
    CommandKind.SUSPEND: "pause",
    CommandKind.RESUME: "unpause",
    CommandKind.STOP: "stop",
    CommandKind.START: "start",
}

# engine status implied by a session state, used to spot divergence on recovery
_ENGINE_STATUS_FOR_STATE = {
    SessionState.RUNNING: EngineStatus.RUNNING,
    SessionState.SUSPENDED: EngineStatus.PAUSED,
    SessionState.STOPPED: EngineStatus.EXITED,
}

_ROUTED_STATES = (SessionState.RUNNING, SessionState.SUSPENDED)


class UnknownSession(Exception):
    pass


class SessionExists(Exception):
    pass


class AllocatorExhausted(Exception):
    pass


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    issued_by: str
    spec: Optional[SessionSpec] = None
    session_id: Optional[SessionId] = None
    domain: Optional[str] = None  # hostname suffix for Create


@dataclass(frozen=True)
class SnapshotPolicy:
    schedule: dtime = dtime(2, 0)
    retention: int = 7
    tag_pattern: str = "backup/sess-{id}:{date}"

    def __post_init__(self) -> None:
        if self.retention < 1:
            raise ValueError("retention must be >= 1")


@dataclass
class SnapshotAction:
    kind: str  # commit | remove_image
    session_id: int
    tag: str
    error: Optional[str] = None


def _spec_to_dict(spec: SessionSpec) -> dict:
    return {
        "owner": spec.owner,
        "tenant": spec.tenant,
        "image": spec.image,
        "cpu_cores": spec.limits.cpu_cores,
        "memory_bytes": spec.limits.memory_bytes,
        "gpu_required": spec.limits.gpu_required,
        "stream_ssh": spec.stream_ssh,
        "aux_bridge": spec.aux_bridge,
    }


def _spec_from_dict(d: dict) -> SessionSpec:
    return SessionSpec(
        owner=d["owner"],
        tenant=d["tenant"],
        image=d["image"],
        limits=ResourceLimits(
            cpu_cores=d["cpu_cores"],
            memory_bytes=d["memory_bytes"],
            gpu_required=d.get("gpu_required", False),
        ),
        stream_ssh=d["stream_ssh"],
        aux_bridge=d["aux_bridge"],
    )


def _binding_to_dict(b: PortBinding) -> dict:
    return {
        "session": b.session.value,
        "web_host_port": b.web_host_port,
        "hostname": b.hostname,
        "web_container_port": b.web_container_port,
        "aux_bridge_port": b.aux_bridge_port,
        "ssh_stream_port": b.ssh_stream_port,
    }


def _binding_from_dict(d: dict) -> PortBinding:
    return PortBinding(
        session=SessionId(d["session"]),
        web_host_port=d["web_host_port"],
        hostname=d["hostname"],
        web_container_port=d["web_container_port"],
        aux_bridge_port=d["aux_bridge_port"],
        ssh_stream_port=d["ssh_stream_port"],
    )


def replay_journal(entries: list[JournalEntry]) -> dict[int, Session]:
    """Rebuild the session table from acknowledged commands alone."""
    table: dict[int, Session] = {}
    for e in entries:
        at = datetime.fromisoformat(e.at)
        state = SessionState(e.resulting_state)
        if e.kind == CommandKind.CREATE.value:
            container = (
                ContainerRef(id=e.container["id"], host=e.container["host"])
                if e.container
                else None
            )
            table[e.session_id] = Session(
                id=SessionId(e.session_id),
                spec=_spec_from_dict(e.spec or {}),
                state=state,
                created_at=at,
                updated_at=at,
                container=container,
                binding=_binding_from_dict(e.binding) if e.binding else None,
            )
        elif e.kind == CommandKind.DESTROY.value:
            prev = table[e.session_id]
            table[e.session_id] = Session(
                id=prev.id,
                spec=prev.spec,
                state=SessionState.DESTROYED,
                created_at=prev.created_at,
                updated_at=at,
                container=None,
                binding=None,
            )
        else:
            prev = table[e.session_id]
            table[e.session_id] = prev.with_state(state, at)
    return table


def recover(
    entries: list[JournalEntry],
    engine_view: Mapping[str, EngineStatus],
) -> dict[int, Session]:
    """Reconstruct the session table and reconcile it against the engine.

    Where the engine view disagrees with the journal (container vanished or in
    an unexpected status), the session is marked Failed rather than silently
    repaired.
    """
    table = replay_journal(entries)
    for sid, session in list(table.items()):
        expected = _ENGINE_STATUS_FOR_STATE.get(session.state)
        if expected is None:
            continue
        actual = (
            engine_view.get(session.container.id) if session.container is not None else None
        )
        if actual is not expected:
            # direct reconstruction, not a transition(): recovery reconciles
            table[sid] = Session(
                id=session.id,
                spec=session.spec,
                state=SessionState.FAILED,
                created_at=session.created_at,
                updated_at=session.updated_at,
                container=session.container,
                binding=session.binding,
            )
    return table


class RoutePublisher:
    """Minimal publisher interface; Gateway satisfies it, tests fake it."""

    def publish_routes(self, table: RouteTable) -> None:  # pragma: no cover
        raise NotImplementedError


class Controller:
    """The single writer over the session table."""

    def __init__(
        self,
        engine,
        allocator: PortAllocator,
        publisher,
        journal_path: str | Path,
        clock: Callable[[], datetime] = datetime.now,
        snapshot_policy: SnapshotPolicy | None = None,
        default_host: str = "host0",
        network: str = "simnet",
        host_addresses: Mapping[str, str] | None = None,
        static_routes: Mapping[str, str] | None = None,
    ):
        self.engine = engine
        self.allocator = allocator
        self.publisher = publisher
        self.clock = clock
        self.policy = snapshot_policy or SnapshotPolicy()
        self.default_host = default_host
        self.network = network
        self.host_addresses = dict(host_addresses or {})
        self.static_routes = dict(static_routes or {})
        self._journal = JournalWriter(journal_path)
        self._sessions: dict[int, Session] = {}
        self._engine_status: dict[int, Optional[EngineStatus]] = {}
        self._generation = 0
        self._last_routes: Optional[tuple] = None
        self._last_snapshot_date = None
        self._lock = threading.RLock()

    # -- reads -----------------------------------------------------------

    def sessions(self) -> list[Session]:
        with self._lock:
            return sorted(self._sessions.values(), key=lambda s: s.id.value)

    def get(self, id: SessionId) -> Optional[Session]:
        with self._lock:
            return self._sessions.get(id.value)

    def next_session_id(self) -> SessionId:
        """Lowest unused id; ids are not reused within a run by default."""
        with self._lock:
            used = set(self._sessions)
            limit = self.allocator.cfg.max_sessions
            for value in range(1, limit + 1):
                if value not in used:
                    return SessionId(value)
            raise AllocatorExhausted(f"all {limit} session ids in use")

    # -- command processing ------------------------------------------------

    def apply_command(self, cmd: Command) -> Session:
        with self._lock:
            if cmd.kind is CommandKind.CREATE:
                return self._create(cmd)
            return self._operate(cmd)

    def _journal_entry(self, cmd: Command, session: Session) -> None:
        entry = JournalEntry(
            sequence=self._journal.next_sequence,
            at=session.updated_at.isoformat(),
            issued_by=cmd.issued_by,
            kind=cmd.kind.value,
            session_id=session.id.value,
            resulting_state=session.state.value,
            spec=_spec_to_dict(session.spec) if cmd.kind is CommandKind.CREATE else None,
            binding=(
                _binding_to_dict(session.binding)
                if cmd.kind is CommandKind.CREATE and session.binding is not None
                else None
            ),
            container=(
                {"id": session.container.id, "host": session.container.host}
                if cmd.kind is CommandKind.CREATE and session.container is not None
                else None
            ),
        )
        self._journal.append(entry)

    def _create(self, cmd: Command) -> Session:
        if cmd.spec is None:
            raise ValueError("Create requires a spec")
        sid = cmd.session_id or self.next_session_id()
        existing = self._sessions.get(sid.value)
        if existing is not None and existing.state is not SessionState.DESTROYED:
            raise SessionExists(f"session {sid.value} already exists")
        try:
            binding = self.allocator.allocate(
                sid,
                wants_ssh=cmd.spec.stream_ssh,
                wants_aux=cmd.spec.aux_bridge,
                domain=cmd.domain,
            )
        except AllocationError as exc:
            raise AllocatorExhausted(str(exc)) from exc

        now = self.clock()
        cfg = ContainerConfig(
            image=cmd.spec.image,
            memory_limit=cmd.spec.limits.memory_bytes,
            cpu_quota=cmd.spec.limits.cpu_cores,
            port_mappings=binding.port_mappings(),
            network=self.network,
        )
        container: Optional[ContainerRef] = None
        state = SessionState.REQUESTED
        try:
            container = self.engine.create_container(cfg, self.default_host)
            self._engine_status[sid.value] = EngineStatus.CREATED
            self.engine.lifecycle_action(container, "start")
            self._engine_status[sid.value] = EngineStatus.RUNNING
            state = transition(state, LifecycleEvent.PROVISIONED)
        except EngineError as exc:
            log.warning("create of session %d failed: %s", sid.value, exc)
            state = transition(state, LifecycleEvent.FAIL)

        session = Session(
            id=sid,
            spec=cmd.spec,
            state=state,
            created_at=now,
            updated_at=now,
            container=container,
            binding=binding,
        )
        self._sessions[sid.value] = session
        self._journal_entry(cmd, session)
        self._publish_routes()
        return session

    def _operate(self, cmd: Command) -> Session:
        if cmd.session_id is None:
            raise ValueError(f"{cmd.kind.value} requires a session id")
        session = self._sessions.get(cmd.session_id.value)
        if session is None:
            raise UnknownSession(f"no session {cmd.session_id.value}")
        event = _EVENT_FOR[cmd.kind]
        new_state = transition(session.state, event)  # raises before any engine call

        now = self.clock()
        if cmd.kind is CommandKind.DESTROY:
            self._teardown(session)
            self.allocator.release(session.id)
            session = Session(
                id=session.id,
                spec=session.spec,
                state=SessionState.DESTROYED,
                created_at=session.created_at,
                updated_at=now,
                container=None,
                binding=None,
            )
            self._engine_status[session.id.value] = None
        else:
            action = _ENGINE_ACTION_FOR[cmd.kind]
            try:
                status = self.engine.lifecycle_action(session.container, action)
                self._engine_status[session.id.value] = status
                session = session.with_state(new_state, now)
            except EngineError as exc:
                log.warning(
                    "%s of session %d failed: %s", action, session.id.value, exc
                )
                try:
                    failed = transition(session.state, LifecycleEvent.FAIL)
                except IllegalTransition:
                    # no Failed edge from this state (Stopped): keep state, surface error
                    raise exc from None
                session = session.with_state(failed, now)
        self._sessions[session.id.value] = session
        self._journal_entry(cmd, session)
        self._publish_routes()
        return session

    def _teardown(self, session: Session) -> None:
        """Best-effort engine cleanup ordered by the last known engine status."""
        if session.container is None:
            return
        status = self._engine_status.get(session.id.value)
        steps = {
            EngineStatus.RUNNING: ("stop", "remove"),
            EngineStatus.PAUSED: ("unpause", "stop", "remove"),
            EngineStatus.EXITED: ("remove",),
            EngineStatus.CREATED: ("remove",),
            None: (),
        }[status]
        for action in steps:
            try:
                self.engine.lifecycle_action(session.container, action)
            except EngineError as exc:
                log.warning(
                    "teardown %s of session %d: %s", action, session.id.value, exc
                )

    # -- routes ------------------------------------------------------------

    def _route_content(self) -> tuple[dict, dict]:
        http: dict[str, tuple[str, int]] = {}
        streams: dict[int, tuple[str, int]] = {}
        for s in self._sessions.values():
            if s.state not in _ROUTED_STATES or s.binding is None or s.container is None:
                continue
            addr = self.host_addresses.get(s.container.host, "127.0.0.1")
            http[s.binding.hostname.lower()] = (addr, s.binding.web_host_port)
            if s.binding.ssh_stream_port is not None:
                streams[s.binding.ssh_stream_port] = (addr, s.binding.ssh_stream_port)
        return http, streams

    def _publish_routes(self, force: bool = False) -> None:
        http, streams = self._route_content()
        fingerprint = (tuple(sorted(http.items())), tuple(sorted(streams.items())))
        if not force and fingerprint == self._last_routes:
            return
        self._generation += 1
        self.publisher.publish_routes(
            RouteTable(
                http_routes=http,
                stream_routes=streams,
                static_routes=self.static_routes,
                generation=self._generation,
            )
        )
        self._last_routes = fingerprint

    # -- nightly snapshots ---------------------------------------------------

    def tick_scheduler(self, now: datetime | None = None) -> list[SnapshotAction]:
        """Run due snapshot work; idempotent within one schedule window."""
        now = now or self.clock()
        with self._lock:
            if now.time() < self.policy.schedule:
                return []
            if self._last_snapshot_date == now.date():
                return []
            self._last_snapshot_date = now.date()
            actions: list[SnapshotAction] = []
            for session in self.sessions():
                if session.state not in (SessionState.RUNNING, SessionState.SUSPENDED):
                    continue
                tag = self.policy.tag_pattern.format(
                    id=session.id.value, date=now.date().isoformat()
                )
                action = SnapshotAction("commit", session.id.value, tag)
                try:
                    self.engine.commit_image(session.container, tag)
                except EngineError as exc:
                    action.error = str(exc)
                actions.append(action)
                if action.error is not None:
                    continue
                prefix = self.policy.tag_pattern.format(id=session.id.value, date="")
                kept = self.engine.list_images(prefix=prefix)
                while len(kept) > self.policy.retention:
                    victim = kept.pop(0)  # ISO date tags sort oldest-first
                    rm = SnapshotAction("remove_image", session.id.value, victim)
                    try:
                        self.engine.remove_image(victim)
                    except EngineError as exc:
                        rm.error = str(exc)
                    actions.append(rm)
            return actions

    # -- recovery --------------------------------------------------------------

    def recover_from_journal(self) -> dict[int, Session]:
        """Rebuild state after a restart and republish routes."""
        entries = read_journal(self._journal.path)
        view = {ref.id: status for ref, status in self.engine.list_containers()}
        with self._lock:
            table = recover(entries, view)
            self._sessions = table
            for session in table.values():
                if session.binding is not None and session.state is not SessionState.DESTROYED:
                    self.allocator.rebind(session.binding)
                if session.container is not None:
                    self._engine_status[session.id.value] = view.get(session.container.id)
            self._publish_routes(force=True)
            return dict(table)
