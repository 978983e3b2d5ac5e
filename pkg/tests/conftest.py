"""Shared fixtures: fake engine, fake route publisher, controller factory."""

from datetime import datetime, timedelta

import pytest

from simbroker.allocator import AllocatorConfig, PortAllocator
from simbroker.engine import FakeEngine
from simbroker.gateway import RouteTable
from simbroker.lifecycle import Command, CommandKind, Controller, SnapshotPolicy
from simbroker.sessions import ResourceLimits, SessionId, SessionSpec

GIB = 1024**3


class FakePublisher:
    """Records every published route table."""

    def __init__(self):
        self.tables: list[RouteTable] = []

    def publish_routes(self, table: RouteTable) -> None:
        self.tables.append(table)

    @property
    def current(self) -> RouteTable:
        return self.tables[-1] if self.tables else RouteTable(generation=0)


class FakeClock:
    """Deterministic clock advancing a fixed step per reading."""

    def __init__(self, start=datetime(2024, 1, 1, 12, 0, 0), step_ms=250):
        self.now = start
        self.step = timedelta(milliseconds=step_ms)

    def __call__(self) -> datetime:
        current = self.now
        self.now = current + self.step
        return current

    def advance_to(self, when: datetime) -> None:
        self.now = when


def make_spec(owner="alice", tenant="asu", image="stub-desktop:1",
              ssh=False, aux=False, cpu=2.0, mem=2 * GIB):
    return SessionSpec(
        owner=owner,
        tenant=tenant,
        image=image,
        limits=ResourceLimits(cpu_cores=cpu, memory_bytes=mem),
        stream_ssh=ssh,
        aux_bridge=aux,
    )


def make_command(kind, issued_by="alice", sid=None, spec=None, domain=None):
    return Command(
        kind=CommandKind(kind),
        issued_by=issued_by,
        spec=spec,
        session_id=SessionId(sid) if sid is not None else None,
        domain=domain,
    )


@pytest.fixture
def fake_engine():
    return FakeEngine()


@pytest.fixture
def publisher():
    return FakePublisher()


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def controller_factory(tmp_path):
    """Build controllers sharing a journal directory; engine injectable."""

    counter = {"n": 0}

    def build(engine=None, publisher=None, clock=None, journal_name=None, **kw):
        counter["n"] += 1
        return Controller(
            engine=engine if engine is not None else FakeEngine(),
            allocator=PortAllocator(AllocatorConfig()),
            publisher=publisher if publisher is not None else FakePublisher(),
            journal_path=tmp_path / (journal_name or f"journal-{counter['n']}.bin"),
            clock=clock if clock is not None else FakeClock(),
            snapshot_policy=kw.pop("snapshot_policy", SnapshotPolicy()),
            **kw,
        )

    return build


@pytest.fixture
def controller(controller_factory, fake_engine, publisher, clock):
    return controller_factory(engine=fake_engine, publisher=publisher, clock=clock)
