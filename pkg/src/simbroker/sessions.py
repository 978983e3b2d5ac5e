"""Session domain types and the lifecycle state machine.

Everything here is an immutable value; mutation of the live session table
happens only in the lifecycle controller (single writer). ``transition`` is
a pure function over the declared transition graph, so it is safe to call
from any number of concurrent contexts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Optional

__all__ = [
    "SessionId",
    "ResourceLimits",
    "SessionSpec",
    "SessionState",
    "LifecycleEvent",
    "Session",
    "IllegalTransition",
    "transition",
    "validate_spec",
    "valid_image_reference",
]

# name[:tag] — one path-ish name component chain, optional tag
_IMAGE_RE = re.compile(r"^[a-z0-9][a-zA-Z0-9._/-]*(:[A-Za-z0-9._-]+)?$")


def valid_image_reference(image: str) -> bool:
    return bool(image) and _IMAGE_RE.match(image) is not None


@dataclass(frozen=True, order=True)
class SessionId:
    """Whole-number simulation ID, unique among non-destroyed sessions."""

    value: int

    def __post_init__(self) -> None:
        if self.value < 1:
            raise ValueError(f"session id must be >= 1, got {self.value}")


@dataclass(frozen=True)
class ResourceLimits:
    cpu_cores: float
    memory_bytes: int
    gpu_required: bool = False

    def __post_init__(self) -> None:
        if self.cpu_cores <= 0:
            raise ValueError("cpu_cores must be positive")
        if self.memory_bytes <= 0:
            raise ValueError("memory_bytes must be positive")


@dataclass(frozen=True)
class SessionSpec:
    owner: str
    tenant: str
    image: str
    limits: ResourceLimits
    stream_ssh: bool = False
    aux_bridge: bool = False


class SessionState(Enum):
    REQUESTED = "Requested"
    RUNNING = "Running"
    SUSPENDED = "Suspended"
    STOPPED = "Stopped"
    FAILED = "Failed"
    DESTROYED = "Destroyed"


class LifecycleEvent(Enum):
    PROVISIONED = "provisioned"
    SUSPEND = "suspend"
    RESUME = "resume"
    STOP = "stop"
    START = "start"
    DESTROY = "destroy"
    FAIL = "fail"


# The full legal-transition set. Anything absent is illegal; DESTROYED is
# absorbing by construction (no outgoing edges).
_TRANSITIONS: dict[tuple[SessionState, LifecycleEvent], SessionState] = {
    (SessionState.REQUESTED, LifecycleEvent.PROVISIONED): SessionState.RUNNING,
    (SessionState.REQUESTED, LifecycleEvent.FAIL): SessionState.FAILED,
    (SessionState.RUNNING, LifecycleEvent.SUSPEND): SessionState.SUSPENDED,
    (SessionState.SUSPENDED, LifecycleEvent.RESUME): SessionState.RUNNING,
    (SessionState.RUNNING, LifecycleEvent.STOP): SessionState.STOPPED,
    (SessionState.STOPPED, LifecycleEvent.START): SessionState.RUNNING,
    (SessionState.RUNNING, LifecycleEvent.DESTROY): SessionState.DESTROYED,
    (SessionState.SUSPENDED, LifecycleEvent.DESTROY): SessionState.DESTROYED,
    (SessionState.STOPPED, LifecycleEvent.DESTROY): SessionState.DESTROYED,
    (SessionState.FAILED, LifecycleEvent.DESTROY): SessionState.DESTROYED,
    (SessionState.RUNNING, LifecycleEvent.FAIL): SessionState.FAILED,
    (SessionState.SUSPENDED, LifecycleEvent.FAIL): SessionState.FAILED,
}


class IllegalTransition(Exception):
    """Raised when a lifecycle event is not legal in the current state."""

    def __init__(self, state: SessionState, event: LifecycleEvent):
        self.state = state
        self.event = event
        super().__init__(f"illegal transition: {state.value} + {event.value}")


def transition(state: SessionState, event: LifecycleEvent) -> SessionState:
    """Return the successor state for (state, event), or raise IllegalTransition."""
    try:
        return _TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransition(state, event) from None


def legal_events(state: SessionState) -> frozenset[LifecycleEvent]:
    return frozenset(ev for (st, ev) in _TRANSITIONS if st is state)


def validate_spec(spec: SessionSpec, tenant_quota: ResourceLimits) -> list[str]:
    """Check a session spec against a tenant quota.

    Returns the list of violated field names; empty means ok. Violations are
    a return value, not a fault.
    """
    violations = []
    if spec.limits.cpu_cores > tenant_quota.cpu_cores:
        violations.append("cpu_cores")
    if spec.limits.memory_bytes > tenant_quota.memory_bytes:
        violations.append("memory_bytes")
    if spec.limits.gpu_required and not tenant_quota.gpu_required:
        violations.append("gpu_required")
    if not valid_image_reference(spec.image):
        violations.append("image")
    return violations


@dataclass(frozen=True)
class Session:
    """One user-owned simulation container.

    ``container`` and ``binding`` are opaque here (engine ref and allocator
    record); invariants tying them to the state are checked on construction.
    """

    id: SessionId
    spec: SessionSpec
    state: SessionState
    created_at: datetime
    updated_at: datetime
    container: Optional[object] = None
    binding: Optional[object] = field(default=None)

    def __post_init__(self) -> None:
        if self.state in (SessionState.RUNNING, SessionState.SUSPENDED, SessionState.STOPPED):
            if self.container is None or self.binding is None:
                raise ValueError(
                    f"{self.state.value} session requires container and binding"
                )
        if self.state is SessionState.REQUESTED and self.container is not None:
            raise ValueError("Requested session must not have a container")

    def with_state(self, state: SessionState, at: datetime) -> "Session":
        return replace(self, state=state, updated_at=at)
