"""Test-side reference models: an independent interpreter predicting the
engine call sequence for any legal command sequence, and a legal-command
generator for randomized runs."""

from __future__ import annotations

import random

# session state machine, restated independently of the implementation
_NEXT = {
    ("Running", "Suspend"): "Suspended",
    ("Suspended", "Resume"): "Running",
    ("Running", "Stop"): "Stopped",
    ("Stopped", "Start"): "Running",
}
_DESTROYABLE = {"Running", "Suspended", "Stopped", "Failed"}

# expected engine calls per command, given the session's current state
_ENGINE_CALLS = {
    "Suspend": ("pause",),
    "Resume": ("unpause",),
    "Stop": ("stop",),
    "Start": ("start",),
}
_TEARDOWN = {
    "Running": ("stop", "remove"),
    "Suspended": ("unpause", "stop", "remove"),
    "Stopped": ("remove",),
}


class ReferenceInterpreter:
    """Predicts the fake engine's call record for a legal command sequence.

    Container ids mirror the fake engine's deterministic c%08d scheme.
    """

    def __init__(self, image: str = "stub-desktop:1", host: str = "host0"):
        self.image = image
        self.host = host
        self.sessions: dict[int, dict] = {}  # id -> {state, container}
        self.expected_calls: list[tuple[str, dict]] = []
        self._next_container = 1

    def lowest_unused_id(self, limit: int = 99) -> int:
        for value in range(1, limit + 1):
            if value not in self.sessions:
                return value
        raise RuntimeError("exhausted")

    def legal_commands(self) -> list[tuple[str, int]]:
        commands: list[tuple[str, int]] = []
        if len(self.sessions) < 99:
            commands.append(("Create", 0))
        for sid, info in self.sessions.items():
            for kind in ("Suspend", "Resume", "Stop", "Start"):
                if (info["state"], kind) in _NEXT:
                    commands.append((kind, sid))
            if info["state"] in _DESTROYABLE:
                commands.append(("Destroy", sid))
        return sorted(commands)

    def apply(self, kind: str, sid: int = 0) -> int:
        """Record the expected engine calls; returns the session id used."""
        if kind == "Create":
            sid = self.lowest_unused_id()
            cid = f"c{self._next_container:08d}"
            self._next_container += 1
            self.expected_calls.append(("create", {"image": self.image, "host": self.host}))
            self.expected_calls.append(("start", {"container": cid}))
            self.sessions[sid] = {"state": "Running", "container": cid}
            return sid
        info = self.sessions[sid]
        if kind == "Destroy":
            for action in _TEARDOWN[info["state"]]:
                self.expected_calls.append((action, {"container": info["container"]}))
            info["state"] = "Destroyed"
            return sid
        info["state"] = _NEXT[(info["state"], kind)]
        for action in _ENGINE_CALLS[kind]:
            self.expected_calls.append((action, {"container": info["container"]}))
        return sid


def random_legal_sequence(rng: random.Random, length: int) -> list[tuple[str, int]]:
    """A sequence of (kind, session_id) legal at each step."""
    ref = ReferenceInterpreter()
    sequence = []
    for _ in range(length):
        options = ref.legal_commands()
        if not options:
            break
        kind, sid = rng.choice(options)
        sid = ref.apply(kind, sid)
        sequence.append((kind, sid))
    return sequence
