"""Container-engine client: a deterministic in-memory fake for tests plus an
HTTP client speaking Docker-Engine-API-compatible endpoints.

Both implement the same operation surface. The engine status machine exposed
here is deliberately smaller than a real engine's: only the transitions the
control plane needs, so it can be tested exhaustively.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import httpx

from .sessions import valid_image_reference

__all__ = [
    "EngineStatus",
    "ContainerRef",
    "ContainerConfig",
    "EngineError",
    "ImageNotFound",
    "PortConflict",
    "EngineUnavailable",
    "NotFound",
    "InvalidAction",
    "TagInvalid",
    "FakeEngine",
    "DockerHttpEngine",
]


class EngineStatus(Enum):
    CREATED = "Created"
    RUNNING = "Running"
    PAUSED = "Paused"
    EXITED = "Exited"


ACTIONS = ("start", "pause", "unpause", "stop", "remove")

# The engine's own machine. `remove` has no successor status (container is gone).
# `start` from Exited is required by the control plane's Stop -> Start path.
_ACTION_TRANSITIONS: dict[tuple[str, EngineStatus], Optional[EngineStatus]] = {
    ("start", EngineStatus.CREATED): EngineStatus.RUNNING,
    ("start", EngineStatus.EXITED): EngineStatus.RUNNING,
    ("pause", EngineStatus.RUNNING): EngineStatus.PAUSED,
    ("unpause", EngineStatus.PAUSED): EngineStatus.RUNNING,
    ("stop", EngineStatus.RUNNING): EngineStatus.EXITED,
    ("remove", EngineStatus.CREATED): None,
    ("remove", EngineStatus.EXITED): None,
}


class EngineError(Exception):
    pass


class ImageNotFound(EngineError):
    pass


class PortConflict(EngineError):
    def __init__(self, host_port: int):
        self.host_port = host_port
        super().__init__(f"host port {host_port} already mapped")


class EngineUnavailable(EngineError):
    pass


class NotFound(EngineError):
    pass


class InvalidAction(EngineError):
    def __init__(self, status: EngineStatus, action: str):
        self.status = status
        self.action = action
        super().__init__(f"cannot {action} a {status.value} container")


class TagInvalid(EngineError):
    pass


@dataclass(frozen=True)
class ContainerRef:
    id: str
    host: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("container id must be non-empty")


@dataclass(frozen=True)
class ContainerConfig:
    image: str
    memory_limit: int
    cpu_quota: float
    port_mappings: tuple[tuple[int, int], ...] = ()  # (container_port, host_port)
    network: str = "bridge"
    privileged: bool = False

    def __post_init__(self) -> None:
        if self.privileged:
            raise ValueError("privileged containers are never allowed")
        host_ports = [hp for _, hp in self.port_mappings]
        if len(host_ports) != len(set(host_ports)):
            raise ValueError("host ports in port_mappings must be distinct")


@dataclass
class _FakeContainer:
    ref: ContainerRef
    config: ContainerConfig
    status: EngineStatus


class FakeEngine:
    """Deterministic in-memory engine.

    Records every call (operation name, arguments) append-only so tests can
    compare call sequences against a reference interpreter. ``snapshot`` /
    ``restore`` exist so crash-recovery tests can rewind engine state to an
    earlier point.
    """

    def __init__(self, images: set[str] | None = None, hosts: set[str] | None = None):
        self._images = set(images) if images is not None else {"stub-desktop:1"}
        self._hosts = set(hosts) if hosts is not None else {"host0"}
        self._containers: dict[str, _FakeContainer] = {}
        self._next_id = 1
        self._calls: list[tuple[str, dict]] = []
        self._lock = threading.RLock()

    @property
    def calls(self) -> list[tuple[str, dict]]:
        with self._lock:
            return list(self._calls)

    def _record(self, op: str, **args) -> None:
        self._calls.append((op, args))

    def add_host(self, host: str) -> None:
        with self._lock:
            self._hosts.add(host)

    def create_container(self, cfg: ContainerConfig, host: str) -> ContainerRef:
        with self._lock:
            self._record("create", image=cfg.image, host=host)
            if host not in self._hosts:
                raise EngineUnavailable(f"unknown host {host!r}")
            if cfg.image not in self._images:
                raise ImageNotFound(cfg.image)
            used = {
                hp
                for c in self._containers.values()
                if c.ref.host == host
                for _, hp in c.config.port_mappings
            }
            for _, hp in cfg.port_mappings:
                if hp in used:
                    raise PortConflict(hp)
            ref = ContainerRef(id=f"c{self._next_id:08d}", host=host)
            self._next_id += 1
            self._containers[ref.id] = _FakeContainer(ref, cfg, EngineStatus.CREATED)
            return ref

    def lifecycle_action(self, ref: ContainerRef, action: str) -> Optional[EngineStatus]:
        with self._lock:
            self._record(action, container=ref.id)
            cont = self._containers.get(ref.id)
            if cont is None:
                raise NotFound(ref.id)
            try:
                nxt = _ACTION_TRANSITIONS[(action, cont.status)]
            except KeyError:
                raise InvalidAction(cont.status, action) from None
            if nxt is None:
                del self._containers[ref.id]
                return None
            cont.status = nxt
            return nxt

    def commit_image(self, ref: ContainerRef, tag: str) -> str:
        with self._lock:
            self._record("commit", container=ref.id, tag=tag)
            cont = self._containers.get(ref.id)
            if cont is None:
                raise NotFound(ref.id)
            if not valid_image_reference(tag):
                raise TagInvalid(tag)
            if cont.status not in (EngineStatus.RUNNING, EngineStatus.PAUSED, EngineStatus.EXITED):
                raise InvalidAction(cont.status, "commit")
            self._images.add(tag)
            return tag

    def inspect(self, ref: ContainerRef) -> tuple[ContainerConfig, EngineStatus]:
        with self._lock:
            cont = self._containers.get(ref.id)
            if cont is None:
                raise NotFound(ref.id)
            return cont.config, cont.status

    def list_images(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(t for t in self._images if t.startswith(prefix))

    def remove_image(self, tag: str) -> None:
        with self._lock:
            self._record("remove_image", tag=tag)
            if tag not in self._images:
                raise NotFound(tag)
            self._images.discard(tag)

    def list_containers(self) -> list[tuple[ContainerRef, EngineStatus]]:
        with self._lock:
            return [(c.ref, c.status) for c in self._containers.values()]

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "images": set(self._images),
                "containers": {
                    cid: _FakeContainer(c.ref, c.config, c.status)
                    for cid, c in self._containers.items()
                },
                "next_id": self._next_id,
                "calls": list(self._calls),
            }

    def restore(self, snap: dict) -> None:
        with self._lock:
            self._images = set(snap["images"])
            self._containers = {
                cid: _FakeContainer(c.ref, c.config, c.status)
                for cid, c in snap["containers"].items()
            }
            self._next_id = snap["next_id"]
            self._calls = list(snap["calls"])


def _port_bindings(cfg: ContainerConfig) -> dict:
    return {
        f"{cport}/tcp": [{"HostPort": str(hport)}]
        for cport, hport in cfg.port_mappings
    }


_STATUS_FROM_DOCKER = {
    "created": EngineStatus.CREATED,
    "running": EngineStatus.RUNNING,
    "paused": EngineStatus.PAUSED,
    "exited": EngineStatus.EXITED,
}


class DockerHttpEngine:
    """Client for a Docker-Engine-API-compatible HTTP backend.

    ``endpoint`` is either ``unix:///path/to/socket`` or an ``http(s)://`` /
    ``tcp://`` URL. Transport failures are retried with bounded exponential
    backoff (3 attempts, 100 ms base, x2) before surfacing EngineUnavailable.
    Per-container operations are serialized by container id.
    """

    def __init__(
        self,
        endpoint: str,
        api_version: str = "v1.41",
        host_id: str = "host0",
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._prefix = f"/{api_version.strip('/')}"
        self._host_id = host_id
        self._sleep = sleep
        if transport is not None:
            self._client = httpx.Client(transport=transport, base_url="http://engine")
        elif endpoint.startswith("unix://"):
            self._client = httpx.Client(
                transport=httpx.HTTPTransport(uds=endpoint[len("unix://"):]),
                base_url="http://engine",
            )
        else:
            base = endpoint.replace("tcp://", "http://", 1)
            self._client = httpx.Client(base_url=base)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def _container_lock(self, cid: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(cid, threading.Lock())

    def _request(self, method: str, path: str, **kw) -> httpx.Response:
        delay = 0.1
        for attempt in range(3):
            try:
                return self._client.request(method, self._prefix + path, **kw)
            except httpx.TransportError as exc:
                if attempt == 2:
                    raise EngineUnavailable(str(exc)) from exc
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    def create_container(self, cfg: ContainerConfig, host: str) -> ContainerRef:
        body = {
            "Image": cfg.image,
            "HostConfig": {
                "Memory": cfg.memory_limit,
                "NanoCpus": int(cfg.cpu_quota * 1e9),
                "PortBindings": _port_bindings(cfg),
                "NetworkMode": cfg.network,
                "Privileged": False,
            },
        }
        resp = self._request("POST", "/containers/create", json=body)
        if resp.status_code == 404:
            raise ImageNotFound(cfg.image)
        if resp.status_code == 409 or (
            resp.status_code >= 500 and b"port is already allocated" in resp.content
        ):
            raise PortConflict(_first_host_port(cfg))
        resp.raise_for_status()
        return ContainerRef(id=resp.json()["Id"], host=host)

    def lifecycle_action(self, ref: ContainerRef, action: str) -> Optional[EngineStatus]:
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        with self._container_lock(ref.id):
            if action == "remove":
                resp = self._request("DELETE", f"/containers/{ref.id}")
            else:
                resp = self._request("POST", f"/containers/{ref.id}/{action}")
            if resp.status_code == 404:
                raise NotFound(ref.id)
            if resp.status_code == 409:
                _, status = self.inspect(ref)
                raise InvalidAction(status, action)
            resp.raise_for_status()
            if action == "remove":
                return None
            _, status = self.inspect(ref)
            return status

    def commit_image(self, ref: ContainerRef, tag: str) -> str:
        if not valid_image_reference(tag):
            raise TagInvalid(tag)
        repo, _, version = tag.rpartition(":")
        with self._container_lock(ref.id):
            resp = self._request(
                "POST", "/commit", params={"container": ref.id, "repo": repo, "tag": version}
            )
            if resp.status_code == 404:
                raise NotFound(ref.id)
            resp.raise_for_status()
            return tag

    def inspect(self, ref: ContainerRef) -> tuple[ContainerConfig, EngineStatus]:
        resp = self._request("GET", f"/containers/{ref.id}/json")
        if resp.status_code == 404:
            raise NotFound(ref.id)
        resp.raise_for_status()
        data = resp.json()
        host_cfg = data.get("HostConfig", {})
        mappings = []
        for key, binds in (host_cfg.get("PortBindings") or {}).items():
            cport = int(key.split("/")[0])
            for b in binds or []:
                mappings.append((cport, int(b["HostPort"])))
        cfg = ContainerConfig(
            image=data.get("Config", {}).get("Image", ""),
            memory_limit=host_cfg.get("Memory", 0) or 1,
            cpu_quota=(host_cfg.get("NanoCpus", 0) or 1e9) / 1e9,
            port_mappings=tuple(sorted(mappings)),
            network=host_cfg.get("NetworkMode", "bridge"),
        )
        raw = data.get("State", {}).get("Status", "")
        try:
            status = _STATUS_FROM_DOCKER[raw]
        except KeyError:
            raise EngineError(f"unexpected engine status {raw!r}") from None
        return cfg, status

    def list_images(self, prefix: str = "") -> list[str]:
        resp = self._request("GET", "/images/json")
        resp.raise_for_status()
        tags = [t for img in resp.json() for t in (img.get("RepoTags") or [])]
        return sorted(t for t in tags if t.startswith(prefix))

    def remove_image(self, tag: str) -> None:
        resp = self._request("DELETE", f"/images/{tag}")
        if resp.status_code == 404:
            raise NotFound(tag)
        resp.raise_for_status()

    def list_containers(self) -> list[tuple[ContainerRef, EngineStatus]]:
        resp = self._request("GET", "/containers/json", params={"all": "1"})
        resp.raise_for_status()
        out = []
        for item in resp.json():
            status = _STATUS_FROM_DOCKER.get(item.get("State", ""), EngineStatus.EXITED)
            out.append((ContainerRef(id=item["Id"], host=self._host_id), status))
        return out


def _first_host_port(cfg: ContainerConfig) -> int:
    return cfg.port_mappings[0][1] if cfg.port_mappings else 0
