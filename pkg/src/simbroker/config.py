"""Service configuration: YAML file with sections for the allocator, gateway,
engine endpoint, hosts, tenants, and snapshot policy."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, time as dtime
from pathlib import Path
from typing import Optional

import yaml

from .allocator import AllocatorConfig
from .auth import Principal, Role, TenantConfig
from .gateway import TlsMaterial
from .lifecycle import SnapshotPolicy
from .placement import HostDescriptor
from .sessions import ResourceLimits

__all__ = ["HostEntry", "SeededToken", "BrokerConfig", "load_config", "default_config"]

GIB = 1024**3


@dataclass(frozen=True)
class HostEntry:
    descriptor: HostDescriptor
    address: str = "127.0.0.1"


@dataclass(frozen=True)
class SeededToken:
    token: str
    principal: Principal
    expires_at: Optional[datetime] = None


@dataclass(frozen=True)
class BrokerConfig:
    allocator: AllocatorConfig = AllocatorConfig()
    gateway_host: str = "127.0.0.1"
    gateway_port: int = 8080
    tls: Optional[TlsMaterial] = None
    engine_kind: str = "fake"  # fake | docker
    engine_endpoint: str = "unix:///var/run/docker.sock"
    engine_api_version: str = "v1.41"
    hosts: tuple[HostEntry, ...] = ()
    tenants: tuple[TenantConfig, ...] = ()
    tokens: tuple[SeededToken, ...] = ()
    snapshot: SnapshotPolicy = SnapshotPolicy()
    journal_path: str = "var/journal.bin"
    reports_dir: str = "var/reports"
    api_host: str = "127.0.0.1"
    api_port: int = 8000
    default_image: str = "stub-desktop:1"
    default_cpu: float = 2.0
    default_memory: int = 2 * GIB
    network: str = "simnet"
    stub_images: tuple[str, ...] = ("stub-desktop:1",)

    def default_limits(self) -> ResourceLimits:
        return ResourceLimits(cpu_cores=self.default_cpu, memory_bytes=self.default_memory)


def _parse_limits(doc: dict) -> ResourceLimits:
    return ResourceLimits(
        cpu_cores=float(doc.get("cpu_cores", 2.0)),
        memory_bytes=int(doc.get("memory_bytes", 2 * GIB)),
        gpu_required=bool(doc.get("gpu_required", False)),
    )


def _parse_time(text: str) -> dtime:
    hour, _, minute = str(text).partition(":")
    return dtime(int(hour), int(minute or 0))


def load_config(path: str | Path) -> BrokerConfig:
    doc = yaml.safe_load(Path(path).read_text()) or {}

    alloc_doc = doc.get("allocator", {})
    allocator = AllocatorConfig(
        domain=alloc_doc.get("domain", "openuas.us"),
        web_base=int(alloc_doc.get("web_base", 4000)),
        max_sessions=int(alloc_doc.get("max_sessions", 99)),
        stream_range=tuple(alloc_doc.get("stream_range", (2200, 2299))),
        aux_base=int(alloc_doc.get("aux_base", 9000)),
    )

    gw_doc = doc.get("gateway", {})
    tls = None
    if "tls" in gw_doc:
        tls = TlsMaterial(cert_path=gw_doc["tls"]["cert"], key_path=gw_doc["tls"]["key"])

    engine_doc = doc.get("engine", {})

    hosts = []
    for h in doc.get("hosts", []):
        hosts.append(
            HostEntry(
                descriptor=HostDescriptor(
                    id=h["id"],
                    cpu_capacity=float(h.get("cpu", 8)),
                    mem_capacity=int(h.get("memory_bytes", 32 * GIB)),
                    has_gpu=bool(h.get("gpu", False)),
                    overlay=h.get("overlay", "simnet"),
                ),
                address=h.get("address", "127.0.0.1"),
            )
        )

    tenants = []
    tokens = []
    for t in doc.get("tenants", []):
        tenant = TenantConfig(
            id=t["id"],
            domain=t.get("domain", allocator.domain),
            quota=_parse_limits(t.get("quota", {})),
            max_sessions_per_user=int(t.get("max_sessions_per_user", 1)),
        )
        tenants.append(tenant)
        for tok in t.get("tokens", []):
            expires = tok.get("expires")
            tokens.append(
                SeededToken(
                    token=tok["token"],
                    principal=Principal(
                        subject=tok["subject"],
                        tenant=tenant.id,
                        role=Role(tok.get("role", "student")),
                    ),
                    expires_at=datetime.fromisoformat(expires) if expires else None,
                )
            )

    snap_doc = doc.get("snapshot", {})
    snapshot = SnapshotPolicy(
        schedule=_parse_time(snap_doc.get("schedule", "02:00")),
        retention=int(snap_doc.get("retention", 7)),
        tag_pattern=snap_doc.get("tag_pattern", "backup/sess-{id}:{date}"),
    )

    api_doc = doc.get("api", {})
    defaults = doc.get("defaults", {})
    return BrokerConfig(
        allocator=allocator,
        gateway_host=gw_doc.get("host", "127.0.0.1"),
        gateway_port=int(gw_doc.get("port", 8080)),
        tls=tls,
        engine_kind=engine_doc.get("kind", "fake"),
        engine_endpoint=engine_doc.get("endpoint", "unix:///var/run/docker.sock"),
        engine_api_version=engine_doc.get("api_version", "v1.41"),
        hosts=tuple(hosts),
        tenants=tuple(tenants),
        tokens=tuple(tokens),
        snapshot=snapshot,
        journal_path=doc.get("journal", "var/journal.bin"),
        reports_dir=doc.get("reports_dir", "var/reports"),
        api_host=api_doc.get("host", "127.0.0.1"),
        api_port=int(api_doc.get("port", 8000)),
        default_image=defaults.get("image", "stub-desktop:1"),
        default_cpu=float(defaults.get("cpu_cores", 2.0)),
        default_memory=int(defaults.get("memory_bytes", 2 * GIB)),
        network=doc.get("network", "simnet"),
        stub_images=tuple(doc.get("stub_images", ["stub-desktop:1"])),
    )


def default_config() -> BrokerConfig:
    """In-memory config with one tenant and one GPU host; used by tests/demos."""
    return BrokerConfig(
        hosts=(
            HostEntry(
                HostDescriptor(id="host0", cpu_capacity=64, mem_capacity=256 * GIB, has_gpu=True)
            ),
        ),
        tenants=(
            TenantConfig(
                id="asu",
                domain="openuas.us",
                quota=ResourceLimits(cpu_cores=8, memory_bytes=16 * GIB),
                max_sessions_per_user=1,
            ),
        ),
    )
