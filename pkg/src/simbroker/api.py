"""HTTP control API: authentication, tenancy, command dispatch, read models.

Handlers are synchronous and run in the framework's thread pool; every
mutation funnels into the lifecycle controller's single-writer lock, reads
serve snapshots.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Response
from pydantic import BaseModel, Field

from .allocator import PortAllocator
from .auth import Principal, Role, TenantRegistry, TokenStore, Unauthorized
from .config import BrokerConfig, HostEntry, default_config
from .engine import DockerHttpEngine, FakeEngine
from .lifecycle import (
    AllocatorExhausted,
    Command,
    CommandKind,
    Controller,
    SessionExists,
    UnknownSession,
)
from .placement import (
    HostDescriptor,
    MissingRttEntry,
    NoGpuHost,
    UnitKind,
    WorkloadUnit,
    latency_note,
    plan,
)
from .sessions import (
    IllegalTransition,
    ResourceLimits,
    Session,
    SessionId,
    SessionSpec,
    SessionState,
    validate_spec,
)

__all__ = ["Broker", "build_broker", "build_app"]

_RUN_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def _role_names(roles) -> str:
    return "{" + ", ".join(r.value for r in roles) + "}"
_LIVE_STATES = (SessionState.RUNNING, SessionState.SUSPENDED)


@dataclass
class Broker:
    """Everything the API layer needs, wired together."""

    config: BrokerConfig
    controller: Controller
    tokens: TokenStore
    tenants: TenantRegistry
    hosts: tuple[HostEntry, ...]
    reports_dir: Path


def build_broker(
    config: BrokerConfig | None = None,
    engine=None,
    publisher=None,
    clock=None,
    journal_path=None,
) -> Broker:
    config = config or default_config()
    if engine is None:
        if config.engine_kind == "docker":
            engine = DockerHttpEngine(config.engine_endpoint, config.engine_api_version)
        else:
            engine = FakeEngine(
                images=set(config.stub_images),
                hosts={h.descriptor.id for h in config.hosts} or {"host0"},
            )
    if publisher is None:
        publisher = _NullPublisher()
    controller = Controller(
        engine=engine,
        allocator=PortAllocator(config.allocator),
        publisher=publisher,
        journal_path=journal_path or config.journal_path,
        clock=clock or datetime.now,
        snapshot_policy=config.snapshot,
        default_host=config.hosts[0].descriptor.id if config.hosts else "host0",
        network=config.network,
        host_addresses={h.descriptor.id: h.address for h in config.hosts},
    )
    tokens = TokenStore(clock=clock or datetime.now)
    for seeded in config.tokens:
        tokens.add(seeded.token, seeded.principal, seeded.expires_at)
    return Broker(
        config=config,
        controller=controller,
        tokens=tokens,
        tenants=TenantRegistry(list(config.tenants)),
        hosts=config.hosts,
        reports_dir=Path(config.reports_dir),
    )


class _NullPublisher:
    def publish_routes(self, table) -> None:
        pass


# -- wire models --------------------------------------------------------------


class SessionCreateRequest(BaseModel):
    image: Optional[str] = None
    cpu_cores: Optional[float] = Field(default=None, gt=0)
    memory_bytes: Optional[int] = Field(default=None, gt=0)
    gpu_required: bool = False
    stream_ssh: bool = False
    aux_bridge: bool = False


class SessionView(BaseModel):
    id: int
    owner: str
    tenant: str
    state: str
    url: Optional[str]
    hostname: Optional[str]
    web_port: Optional[int]
    ssh_port: Optional[int]
    aux_port: Optional[int]
    image: str
    created_at: datetime
    updated_at: datetime


class HostView(BaseModel):
    id: str
    cpu_capacity: float
    mem_capacity: int
    has_gpu: bool
    overlay: str
    address: str


class PlanHostIn(BaseModel):
    id: str
    cpu_capacity: float = Field(gt=0)
    mem_capacity: int = Field(gt=0)
    has_gpu: bool = False
    overlay: str = "simnet"


class PlanRequest(BaseModel):
    vehicles: int = Field(ge=0)
    hosts: Optional[list[PlanHostIn]] = None
    renderer_cpu: float = Field(default=4.0, gt=0)
    renderer_memory_bytes: int = Field(default=8 * 1024**3, gt=0)
    vehicle_cpu: float = Field(default=2.0, gt=0)
    vehicle_memory_bytes: int = Field(default=2 * 1024**3, gt=0)
    rtt_ms: Optional[dict[str, float]] = None  # "hostA:hostB" -> milliseconds
    latency_threshold_ms: float = 10.0


class PlanResponse(BaseModel):
    feasible: bool
    assignment: dict[str, str]
    est_cross_host_pairs: int
    max_load_fraction: float
    advisory: Optional[str] = None


def _session_view(session: Session, include_url: bool = True) -> SessionView:
    binding = session.binding
    routed = session.state in _LIVE_STATES
    return SessionView(
        id=session.id.value,
        owner=session.spec.owner,
        tenant=session.spec.tenant,
        state=session.state.value,
        url=f"https://{binding.hostname}/" if binding and routed and include_url else None,
        hostname=binding.hostname if binding else None,
        web_port=binding.web_host_port if binding else None,
        ssh_port=binding.ssh_stream_port if binding else None,
        aux_port=binding.aux_bridge_port if binding else None,
        image=session.spec.image,
        created_at=session.created_at,
        updated_at=session.updated_at,
    )


# -- app ----------------------------------------------------------------------


def build_app(broker: Broker) -> FastAPI:
    app = FastAPI(title="simbroker", version="0.1.0")
    controller = broker.controller

    def current_principal(authorization: Optional[str] = Header(default=None)) -> Principal:
        if not authorization or not authorization.lower().startswith("bearer "):
            raise HTTPException(401, "missing bearer token")
        try:
            return broker.tokens.authenticate(authorization.split(" ", 1)[1])
        except Unauthorized as exc:
            raise HTTPException(401, str(exc)) from exc

    def require_role(principal: Principal, *roles: Role) -> None:
        if principal.role not in roles:
            raise HTTPException(403, f"requires role in {_role_names(roles)}")

    def visible(principal: Principal, session: Session) -> bool:
        if principal.role is Role.ADMIN:
            return True
        if session.spec.tenant != principal.tenant:
            return False
        if principal.role is Role.INSTRUCTOR:
            return True
        return session.spec.owner == principal.subject

    def fetch_operable(principal: Principal, sid: int) -> Session:
        session = controller.get(SessionId(sid))
        if session is None or session.state is SessionState.DESTROYED:
            raise HTTPException(404, "no such session")
        if principal.role is not Role.ADMIN and session.spec.tenant != principal.tenant:
            raise HTTPException(404, "no such session")  # cross-tenant: hide existence
        if not visible(principal, session):
            raise HTTPException(403, "not your session")
        return session

    def dispatch(cmd: Command) -> Session:
        try:
            return controller.apply_command(cmd)
        except IllegalTransition as exc:
            raise HTTPException(409, str(exc)) from exc
        except AllocatorExhausted as exc:
            raise HTTPException(503, str(exc)) from exc
        except SessionExists as exc:
            raise HTTPException(409, str(exc)) from exc
        except UnknownSession as exc:
            raise HTTPException(404, str(exc)) from exc

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/api/whoami")
    def whoami(principal: Principal = Depends(current_principal)):
        return {
            "subject": principal.subject,
            "tenant": principal.tenant,
            "role": principal.role.value,
        }

    @app.post("/api/sessions", response_model=SessionView, status_code=201)
    def create_session(
        body: SessionCreateRequest, principal: Principal = Depends(current_principal)
    ):
        tenant = broker.tenants.get(principal.tenant)
        spec = SessionSpec(
            owner=principal.subject,
            tenant=tenant.id,
            image=body.image or broker.config.default_image,
            limits=ResourceLimits(
                cpu_cores=body.cpu_cores or broker.config.default_cpu,
                memory_bytes=body.memory_bytes or broker.config.default_memory,
                gpu_required=body.gpu_required,
            ),
            stream_ssh=body.stream_ssh,
            aux_bridge=body.aux_bridge,
        )
        violations = validate_spec(spec, tenant.quota)
        if violations:
            raise HTTPException(422, {"violations": violations})
        if principal.role is Role.STUDENT:
            owned = sum(
                1
                for s in controller.sessions()
                if s.spec.owner == principal.subject
                and s.spec.tenant == tenant.id
                and s.state is not SessionState.DESTROYED
            )
            if owned >= tenant.max_sessions_per_user:
                raise HTTPException(
                    429, f"per-user session cap ({tenant.max_sessions_per_user}) reached"
                )
        session = dispatch(
            Command(
                kind=CommandKind.CREATE,
                issued_by=principal.subject,
                spec=spec,
                domain=tenant.domain,
            )
        )
        return _session_view(session)

    @app.get("/api/sessions", response_model=list[SessionView])
    def list_sessions(principal: Principal = Depends(current_principal)):
        return [
            _session_view(s)
            for s in controller.sessions()
            if s.state is not SessionState.DESTROYED and visible(principal, s)
        ]

    @app.get("/api/sessions/{sid}", response_model=SessionView)
    def get_session(sid: int, principal: Principal = Depends(current_principal)):
        return _session_view(fetch_operable(principal, sid))

    def _operate(kind: CommandKind, sid: int, principal: Principal) -> SessionView:
        fetch_operable(principal, sid)
        session = dispatch(
            Command(kind=kind, issued_by=principal.subject, session_id=SessionId(sid))
        )
        return _session_view(session)

    @app.post("/api/sessions/{sid}/suspend", response_model=SessionView)
    def suspend(sid: int, principal: Principal = Depends(current_principal)):
        return _operate(CommandKind.SUSPEND, sid, principal)

    @app.post("/api/sessions/{sid}/resume", response_model=SessionView)
    def resume(sid: int, principal: Principal = Depends(current_principal)):
        return _operate(CommandKind.RESUME, sid, principal)

    @app.post("/api/sessions/{sid}/stop", response_model=SessionView)
    def stop(sid: int, principal: Principal = Depends(current_principal)):
        return _operate(CommandKind.STOP, sid, principal)

    @app.post("/api/sessions/{sid}/start", response_model=SessionView)
    def start(sid: int, principal: Principal = Depends(current_principal)):
        return _operate(CommandKind.START, sid, principal)

    @app.delete("/api/sessions/{sid}", response_model=SessionView)
    def destroy(sid: int, principal: Principal = Depends(current_principal)):
        return _operate(CommandKind.DESTROY, sid, principal)

    @app.get("/api/hosts", response_model=list[HostView])
    def list_hosts(principal: Principal = Depends(current_principal)):
        require_role(principal, Role.INSTRUCTOR, Role.ADMIN)
        return [
            HostView(
                id=h.descriptor.id,
                cpu_capacity=h.descriptor.cpu_capacity,
                mem_capacity=h.descriptor.mem_capacity,
                has_gpu=h.descriptor.has_gpu,
                overlay=h.descriptor.overlay,
                address=h.address,
            )
            for h in broker.hosts
        ]

    @app.post("/api/plan", response_model=PlanResponse)
    def plan_dry_run(body: PlanRequest, principal: Principal = Depends(current_principal)):
        require_role(principal, Role.INSTRUCTOR, Role.ADMIN)
        if body.hosts:
            hosts = [
                HostDescriptor(
                    id=h.id,
                    cpu_capacity=h.cpu_capacity,
                    mem_capacity=h.mem_capacity,
                    has_gpu=h.has_gpu,
                    overlay=h.overlay,
                )
                for h in body.hosts
            ]
        else:
            hosts = [h.descriptor for h in broker.hosts]
        units = [WorkloadUnit(UnitKind.RENDERER, body.renderer_cpu, body.renderer_memory_bytes)]
        units += [
            WorkloadUnit(
                UnitKind.VEHICLE_SITL, body.vehicle_cpu, body.vehicle_memory_bytes, vehicle_index=i
            )
            for i in range(body.vehicles)
        ]
        try:
            result = plan(hosts, units)
        except (NoGpuHost, ValueError) as exc:
            raise HTTPException(422, str(exc)) from exc
        advisory = None
        if result.feasible and body.rtt_ms is not None:
            matrix = {}
            for pair, ms in body.rtt_ms.items():
                a, _, b = pair.partition(":")
                matrix[(a, b)] = float(ms)
            try:
                advisory = latency_note(result, matrix, body.latency_threshold_ms)
            except MissingRttEntry as exc:
                raise HTTPException(422, str(exc)) from exc
        labels = {
            unit: "renderer" if unit.kind is UnitKind.RENDERER else f"vehicle-{unit.vehicle_index}"
            for unit in units
        }
        return PlanResponse(
            feasible=result.feasible,
            assignment={labels[u]: h for u, h in result.assignment.items()},
            est_cross_host_pairs=result.est_cross_host_pairs,
            max_load_fraction=result.max_load_fraction,
            advisory=advisory,
        )

    @app.get("/api/reports/{run_id}")
    def get_report(run_id: str, principal: Principal = Depends(current_principal)):
        require_role(principal, Role.INSTRUCTOR, Role.ADMIN)
        if not _RUN_ID_RE.match(run_id):
            raise HTTPException(404, "no such report")
        path = broker.reports_dir / f"{run_id}.json"
        if not path.is_file():
            raise HTTPException(404, "no such report")
        # stored report returned verbatim
        return Response(content=path.read_text(), media_type="application/json")

    return app
