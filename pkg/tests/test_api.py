"""Control API: auth, tenancy, dispatch, error mapping, read models."""

import json
from datetime import datetime, timedelta

import pytest
from fastapi.testclient import TestClient

from conftest import FakeClock, FakePublisher
from simbroker.api import build_app, build_broker
from simbroker.auth import Principal, Role, TenantConfig
from simbroker.config import BrokerConfig, HostEntry
from simbroker.engine import FakeEngine
from simbroker.harness import ResponseSample, compute_cdf, write_report
from simbroker.placement import HostDescriptor
from simbroker.sessions import ResourceLimits

GIB = 1024**3

TOKENS = {
    "alice": "tok-alice-asu-student",
    "bob": "tok-bob-asu-student",
    "carol": "tok-carol-asu-instructor",
    "dave": "tok-dave-mit-student",
    "root": "tok-root-admin",
    "stale": "tok-expired",
}


def two_tenant_config(tmp_path):
    from simbroker.config import SeededToken

    quota = ResourceLimits(cpu_cores=8, memory_bytes=16 * GIB)
    return BrokerConfig(
        hosts=(
            HostEntry(HostDescriptor(id="host0", cpu_capacity=64, mem_capacity=256 * GIB, has_gpu=True)),
            HostEntry(HostDescriptor(id="host1", cpu_capacity=32, mem_capacity=128 * GIB)),
        ),
        tenants=(
            TenantConfig(id="asu", domain="openuas.us", quota=quota, max_sessions_per_user=1),
            TenantConfig(id="mit", domain="sim.mit.edu", quota=quota, max_sessions_per_user=5),
        ),
        tokens=(
            SeededToken(TOKENS["alice"], Principal("alice", "asu", Role.STUDENT)),
            SeededToken(TOKENS["bob"], Principal("bob", "asu", Role.STUDENT)),
            SeededToken(TOKENS["carol"], Principal("carol", "asu", Role.INSTRUCTOR)),
            SeededToken(TOKENS["dave"], Principal("dave", "mit", Role.STUDENT)),
            SeededToken(TOKENS["root"], Principal("root", "asu", Role.ADMIN)),
            SeededToken(
                TOKENS["stale"],
                Principal("ghost", "asu", Role.STUDENT),
                expires_at=datetime(2020, 1, 1),
            ),
        ),
        reports_dir=str(tmp_path / "reports"),
        journal_path=str(tmp_path / "journal.bin"),
    )


@pytest.fixture
def setup(tmp_path):
    engine = FakeEngine(hosts={"host0", "host1"})
    publisher = FakePublisher()
    broker = build_broker(
        two_tenant_config(tmp_path),
        engine=engine,
        publisher=publisher,
        clock=FakeClock(),
    )
    client = TestClient(build_app(broker))
    return client, broker, engine, publisher


def auth(user):
    return {"Authorization": f"Bearer {TOKENS[user]}"}


def create(client, user="alice", **kw):
    return client.post("/api/sessions", headers=auth(user), json=kw)


def test_healthz_open(setup):
    client, *_ = setup
    assert client.get("/healthz").json() == {"status": "ok"}


def test_missing_unknown_expired_tokens(setup):
    client, *_ = setup
    assert client.get("/api/sessions").status_code == 401
    assert client.get("/api/sessions", headers={"Authorization": "Bearer nope"}).status_code == 401
    assert client.get("/api/sessions", headers=auth("stale")).status_code == 401


def test_whoami(setup):
    client, *_ = setup
    assert client.get("/api/whoami", headers=auth("alice")).json() == {
        "subject": "alice",
        "tenant": "asu",
        "role": "student",
    }
    assert client.get("/api/whoami", headers=auth("carol")).json()["role"] == "instructor"
    assert client.get("/api/whoami").status_code == 401


def test_student_create_first_session(setup):
    client, *_ = setup
    resp = create(client)
    assert resp.status_code == 201
    body = resp.json()
    assert body["id"] == 1
    assert body["url"] == "https://term-1.openuas.us/"
    assert body["state"] == "Running"
    assert body["web_port"] == 4001


def test_student_cap_quota_exceeded(setup):
    client, *_ = setup
    assert create(client).status_code == 201
    resp = create(client)
    assert resp.status_code == 429


def test_resource_violation_422(setup):
    client, *_ = setup
    resp = create(client, cpu_cores=64.0)
    assert resp.status_code == 422
    assert resp.json()["detail"]["violations"] == ["cpu_cores"]


def test_suspend_resume_flow_and_conflict(setup):
    client, broker, engine, _ = setup
    create(client)
    assert client.post("/api/sessions/1/suspend", headers=auth("alice")).json()["state"] == "Suspended"
    calls_before = len(engine.calls)
    # repeated suspend: conflict mapping, never a second engine call
    resp = client.post("/api/sessions/1/suspend", headers=auth("alice"))
    assert resp.status_code == 409
    assert len(engine.calls) == calls_before
    assert client.post("/api/sessions/1/resume", headers=auth("alice")).json()["state"] == "Running"


def test_engine_failure_maps_to_failed_state(setup):
    client, *_ = setup
    resp = create(client, image="not-loaded:9")
    assert resp.status_code == 201
    assert resp.json()["state"] == "Failed"
    assert resp.json()["url"] is None


def test_list_visibility_matrix(setup):
    client, *_ = setup
    create(client, "alice")
    create(client, "bob")
    create(client, "dave")

    def ids(user):
        return sorted(s["id"] for s in client.get("/api/sessions", headers=auth(user)).json())

    assert ids("alice") == [1]
    assert ids("bob") == [2]
    assert ids("carol") == [1, 2]  # instructor: whole tenant
    assert ids("dave") == [3]
    assert ids("root") == [1, 2, 3]  # admin: everything


def test_no_cross_tenant_leakage_in_lists(setup):
    client, *_ = setup
    create(client, "alice")
    create(client, "dave")
    for user, tenant in (("alice", "asu"), ("bob", "asu"), ("carol", "asu"), ("dave", "mit")):
        listed = client.get("/api/sessions", headers=auth(user)).json()
        assert all(s["tenant"] == tenant for s in listed), f"{user} leaked"


def test_get_session_authorization(setup):
    client, *_ = setup
    create(client, "alice")  # session 1 owned by alice@asu
    assert client.get("/api/sessions/1", headers=auth("alice")).status_code == 200
    assert client.get("/api/sessions/1", headers=auth("carol")).status_code == 200
    assert client.get("/api/sessions/1", headers=auth("root")).status_code == 200
    # same tenant, not the owner, student role: forbidden
    assert client.get("/api/sessions/1", headers=auth("bob")).status_code == 403
    # other tenant: existence hidden
    assert client.get("/api/sessions/1", headers=auth("dave")).status_code == 404
    assert client.get("/api/sessions/99", headers=auth("alice")).status_code == 404


def test_mutating_endpoint_authorization_matrix(setup):
    client, *_ = setup
    expectations = {
        "alice": {403, 404}.isdisjoint,  # owner: allowed (2xx or 409)
        "carol": {403, 404}.isdisjoint,
        "root": {403, 404}.isdisjoint,
        "bob": {403}.issubset,  # same-tenant student: forbidden
        "dave": {404}.issubset,  # cross-tenant: hidden
    }
    ops = ("suspend", "resume", "stop", "start")
    for user, check in expectations.items():
        codes = set()
        create(client, "alice")
        sid = client.get("/api/sessions", headers=auth("alice")).json()[-1]["id"]
        for op in ops:
            codes.add(client.post(f"/api/sessions/{sid}/{op}", headers=auth(user)).status_code)
        codes.add(client.delete(f"/api/sessions/{sid}", headers=auth(user)).status_code)
        assert check(codes), f"{user}: got {codes}"
        # clean up for the next principal (cap is 1 per student)
        client.delete(f"/api/sessions/{sid}", headers=auth("root"))


def test_destroy_then_gone(setup):
    client, *_ = setup
    create(client)
    resp = client.delete("/api/sessions/1", headers=auth("alice"))
    assert resp.status_code == 200
    assert resp.json()["state"] == "Destroyed"
    assert client.get("/api/sessions/1", headers=auth("alice")).status_code == 404
    assert client.get("/api/sessions", headers=auth("alice")).json() == []


def test_hosts_endpoint_role_gate(setup):
    client, *_ = setup
    assert client.get("/api/hosts", headers=auth("alice")).status_code == 403
    resp = client.get("/api/hosts", headers=auth("carol"))
    assert resp.status_code == 200
    assert [h["id"] for h in resp.json()] == ["host0", "host1"]


def test_plan_endpoint(setup):
    client, *_ = setup
    body = {"vehicles": 3, "rtt_ms": {"host0:host1": 2.0}}
    resp = client.post("/api/plan", headers=auth("carol"), json=body)
    assert resp.status_code == 200
    data = resp.json()
    assert data["feasible"] is True
    assert data["assignment"]["renderer"] == "host0"
    assert data["advisory"] in ("ok", "high-latency-warning")
    assert client.post("/api/plan", headers=auth("alice"), json=body).status_code == 403


def test_plan_no_gpu_maps_422(setup):
    client, *_ = setup
    body = {
        "vehicles": 1,
        "hosts": [{"id": "cpu0", "cpu_capacity": 8, "mem_capacity": 2 * GIB}],
    }
    resp = client.post("/api/plan", headers=auth("root"), json=body)
    assert resp.status_code == 422


def test_reports_endpoint(setup, tmp_path):
    client, broker, *_ = setup
    broker.reports_dir.mkdir(parents=True, exist_ok=True)
    report = compute_cdf([ResponseSample(0, 12.0), ResponseSample(1, 30.0)])
    write_report(report, broker.reports_dir / "run-1.json")

    assert client.get("/api/reports/run-1", headers=auth("alice")).status_code == 403
    resp = client.get("/api/reports/run-1", headers=auth("carol"))
    assert resp.status_code == 200
    # verbatim payload
    assert resp.text == (broker.reports_dir / "run-1.json").read_text()
    assert json.loads(resp.text)["skipped_count"] == 0

    assert client.get("/api/reports/ghost", headers=auth("carol")).status_code == 404
    assert client.get("/api/reports/..%2Fjournal", headers=auth("carol")).status_code == 404


def test_routes_published_through_api_actions(setup):
    client, _, _, publisher = setup
    create(client, "alice")
    assert "term-1.openuas.us" in publisher.current.http_routes
    client.post("/api/sessions/1/suspend", headers=auth("alice"))
    assert "term-1.openuas.us" in publisher.current.http_routes  # frozen frame still routed
    client.post("/api/sessions/1/resume", headers=auth("alice"))
    client.post("/api/sessions/1/stop", headers=auth("alice"))
    assert publisher.current.http_routes == {}
