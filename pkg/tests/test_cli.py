"""CLI: thin-client commands against a live server, bench tooling, fixture."""

import socket
import threading
import time

import pytest
import uvicorn
from click.testing import CliRunner

from simbroker.cli import build_runtime, main
from simbroker.config import SeededToken
from simbroker.auth import Principal, Role
from simbroker.harness import read_report

from test_api import two_tenant_config, TOKENS


@pytest.fixture(scope="module")
def live_server(tmp_path_factory):
    """The real runtime (API + gateway) behind an ephemeral uvicorn."""
    tmp = tmp_path_factory.mktemp("server")
    cfg = two_tenant_config(tmp)
    # bind the gateway to an ephemeral port so parallel test runs don't clash
    cfg = type(cfg)(**{**cfg.__dict__, "gateway_port": 0})
    runtime = build_runtime(cfg)
    server = uvicorn.Server(uvicorn.Config(runtime.app, host="127.0.0.1", port=0, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("uvicorn did not start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}", runtime
    server.should_exit = True
    thread.join(timeout=10)
    runtime.shutdown()


def invoke(server_url, token, *args):
    runner = CliRunner()
    return runner.invoke(main, ["--server", server_url, "--token", token, *args])


def test_session_lifecycle_via_cli(live_server):
    url, runtime = live_server
    result = invoke(url, TOKENS["alice"], "session", "create", "--ssh")
    assert result.exit_code == 0, result.output
    assert '"state": "Running"' in result.output
    assert "term-1.openuas.us" in result.output

    # the runtime's real gateway carries the published route
    assert "term-1.openuas.us" in runtime.gateway.table.http_routes
    assert 2200 in runtime.gateway.table.stream_routes

    result = invoke(url, TOKENS["alice"], "session", "suspend", "1")
    assert result.exit_code == 0
    assert '"state": "Suspended"' in result.output

    result = invoke(url, TOKENS["alice"], "session", "list")
    assert result.exit_code == 0
    assert '"id": 1' in result.output

    result = invoke(url, TOKENS["alice"], "session", "resume", "1")
    assert result.exit_code == 0
    result = invoke(url, TOKENS["alice"], "session", "rm", "1")
    assert result.exit_code == 0
    assert '"state": "Destroyed"' in result.output
    assert runtime.gateway.table.http_routes == {}


def test_cli_error_surfaces(live_server):
    url, _ = live_server
    result = invoke(url, TOKENS["dave"], "session", "suspend", "777")
    assert result.exit_code == 1
    assert "404" in result.output


def test_plan_via_cli(live_server, tmp_path):
    url, _ = live_server
    hosts_file = tmp_path / "hosts.yaml"
    hosts_file.write_text(
        "- {id: host0, cpu: 16, gpu: true}\n- {id: host1, cpu: 8}\n"
    )
    result = invoke(
        url, TOKENS["carol"], "plan",
        "--hosts", str(hosts_file), "--vehicles", "4", "--rtt", "host0:host1=3",
    )
    assert result.exit_code == 0, result.output
    assert '"feasible": true' in result.output
    assert '"renderer": "host0"' in result.output


def test_bench_replay_and_report_roundtrip(tmp_path):
    from simbroker.rfb_fixture import RfbFixture, ServerFixtureConfig

    trace_file = tmp_path / "trace.txt"
    trace_file.write_text(
        "# short trace\n" + "".join(f"{i * 60} key down 0x61\n" for i in range(8))
    )
    out_file = tmp_path / "report.json"
    with RfbFixture(ServerFixtureConfig(response_delay=20.0)) as fx:
        result = CliRunner().invoke(
            main,
            [
                "bench", "replay",
                "--trace", str(trace_file),
                "--endpoint", f"127.0.0.1:{fx.port}",
                "--timeout", "2000",
                "--out", str(out_file),
            ],
        )
    assert result.exit_code == 0, result.output
    assert "8 events, 0 skipped" in result.output
    report = read_report(out_file)
    assert len(report.samples) == 8

    shown = CliRunner().invoke(main, ["bench", "report", "--in", str(out_file), "--percentile", "70"])
    assert shown.exit_code == 0
    assert shown.output.startswith("P70 = ")

    at = CliRunner().invoke(main, ["bench", "report", "--in", str(out_file), "--at", "100"])
    assert at.exit_code == 0
    assert "cdf(100 ms) = 1.0000" in at.output


def test_bench_replay_requires_one_endpoint(tmp_path):
    trace_file = tmp_path / "t.txt"
    trace_file.write_text("0 key down 0x61\n")
    result = CliRunner().invoke(main, ["bench", "replay", "--trace", str(trace_file)])
    assert result.exit_code != 0
    assert "exactly one" in result.output


def test_bench_sweep_small(tmp_path):
    result = CliRunner().invoke(
        main,
        [
            "bench", "sweep",
            "--levels", "1,3",
            "--events", "4",
            "--spacing", "60",
            "--delay-per-level", "2",
            "--timeout", "1500",
            "--out-dir", str(tmp_path),
        ],
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "sweep-1.json").exists()
    assert (tmp_path / "sweep-3.json").exists()
    r1 = read_report(tmp_path / "sweep-1.json")
    r3 = read_report(tmp_path / "sweep-3.json")
    assert r3.percentiles[50] >= r1.percentiles[50]


def test_fixture_command_serves_and_exits(tmp_path):
    port_probe = socket.socket()
    port_probe.bind(("127.0.0.1", 0))
    port = port_probe.getsockname()[1]
    port_probe.close()

    outcome = {}

    def run():
        outcome["result"] = CliRunner().invoke(
            main, ["fixture", "--port", str(port), "--delay", "5", "--run-for", "1.5"]
        )

    thread = threading.Thread(target=run)
    thread.start()
    time.sleep(0.5)
    from simbroker import rfb

    transport = rfb.TcpTransport.connect("127.0.0.1", port)
    handshake = rfb.client_handshake(transport)
    assert handshake.name == "fixture"
    transport.close()
    thread.join(timeout=10)
    assert outcome["result"].exit_code == 0
