"""Config file loading."""

from datetime import time as dtime

from simbroker.auth import Role
from simbroker.config import default_config, load_config

SAMPLE = """
allocator:
  domain: openuas.us
  web_base: 4000
  max_sessions: 99
  stream_range: [2200, 2299]
  aux_base: 9000
gateway:
  host: 0.0.0.0
  port: 8080
engine:
  kind: docker
  endpoint: unix:///var/run/docker.sock
  api_version: v1.43
hosts:
  - {id: host0, cpu: 64, memory_bytes: 274877906944, gpu: true, address: 10.0.0.10}
  - {id: host1, cpu: 32, memory_bytes: 137438953472, address: 10.0.0.11}
tenants:
  - id: asu
    domain: openuas.us
    quota: {cpu_cores: 8, memory_bytes: 17179869184}
    max_sessions_per_user: 1
    tokens:
      - {token: secret-1, subject: alice, role: student}
      - {token: secret-2, subject: carol, role: instructor, expires: "2030-01-01T00:00:00"}
snapshot:
  schedule: "02:00"
  retention: 7
journal: /tmp/j.bin
reports_dir: /tmp/reports
api: {host: 127.0.0.1, port: 9000}
defaults: {image: stub-desktop:1, cpu_cores: 2, memory_bytes: 2147483648}
"""


def test_load_config(tmp_path):
    path = tmp_path / "broker.yaml"
    path.write_text(SAMPLE)
    cfg = load_config(path)
    assert cfg.allocator.domain == "openuas.us"
    assert cfg.allocator.stream_range == (2200, 2299)
    assert cfg.engine_kind == "docker"
    assert cfg.engine_api_version == "v1.43"
    assert [h.descriptor.id for h in cfg.hosts] == ["host0", "host1"]
    assert cfg.hosts[0].descriptor.has_gpu
    assert cfg.hosts[0].address == "10.0.0.10"
    assert cfg.tenants[0].max_sessions_per_user == 1
    assert len(cfg.tokens) == 2
    assert cfg.tokens[0].principal.role is Role.STUDENT
    assert cfg.tokens[1].expires_at is not None
    assert cfg.snapshot.schedule == dtime(2, 0)
    assert cfg.snapshot.retention == 7
    assert cfg.api_port == 9000
    assert cfg.default_image == "stub-desktop:1"


def test_empty_config_uses_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = load_config(path)
    assert cfg.allocator.web_base == 4000
    assert cfg.engine_kind == "fake"
    assert cfg.snapshot.schedule == dtime(2, 0)


def test_default_config_has_gpu_host_and_tenant():
    cfg = default_config()
    assert cfg.hosts[0].descriptor.has_gpu
    assert cfg.tenants[0].id == "asu"
