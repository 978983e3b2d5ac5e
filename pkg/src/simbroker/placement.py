"""Multi-host workload placement.

Plans how a renderer plus per-vehicle SITL workload units spread across hosts
joined by one overlay network. The renderer is pinned to a GPU host; vehicle
units fill remaining capacity. The planner minimizes the maximum host load
fraction, tie-breaking by fewer renderer/vehicle cross-host pairs and then by
lexicographic host id.

Search is a bounded branch-and-bound: units in renderer-then-cpu-descending
order, host choices tried in greedy min-max-load order, pruned on capacity and
on the incumbent objective. Small instances are solved exactly well inside the
node budget; past the budget the incumbent (the greedy-first leaf) stands.
Pure functions throughout; safe to call from anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

__all__ = [
    "HostDescriptor",
    "UnitKind",
    "WorkloadUnit",
    "PlacementPlan",
    "PlacementError",
    "NoGpuHost",
    "HeterogeneousOverlay",
    "MissingRttEntry",
    "plan",
    "validate_plan",
    "latency_note",
]

DEFAULT_NODE_BUDGET = 50_000
DEFAULT_RTT_THRESHOLD_MS = 10.0


class PlacementError(Exception):
    pass


class NoGpuHost(PlacementError):
    pass


class HeterogeneousOverlay(PlacementError):
    pass


class MissingRttEntry(PlacementError):
    pass


@dataclass(frozen=True)
class HostDescriptor:
    id: str
    cpu_capacity: float
    mem_capacity: int
    has_gpu: bool = False
    overlay: str = "simnet"

    def __post_init__(self) -> None:
        if self.cpu_capacity <= 0 or self.mem_capacity <= 0:
            raise ValueError("host capacities must be positive")


class UnitKind(Enum):
    RENDERER = "Renderer"
    VEHICLE_SITL = "VehicleSitl"


@dataclass(frozen=True)
class WorkloadUnit:
    kind: UnitKind
    cpu_demand: float
    mem_demand: int
    vehicle_index: Optional[int] = None


@dataclass(frozen=True)
class PlacementPlan:
    assignment: Mapping[WorkloadUnit, str]
    est_cross_host_pairs: int
    feasible: bool
    max_load_fraction: float = 0.0


@dataclass
class _Load:
    cpu: float = 0.0
    mem: int = 0

    def fraction(self, host: HostDescriptor) -> float:
        return max(self.cpu / host.cpu_capacity, self.mem / host.mem_capacity)


def _check_inputs(hosts: list[HostDescriptor], units: list[WorkloadUnit]) -> WorkloadUnit:
    if not hosts:
        raise ValueError("at least one host required")
    overlays = {h.overlay for h in hosts}
    if len(overlays) > 1:
        raise HeterogeneousOverlay(f"hosts span overlays {sorted(overlays)}")
    renderers = [u for u in units if u.kind is UnitKind.RENDERER]
    if len(renderers) != 1:
        raise ValueError(f"exactly one Renderer unit required, got {len(renderers)}")
    vehicles = [u for u in units if u.kind is UnitKind.VEHICLE_SITL]
    indices = [u.vehicle_index for u in vehicles]
    if len(indices) != len(set(indices)) or None in indices:
        raise ValueError("VehicleSitl units must carry distinct vehicle_index")
    if not any(h.has_gpu for h in hosts):
        raise NoGpuHost("renderer requires a GPU host")
    return renderers[0]


def plan(
    hosts: list[HostDescriptor],
    units: list[WorkloadUnit],
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> PlacementPlan:
    """Assign every unit to a host, or report infeasibility.

    Deterministic: identical inputs produce identical plans.
    """
    renderer = _check_inputs(hosts, units)
    hosts = sorted(hosts, key=lambda h: (not h.has_gpu, h.id))
    vehicles = sorted(
        (u for u in units if u.kind is UnitKind.VEHICLE_SITL),
        key=lambda u: (-u.cpu_demand, u.vehicle_index),
    )
    order = [renderer] + vehicles
    host_index = {h.id: i for i, h in enumerate(hosts)}

    best: dict = {"objective": None, "assignment": None}
    loads = [_Load() for _ in hosts]
    chosen: list[int] = []
    nodes = [0]

    def fits(u: WorkloadUnit, hi: int) -> bool:
        h = hosts[hi]
        return (
            loads[hi].cpu + u.cpu_demand <= h.cpu_capacity
            and loads[hi].mem + u.mem_demand <= h.mem_capacity
        )

    def cross_pairs(assign: list[int]) -> int:
        rhost = assign[0]
        return sum(1 for hi in assign[1:] if hi != rhost)

    def objective(assign: list[int]) -> tuple:
        frac = max(loads[i].fraction(hosts[i]) for i in range(len(hosts)))
        return (frac, cross_pairs(assign), tuple(hosts[i].id for i in assign))

    def descend(depth: int) -> None:
        if nodes[0] >= node_budget:
            return
        if depth == len(order):
            obj = objective(chosen)
            if best["objective"] is None or obj < best["objective"]:
                best["objective"] = obj
                best["assignment"] = list(chosen)
            return
        unit = order[depth]
        if unit.kind is UnitKind.RENDERER:
            candidates = [i for i, h in enumerate(hosts) if h.has_gpu and fits(unit, i)]
        else:
            candidates = [i for i in range(len(hosts)) if fits(unit, i)]

        def preference(hi: int) -> tuple:
            loads[hi].cpu += unit.cpu_demand
            loads[hi].mem += unit.mem_demand
            frac = max(loads[i].fraction(hosts[i]) for i in range(len(hosts)))
            loads[hi].cpu -= unit.cpu_demand
            loads[hi].mem -= unit.mem_demand
            cross = 1 if chosen and hi != chosen[0] else 0
            return (frac, cross, hosts[hi].id)

        for hi in sorted(candidates, key=preference):
            loads[hi].cpu += unit.cpu_demand
            loads[hi].mem += unit.mem_demand
            chosen.append(hi)
            nodes[0] += 1
            partial_frac = max(loads[i].fraction(hosts[i]) for i in range(len(hosts)))
            # max load only grows down the tree, so a strictly worse partial
            # can never beat the incumbent
            if best["objective"] is None or partial_frac <= best["objective"][0]:
                descend(depth + 1)
            chosen.pop()
            loads[hi].cpu -= unit.cpu_demand
            loads[hi].mem -= unit.mem_demand

    descend(0)

    if best["assignment"] is None:
        return PlacementPlan(assignment={}, est_cross_host_pairs=0, feasible=False)
    assignment = {u: hosts[hi].id for u, hi in zip(order, best["assignment"])}
    return PlacementPlan(
        assignment=assignment,
        est_cross_host_pairs=best["objective"][1],
        feasible=True,
        max_load_fraction=best["objective"][0],
    )


def validate_plan(
    plan_: PlacementPlan,
    hosts: list[HostDescriptor],
    units: list[WorkloadUnit],
) -> list[str]:
    """Re-check a plan independently of how it was produced.

    Returns violation labels; empty means ok.
    """
    violations = []
    by_id = {h.id: h for h in hosts}
    missing = [u for u in units if u not in plan_.assignment]
    if missing:
        violations.append("completeness")
    loads: dict[str, _Load] = {h.id: _Load() for h in hosts}
    for unit, host_id in plan_.assignment.items():
        host = by_id.get(host_id)
        if host is None:
            violations.append("unknown-host")
            continue
        loads[host_id].cpu += unit.cpu_demand
        loads[host_id].mem += unit.mem_demand
        if unit.kind is UnitKind.RENDERER and not host.has_gpu:
            violations.append("gpu-pinning")
    for host in hosts:
        load = loads[host.id]
        if load.cpu > host.cpu_capacity or load.mem > host.mem_capacity:
            violations.append("capacity")
            break
    return violations


def latency_note(
    plan_: PlacementPlan,
    rtt_matrix: Mapping[tuple[str, str], float],
    threshold_ms: float = DEFAULT_RTT_THRESHOLD_MS,
) -> str:
    """Advise on cross-host renderer/vehicle RTT: ``ok`` or ``high-latency-warning``."""
    renderer_host = None
    for unit, host_id in plan_.assignment.items():
        if unit.kind is UnitKind.RENDERER:
            renderer_host = host_id
    if renderer_host is None:
        return "ok"
    for unit, host_id in plan_.assignment.items():
        if unit.kind is not UnitKind.VEHICLE_SITL or host_id == renderer_host:
            continue
        rtt = rtt_matrix.get((host_id, renderer_host))
        if rtt is None:
            rtt = rtt_matrix.get((renderer_host, host_id))
        if rtt is None:
            raise MissingRttEntry(f"no RTT for pair ({host_id}, {renderer_host})")
        if rtt > threshold_ms:
            return "high-latency-warning"
    return "ok"
