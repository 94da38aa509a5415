from __future__ import annotations

import pytest

from hvsim import load_manifest, run
from hvsim.framework import ACTION_SET_FLAG, SchedulerTable, TimerHandle
from hvsim.trace import run_intervals
from hvsim.workloadgen import ZERO_COST, busy_workload, make_manifest, make_vm


def run_manifest(manifest, horizon):
    return run(load_manifest(manifest), horizon)


def records_of(result, *kinds):
    return [r for r in result.records if r.kind in kinds]


def total_cost(records):
    return sum(r.cost_ns for r in records)


def assert_conserved(result):
    m = result.metrics
    busy = sum(v.cpu_time for v in m.per_vm.values()) + m.hypervisor_overhead_time
    assert busy + m.idle_time == result.horizon, (
        f"time not conserved: cpu+hv={busy} idle={m.idle_time} horizon={result.horizon}"
    )


def timeline_us(result):
    """Per-microsecond runner array; requires all boundaries on whole us."""
    tl = [-1] * (result.horizon // 1000)
    for s, e, vm in run_intervals(result.records, result.horizon):
        assert s % 1000 == 0 and e % 1000 == 0, (s, e)
        for t in range(s // 1000, e // 1000):
            tl[t] = vm
    return tl


def fp_manifest(priorities, workloads, horizon, cost_model=ZERO_COST, **extra):
    vms = [make_vm(i, w) for i, w in enumerate(workloads)]
    scheduler = {
        "name": "fp",
        "sched_param": {str(i): {"priority": p} for i, p in enumerate(priorities)},
    }
    return make_manifest(vms, scheduler, cost_model=cost_model, **extra)


def rr_manifest(n_vms, quantum_ns, horizon, cost_model=ZERO_COST, workloads=None, **extra):
    if workloads is None:
        workloads = [busy_workload(horizon) for _ in range(n_vms)]
    vms = [make_vm(i, w) for i, w in enumerate(workloads)]
    scheduler = {"name": "rr", "quantum_ns": quantum_ns}
    return make_manifest(vms, scheduler, cost_model=cost_model, **extra)


class FakeHost:
    """Minimal engine stand-in for framework-level unit tests."""

    def __init__(self):
        self.t = 0
        self.records = []  # (kind, actor, cost_field, cost_ns, detail)
        self.timers = []
        self._ids = 0

    def now(self):
        return self.t

    def trace(self, kind, actor="hv", cost_field="", cost_ns=0, detail=""):
        self.records.append((kind, str(actor), cost_field, cost_ns, detail))

    def charge(self, kind, cost_field, detail="", actor="hv"):
        cost = {"world_switch": 25_840}.get(cost_field, 0)
        self.records.append((kind, str(actor), cost_field, cost, detail))
        self.t += cost

    def register_timer(self, at, action=ACTION_SET_FLAG):
        self._ids += 1
        handle = TimerHandle(self._ids, at, action)
        self.timers.append(handle)
        return handle

    def cancel_timer(self, handle):
        handle.cancelled = True

    def report_deadline_miss(self, vm_id, deadline):
        self.records.append(("deadline_miss", "hv", "", 0, f"vm={vm_id};deadline={deadline}"))

    def kinds(self):
        return [r[0] for r in self.records]


class RecordingTable(SchedulerTable):
    """Scripted table that logs every callback; schedule() pops from a plan."""

    def __init__(self, plan=None):
        self.calls = []
        self.plan = list(plan or [])
        self.vcpus = []

    def init(self):
        self.calls.append(("init",))

    def schedule(self):
        self.calls.append(("schedule",))
        if self.plan:
            pick = self.plan.pop(0)
        else:
            pick = None
        if isinstance(pick, int):
            return self.vcpus[pick]
        return pick

    def yield_(self):
        self.calls.append(("yield",))

    def block(self, vcpu):
        self.calls.append(("block", vcpu.id))

    def unblock(self, vcpu):
        self.calls.append(("unblock", vcpu.id))

    def allocate(self, vcpu):
        self.calls.append(("allocate", vcpu.id))
        self.vcpus.append(vcpu)
        return {"state": vcpu.id}

    def enque(self, vcpu):
        self.calls.append(("enque", vcpu.id))


@pytest.fixture
def fake_host():
    return FakeHost()
