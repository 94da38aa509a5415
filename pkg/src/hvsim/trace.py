"""Trace records, trace comparison, and metrics derived from traces.

A trace is the full, ordered account of one run: every scheduler callback,
every cost charge (naming its cost-model field), every state transition.
Metrics are always recomputed from the trace so the two can never disagree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .model import Time

CSV_HEADER = "time_ns,actor,kind,cost_field,cost_ns,detail"


class TraceRecord(NamedTuple):
    time: Time
    actor: str  # "hv" or a decimal VM id
    kind: str
    cost_field: str  # "" when no cost was charged
    cost_ns: Time
    detail: str

    def to_csv(self) -> str:
        return f"{self.time},{self.actor},{self.kind},{self.cost_field},{self.cost_ns},{self.detail}"

    def to_json(self) -> str:
        return json.dumps(
            {
                "time_ns": self.time,
                "actor": self.actor,
                "kind": self.kind,
                "cost_field": self.cost_field,
                "cost_ns": self.cost_ns,
                "detail": self.detail,
            },
            sort_keys=True,
        )


def record_from_csv(line: str) -> TraceRecord:
    time_s, actor, kind, cost_field, cost_s, detail = line.split(",", 5)
    return TraceRecord(int(time_s), actor, kind, cost_field, int(cost_s), detail)


def write_csv(records: Iterable[TraceRecord], fh) -> None:
    fh.write(CSV_HEADER + "\n")
    for r in records:
        fh.write(r.to_csv() + "\n")


def read_csv(fh) -> list[TraceRecord]:
    header = fh.readline().rstrip("\n")
    if header != CSV_HEADER:
        raise ValueError(f"unexpected trace header {header!r}")
    return [record_from_csv(line.rstrip("\n")) for line in fh if line.strip()]


def write_json(records: Iterable[TraceRecord], fh) -> None:
    for r in records:
        fh.write(r.to_json() + "\n")


def compare_traces(a: list[TraceRecord], b: list[TraceRecord]):
    """None when equal, else (index, record_a, record_b) of first divergence.

    Records compare by their serialized form; a missing record (shorter
    trace) compares as None.
    """
    for i in range(max(len(a), len(b))):
        ra = a[i].to_csv() if i < len(a) else None
        rb = b[i].to_csv() if i < len(b) else None
        if ra != rb:
            return i, ra, rb
    return None


def detail_field(detail: str, key: str) -> str | None:
    for part in detail.split(";"):
        if part.startswith(key + "="):
            return part[len(key) + 1 :]
    return None


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class VmMetrics:
    cpu_time: Time = 0
    switch_in_count: int = 0
    deadline_misses: int = 0
    irqs_received: int = 0


@dataclass
class MetricsReport:
    horizon: Time
    per_vm: dict[int, VmMetrics] = field(default_factory=dict)
    hypervisor_overhead_time: Time = 0
    idle_time: Time = 0
    ivc_transfers: int = 0

    @property
    def utilization(self) -> float:
        if self.horizon == 0:
            return 0.0
        return sum(m.cpu_time for m in self.per_vm.values()) / self.horizon

    def total_deadline_misses(self) -> int:
        return sum(m.deadline_misses for m in self.per_vm.values())

    def conserved(self) -> bool:
        """Exact accounting: VM time + hypervisor time + idle == horizon."""
        busy = sum(m.cpu_time for m in self.per_vm.values()) + self.hypervisor_overhead_time
        return busy + self.idle_time == self.horizon

    def to_dict(self) -> dict:
        return {
            "horizon_ns": self.horizon,
            "per_vm": {
                str(vm): {
                    "cpu_time_ns": m.cpu_time,
                    "switch_in_count": m.switch_in_count,
                    "deadline_misses": m.deadline_misses,
                    "irqs_received": m.irqs_received,
                }
                for vm, m in sorted(self.per_vm.items())
            },
            "hypervisor_overhead_time_ns": self.hypervisor_overhead_time,
            "idle_time_ns": self.idle_time,
            "ivc_transfers": self.ivc_transfers,
            "utilization": self.utilization,
        }


def run_intervals(records: list[TraceRecord], horizon: Time) -> list[tuple[Time, Time, int]]:
    """(start, end, vm) spans during which a VM held the CPU, clamped to horizon."""
    spans = []
    open_vm: int | None = None
    open_at = 0
    for r in records:
        if r.kind == "vm_start":
            open_vm, open_at = int(r.actor), r.time
        elif r.kind == "vm_pause" and open_vm is not None:
            s, e = min(open_at, horizon), min(r.time, horizon)
            if e > s:
                spans.append((s, e, open_vm))
            open_vm = None
    if open_vm is not None:
        s = min(open_at, horizon)
        if horizon > s:
            spans.append((s, horizon, open_vm))
    return spans


def metrics_from_trace(
    records: list[TraceRecord], horizon: Time, vm_ids: Iterable[int]
) -> MetricsReport:
    report = MetricsReport(horizon=horizon, per_vm={vm: VmMetrics() for vm in vm_ids})
    busy: list[tuple[Time, Time]] = []

    for start, end, vm in run_intervals(records, horizon):
        report.per_vm[vm].cpu_time += end - start
        busy.append((start, end))

    for r in records:
        if r.cost_ns:
            start, end = min(r.time, horizon), min(r.time + r.cost_ns, horizon)
            if end > start:
                report.hypervisor_overhead_time += end - start
                busy.append((start, end))
        if r.kind == "dispatch":
            to = detail_field(r.detail, "to")
            frm = detail_field(r.detail, "from")
            if to not in (None, "-") and to != frm:
                report.per_vm[int(to)].switch_in_count += 1
        elif r.kind == "deadline_miss":
            report.per_vm[int(detail_field(r.detail, "vm"))].deadline_misses += 1
        elif r.kind == "guest_ack":
            report.per_vm[int(r.actor)].irqs_received += 1
        elif r.kind == "ivc_notify":
            report.ivc_transfers += 1

    # Idle is measured as the horizon minus the union of busy spans, so any
    # accidental double-booking of time shows up as a conservation failure.
    busy.sort()
    covered = 0
    cur_s: Time | None = None
    cur_e = 0
    for s, e in busy:
        if cur_s is None:
            cur_s, cur_e = s, e
        elif s > cur_e:
            covered += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_s is not None:
        covered += cur_e - cur_s
    report.idle_time = horizon - covered
    return report
