"""Deterministic discrete-event core.

The virtual clock only moves two ways: a guest consumes CPU time between
events, or a hypervisor cost window is charged.  Every hyp-mode entry (hyp
call, wfi trap, trapped MMIO, physical interrupt, timer, gated channel op)
charges its cost-model field and ends at a dispatch checkpoint.

Simultaneous events are ordered guest traps first, then interrupt-class
events, then compute completions, then insertion order; the ordering is
test-pinned.  Runs are pure functions of (SystemSpec, horizon).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from . import framework as fw_mod
from .framework import ACTION_SET_FLAG, Framework, SchedulerServices, TimerHandle
from .ivc import ChannelState, channel_states
from .memmap import KIND_MMIO, KIND_PA, MemoryMap
from .model import (
    ContractViolation,
    PERM_READ,
    PERM_WRITE,
    RunState,
    SystemSpec,
    Time,
    VcpuRecord,
)
from .schedulers import get_plugin
from .trace import MetricsReport, TraceRecord, metrics_from_trace
from .vgic import DIST_MMIO_BASE, SPURIOUS_IRQ, Vgic

EV_COMPUTE_END = "compute_end"
EV_PHYS_IRQ = "phys_irq"
EV_TIMER_FIRE = "timer_fire"
EV_HYP_CALL = "hyp_call"
EV_MMIO = "mmio"
EV_WFI = "wfi"
EV_IVC = "ivc"

# Same-timestamp ordering: a trap the guest already reached comes first, an
# interrupt preempts the end of a compute span.
_KLASS = {
    EV_HYP_CALL: 0,
    EV_MMIO: 0,
    EV_WFI: 0,
    EV_IVC: 0,
    EV_PHYS_IRQ: 1,
    EV_TIMER_FIRE: 1,
    EV_COMPUTE_END: 2,
}

_GUEST = "guest"
_HV = "hv"
_IDLE = "idle"


class SimulationAborted(RuntimeError):
    """A contract violation ended the run; carries the trace so far."""

    def __init__(self, message: str, records: list[TraceRecord]):
        super().__init__(message)
        self.records = records


@dataclass
class RunResult:
    records: list[TraceRecord]
    metrics: MetricsReport
    horizon: Time


@dataclass(slots=True)
class _Event:
    at: Time
    kind: str
    vm: int | None = None  # guest-originated events carry owner + generation
    gen: int = 0
    data: object = None


class _GuestCtx:
    """Script cursor for one VM."""

    __slots__ = ("workload", "idx", "remaining", "gen", "parked")

    def __init__(self, workload):
        self.workload = workload
        self.idx = 0
        self.remaining: Time | None = None  # of the current compute segment
        self.gen = 0
        self.parked = not workload.segments

    def segment(self):
        return self.workload.segments[self.idx]

    def advance(self) -> None:
        self.idx += 1
        self.remaining = None
        if self.idx >= len(self.workload.segments):
            if self.workload.loop:
                self.idx = 0
            else:
                self.parked = True


class Engine(SchedulerServices):
    """One simulation run.  Also serves as the scheduler-services provider."""

    def __init__(self, spec: SystemSpec, horizon: Time):
        if horizon <= 0:
            raise ValueError("horizon must be > 0")
        self.spec = spec
        self.horizon = horizon
        self.cost = spec.cost_model
        self._now: Time = 0
        self.records: list[TraceRecord] = []

        self.vcpus = [VcpuRecord(id=vm.id, sched_param=vm.sched_param) for vm in spec.vms]
        self._guest = {vm.id: _GuestCtx(vm.workload) for vm in spec.vms}
        self.memmap = MemoryMap(spec)
        self.vgic = Vgic(
            irq_targets={irq: vm.id for vm in spec.vms for irq in vm.assigned_irqs},
            declared_virqs={vm.id: vm.virqs for vm in spec.vms},
            lr_count=spec.lr_count,
        )
        self.channels: dict[int, ChannelState] = channel_states(spec.channels)

        plugin = get_plugin(spec.scheduler_name)
        self.fw = Framework(self, plugin.factory(spec, self), self.vcpus)

        self._queue: list[tuple[Time, int, int, _Event]] = []
        self._seq = 0
        self._timer_ids = 0
        self._mode = _IDLE
        self._run_start: Time = 0

    # -- host / scheduler services -----------------------------------------

    def now(self) -> Time:
        return self._now

    def trace(self, kind: str, actor="hv", cost_field="", cost_ns=0, detail="") -> None:
        self.records.append(
            TraceRecord(self._now, str(actor), kind, cost_field, cost_ns, detail)
        )

    def charge(self, kind: str, cost_field: str, detail="", actor="hv") -> None:
        cost = getattr(self.cost, cost_field)
        self.trace(kind, actor=actor, cost_field=cost_field, cost_ns=cost, detail=detail)
        self._now += cost

    def set_flag(self) -> None:
        self.fw.set_reschedule_flag()

    def register_timer(self, at: Time, action: str = ACTION_SET_FLAG) -> TimerHandle:
        if at < self._now:
            raise ValueError(f"timer at {at} is in the past (now={self._now})")
        self._timer_ids += 1
        handle = TimerHandle(self._timer_ids, at, action)
        self.trace("timer_set", detail=f"id={handle.handle_id};at={at}")
        self._push(_Event(at, EV_TIMER_FIRE, data=handle))
        return handle

    def cancel_timer(self, handle: TimerHandle) -> None:
        if handle.fired or handle.cancelled:
            return
        handle.cancelled = True
        self.trace("timer_cancel", detail=f"id={handle.handle_id}")

    def report_deadline_miss(self, vm_id: int, deadline: Time) -> None:
        self.trace("deadline_miss", detail=f"vm={vm_id};deadline={deadline}")

    # -- run -----------------------------------------------------------------

    def run(self) -> RunResult:
        try:
            self._boot()
            self._loop()
        except ContractViolation as exc:
            self.trace("contract_violation", detail=str(exc).replace(",", ";"))
            raise SimulationAborted(str(exc), self.records) from exc
        self._final_fold()
        metrics = metrics_from_trace(self.records, self.horizon, [v.id for v in self.vcpus])
        return RunResult(self.records, metrics, self.horizon)

    def _boot(self) -> None:
        self.trace("boot", detail=f"scheduler={self.spec.scheduler_name};vms={len(self.vcpus)}")
        self.fw.initialize()
        if self.spec.gic_boot_init:
            for v in self.vcpus:
                self.vgic.boot_enable(v.id)
        for ev in self.spec.phys_irqs:
            self._push(_Event(ev.at, EV_PHYS_IRQ, data=ev.irq))
        self.fw.set_reschedule_flag()
        self.fw.dispatch_checkpoint(fw_mod.END_OF_HYP_CALL)
        self._resume()

    def _loop(self) -> None:
        q = self._queue
        while q:
            _, _, _, ev = heapq.heappop(q)
            if ev.kind == EV_TIMER_FIRE and ev.data.cancelled:
                continue
            if ev.vm is not None and ev.gen != self._guest[ev.vm].gen:
                continue  # superseded by a preemption
            t = ev.at if ev.at > self._now else self._now
            if t >= self.horizon:
                break
            self._now = t
            self._handle(ev)

    def _handle(self, ev: _Event) -> None:
        kind = ev.kind
        if kind == EV_COMPUTE_END:
            vcpu = self.vcpus[ev.vm]
            ctx = self._guest[ev.vm]
            self._fold_running()  # segment boundary: re-base the running span
            ctx.remaining = 0
            ctx.advance()
            self._continue_guest(vcpu, ctx)
        elif kind == EV_PHYS_IRQ:
            self._do_phys_irq(ev.data)
        elif kind == EV_TIMER_FIRE:
            self._do_timers(ev.data)
        elif kind == EV_HYP_CALL:
            self._do_hyp_call(self.vcpus[ev.vm], self._guest[ev.vm])
        elif kind == EV_WFI:
            self._do_wfi(self.vcpus[ev.vm], self._guest[ev.vm])
        elif kind == EV_MMIO:
            self._do_mmio(self.vcpus[ev.vm], self._guest[ev.vm])
        elif kind == EV_IVC:
            self._do_ivc(self.vcpus[ev.vm], self._guest[ev.vm])
        else:  # pragma: no cover
            raise AssertionError(f"unknown event kind {kind}")

    # -- event handlers -------------------------------------------------------

    def _do_phys_irq(self, irq: int) -> None:
        self._suspend()
        self.charge("phys_irq", "interrupt_entry_exit", detail=f"irq={irq}")
        eff = self.vgic.phys_arrival(irq)
        if eff.outcome == "injected":
            self.trace("virq_inject", detail=f"virq={irq};target={eff.target};hw=1")
            self._wake_if_sleeping(eff.target)
        elif eff.outcome == "pending":
            self.trace("irq_latched", detail=f"irq={irq};target={eff.target}")
        else:
            self.trace("irq_dropped", detail=f"irq={irq};warning=unassigned")
        self.fw.dispatch_checkpoint(fw_mod.END_OF_PHYSICAL_INTERRUPT)
        self._resume()

    def _do_timers(self, first: TimerHandle) -> None:
        # Expiries at the same instant share one interrupt and one checkpoint.
        batch = [first]
        at = first.fire_at
        while self._queue:
            _, _, _, head = self._queue[0]
            if head.kind != EV_TIMER_FIRE or head.at != at:
                break
            heapq.heappop(self._queue)
            if not head.data.cancelled:
                batch.append(head.data)
        self._suspend()
        ids = "+".join(str(h.handle_id) for h in batch)
        self.charge("timer_fire", "interrupt_entry_exit", detail=f"ids={ids}")
        for handle in batch:
            handle.fired = True
            self.fw.run_timer_action(handle)
        self.fw.dispatch_checkpoint(fw_mod.END_OF_PHYSICAL_INTERRUPT)
        self._resume()

    def _do_hyp_call(self, vcpu: VcpuRecord, ctx: _GuestCtx) -> None:
        seg = ctx.segment()
        self._suspend()
        detail = f"vm={vcpu.id}"
        if seg.payload:
            detail += f";payload={seg.payload}"
        self.charge("hyp_call", "hyp_call", detail=detail)
        ctx.advance()
        self.fw.dispatch_checkpoint(fw_mod.END_OF_HYP_CALL)
        self._resume()

    def _do_wfi(self, vcpu: VcpuRecord, ctx: _GuestCtx) -> None:
        self._suspend()
        self.charge("wfi_trap", "hyp_call", detail=f"vm={vcpu.id}")
        ctx.advance()
        self.fw.on_vm_sleep(vcpu)
        self.fw.dispatch_checkpoint(fw_mod.END_OF_HYP_CALL)
        self._resume()

    def _do_mmio(self, vcpu: VcpuRecord, ctx: _GuestCtx) -> None:
        seg = ctx.segment()
        access = PERM_WRITE if seg.op == "write" else PERM_READ
        tr = self.memmap.translate(vcpu.id, seg.ipa, access)
        if tr.kind == KIND_PA:
            # Pass-through: no trap, no cost, the guest keeps running.
            self.trace(
                "mmio_pass",
                actor=vcpu.id,
                detail=f"ipa={seg.ipa:#x};pa={tr.pa:#x};op={seg.op}",
            )
            ctx.advance()
            self._continue_guest(vcpu, ctx)
            return
        self._suspend()
        if tr.kind == KIND_MMIO:
            offset = seg.ipa - DIST_MMIO_BASE
            is_write = seg.op == "write"
            eff = self.vgic.mmio(vcpu.id, offset, is_write, seg.value)
            detail = f"vm={vcpu.id};offset={offset:#x};op={seg.op}"
            if is_write:
                detail += f";value={seg.value:#x}"
            elif eff.read_value is not None:
                detail += f";value={eff.read_value:#x}"
            self.charge("mmio_dist", "mmio_emulation", detail=detail)
            if eff.unmodeled and self.spec.faults.dist_unmodeled == "fault":
                self.trace("dist_fault", detail=f"vm={vcpu.id};offset={offset:#x}")
            for target in eff.injections:
                self.trace("virq_inject", detail=f"target={target};hw=1;via=mmio")
                self._wake_if_sleeping(target)
        else:  # stage-2 fault
            self.charge(
                "stage2_fault",
                "hyp_call",
                detail=f"vm={vcpu.id};ipa={seg.ipa:#x};access={access};reason={tr.reason}",
            )
            if self.spec.faults.stage2 == "halt":
                raise ContractViolation(
                    f"halt on stage-2 fault: vm {vcpu.id} ipa {seg.ipa:#x} ({tr.reason})"
                )
        ctx.advance()
        self.fw.dispatch_checkpoint(fw_mod.END_OF_HYP_CALL)
        self._resume()

    def _do_ivc(self, vcpu: VcpuRecord, ctx: _GuestCtx) -> None:
        seg = ctx.segment()
        ch = self.channels[seg.channel]
        op = seg.kind
        if op == "ivc_notify":
            self._suspend()
            peer = ch.peer(vcpu.id)
            self.charge(
                "ivc_notify",
                "hyp_call",
                detail=f"channel={ch.spec.id};from={vcpu.id};to={peer}",
            )
            virq = ch.notify_virq_for(peer)
            outcome = self.vgic.inject_soft(peer, virq)
            self.charge(
                "virq_inject",
                "virtual_interrupt",
                detail=f"virq={virq};target={peer};outcome={outcome}",
            )
            self._wake_if_sleeping(peer)
            ctx.advance()
            self.fw.dispatch_checkpoint(fw_mod.END_OF_HYP_CALL)
            self._resume()
            return

        if not ch.gated:
            # Free-access channels are always available: nothing to do, no trap.
            self.trace(op, actor=vcpu.id, detail=f"channel={ch.spec.id};variant=free_access;noop=1")
            ctx.advance()
            self._continue_guest(vcpu, ctx)
            return

        self._suspend()
        if op == "ivc_acquire":
            if ch.held_by is not None:
                self.charge(
                    "ivc_busy",
                    "hyp_call",
                    detail=f"channel={ch.spec.id};op=acquire;vm={vcpu.id};held_by={ch.held_by}",
                )
            else:
                self.charge(
                    "ivc_acquire", "hyp_call", detail=f"channel={ch.spec.id};vm={vcpu.id}"
                )
                for pid in ch.spec.pages:
                    self.memmap.map_shared_page(vcpu.id, pid)
                self.charge(
                    "stage2_map",
                    "tlb_flush",
                    detail=f"channel={ch.spec.id};vm={vcpu.id};pages={len(ch.spec.pages)}",
                )
                ch.held_by = vcpu.id
        else:  # ivc_release
            if ch.held_by != vcpu.id:
                holder = "-" if ch.held_by is None else str(ch.held_by)
                self.charge(
                    "ivc_busy",
                    "hyp_call",
                    detail=f"channel={ch.spec.id};op=release;vm={vcpu.id};held_by={holder}",
                )
            else:
                self.charge(
                    "ivc_release", "hyp_call", detail=f"channel={ch.spec.id};vm={vcpu.id}"
                )
                for pid in ch.spec.pages:
                    self.memmap.unmap_shared_page(vcpu.id, pid)
                self.charge(
                    "stage2_unmap",
                    "tlb_flush",
                    detail=f"channel={ch.spec.id};vm={vcpu.id};pages={len(ch.spec.pages)}",
                )
                ch.held_by = None
        ctx.advance()
        self.fw.dispatch_checkpoint(fw_mod.END_OF_HYP_CALL)
        self._resume()

    # -- guest execution ------------------------------------------------------

    def _continue_guest(self, vcpu: VcpuRecord, ctx: _GuestCtx) -> None:
        """After a zero-cost step: keep running, or park if the script ended."""
        if ctx.parked:
            self._suspend()
            self._resume()
        else:
            self._queue_guest_event(vcpu, ctx)

    def _fold_running(self) -> None:
        """Credit the running guest with CPU time up to now; re-base run_start.

        Between two folds the guest executes exactly one compute span, so the
        folded amount is also what the current compute segment consumed.
        """
        cur = self.fw.current
        d = self._now - self._run_start
        cur.activation_consumed += d
        cur.total_consumed += d
        ctx = self._guest[cur.id]
        if d and not ctx.parked and ctx.remaining is not None and ctx.segment().kind == "compute":
            ctx.remaining -= d
            assert ctx.remaining >= 0
        self._run_start = self._now

    def _suspend(self) -> None:
        """Halt the running guest at the current instant (hyp entry)."""
        if self._mode != _GUEST:
            self._mode = _HV
            return
        cur = self.fw.current
        self._fold_running()
        ctx = self._guest[cur.id]
        ctx.gen += 1  # whatever event the guest had queued is now stale
        self.trace("vm_pause", actor=cur.id)
        self._mode = _HV

    def _resume(self) -> None:
        """Hand the CPU to whoever is Running now; park empty scripts."""
        while True:
            cur = self.fw.current
            if cur is None:
                self._mode = _IDLE
                return
            self._deliver_pending(cur)
            ctx = self._guest[cur.id]
            if ctx.parked:
                self.trace("vm_park", actor=cur.id, detail="script done")
                self.fw.on_vm_sleep(cur)
                self.fw.dispatch_checkpoint(fw_mod.END_OF_HYP_CALL)
                continue
            self._mode = _GUEST
            self._run_start = self._now
            self.trace("vm_start", actor=cur.id)
            self._queue_guest_event(cur, ctx)
            return

    def _queue_guest_event(self, vcpu: VcpuRecord, ctx: _GuestCtx) -> None:
        seg = ctx.segment()
        if seg.kind == "compute":
            if ctx.remaining is None:
                ctx.remaining = seg.duration_ns
            self._push(_Event(self._now + ctx.remaining, EV_COMPUTE_END, vcpu.id, ctx.gen))
        elif seg.kind == "hyp_call":
            self._push(_Event(self._now, EV_HYP_CALL, vcpu.id, ctx.gen))
        elif seg.kind == "wfi":
            self._push(_Event(self._now, EV_WFI, vcpu.id, ctx.gen))
        elif seg.kind == "mmio":
            self._push(_Event(self._now, EV_MMIO, vcpu.id, ctx.gen))
        else:  # ivc_*
            self._push(_Event(self._now, EV_IVC, vcpu.id, ctx.gen))

    def _deliver_pending(self, vcpu: VcpuRecord) -> None:
        """A running guest takes its pending virtual interrupts: ACK then EOI,
        directly against the virtual CPU interface, at zero hypervisor cost."""
        while True:
            virq = self.vgic.guest_ack(vcpu.id)
            if virq == SPURIOUS_IRQ:
                return
            self.trace("guest_ack", actor=vcpu.id, detail=f"virq={virq}")
            self.vgic.guest_eoi(vcpu.id, virq)
            self.trace("guest_eoi", actor=vcpu.id, detail=f"virq={virq}")

    def _wake_if_sleeping(self, vm_id: int) -> None:
        vcpu = self.vcpus[vm_id]
        if vcpu.run_state is RunState.SLEEPING:
            self.fw.on_vm_wakeup(vcpu)

    def _push(self, ev: _Event) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (ev.at, _KLASS[ev.kind], self._seq, ev))

    def _final_fold(self) -> None:
        if self._mode != _GUEST:
            return
        cur = self.fw.current
        if self._run_start >= self.horizon:
            return
        d = self.horizon - self._run_start
        cur.activation_consumed += d
        cur.total_consumed += d
        self.records.append(TraceRecord(self.horizon, str(cur.id), "vm_pause", "", 0, ""))


def run(spec: SystemSpec, horizon: Time) -> RunResult:
    """Simulate spec for horizon nanoseconds of virtual time."""
    return Engine(spec, horizon).run()
