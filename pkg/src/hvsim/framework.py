"""Pluggable VM-scheduling framework.

Scheduling policy lives behind a seven-operation function table.  The
dispatcher only ever acts at two checkpoints (end of a hyp call, end of
physical interrupt handling) and only when the reschedule-request flag is
set.  Table implementations own sched_param/sched_state and must not touch
vCPU run states; the dispatcher snapshots run states around every schedule()
call and aborts the run on a violation.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Iterable

from .model import ContractViolation, RunState, Time, VcpuRecord

END_OF_HYP_CALL = "end_of_hyp_call"
END_OF_PHYSICAL_INTERRUPT = "end_of_physical_interrupt"
CHECKPOINT_KINDS = (END_OF_HYP_CALL, END_OF_PHYSICAL_INTERRUPT)

ACTION_SET_FLAG = "set_flag"

# A checkpoint re-evaluates the flag after applying each decision (table
# operations may set it again); a scheduler that never converges is broken.
_MAX_CHECKPOINT_ROUNDS = 64


class SchedulerTable(abc.ABC):
    """The seven scheduling operations the hypervisor dispatches through."""

    @abc.abstractmethod
    def init(self) -> None:
        """Called exactly once at boot, before any other operation."""

    @abc.abstractmethod
    def schedule(self) -> VcpuRecord | None:
        """Pick the vCPU to run next, or None to idle.

        Must not change any vCPU run state.
        """

    @abc.abstractmethod
    def yield_(self) -> None:
        """The running vCPU entered sleep (e.g. executed wfi)."""

    @abc.abstractmethod
    def block(self, vcpu: VcpuRecord) -> None:
        """vcpu was preempted while running."""

    @abc.abstractmethod
    def unblock(self, vcpu: VcpuRecord) -> None:
        """vcpu became executable again."""

    @abc.abstractmethod
    def allocate(self, vcpu: VcpuRecord):
        """Build and return the scheduler-private state for vcpu."""

    @abc.abstractmethod
    def enque(self, vcpu: VcpuRecord) -> None:
        """Push vcpu into the scheduler's wait storage."""


@dataclass
class TimerHandle:
    """A one-shot timer event; cancellable until it fires."""

    handle_id: int
    fire_at: Time
    action: str = ACTION_SET_FLAG
    cancelled: bool = False
    fired: bool = False


class SchedulerServices:
    """What a scheduler implementation may call back into.

    The engine provides the concrete object; tests may stub it.
    """

    def now(self) -> Time:
        raise NotImplementedError

    def set_flag(self) -> None:
        raise NotImplementedError

    def register_timer(self, at: Time, action: str = ACTION_SET_FLAG) -> TimerHandle:
        raise NotImplementedError

    def cancel_timer(self, handle: TimerHandle) -> None:
        raise NotImplementedError

    def report_deadline_miss(self, vm_id: int, deadline: Time) -> None:
        raise NotImplementedError


class Framework:
    """Dispatcher state: the table, the vCPUs, the flag, the running vCPU."""

    def __init__(self, host, table: SchedulerTable, vcpus: Iterable[VcpuRecord]):
        self.host = host  # needs: now(), trace(...), charge(...)
        self.table = table
        self.vcpus = list(vcpus)
        self.flag = False
        self.current: VcpuRecord | None = None
        self._initialized = False
        self._params = {}

    # -- boot ------------------------------------------------------------

    def initialize(self) -> None:
        if self._initialized:
            raise ContractViolation("framework initialized twice")
        self._initialized = True
        self.host.trace("cb_init", actor="hv")
        self.table.init()
        for v in self.vcpus:
            self.host.trace("cb_allocate", actor="hv", detail=f"vm={v.id}")
            v.sched_state = self.table.allocate(v)
            self._params[v.id] = v.sched_param
        for v in self.vcpus:
            self.host.trace("cb_enque", actor="hv", detail=f"vm={v.id}")
            self.table.enque(v)

    # -- flag + checkpoints -----------------------------------------------

    def set_reschedule_flag(self) -> None:
        self._require_init()
        self.host.trace("flag_set", actor="hv")
        self.flag = True

    def dispatch_checkpoint(self, kind: str) -> None:
        """Re-dispatch if the flag is set; otherwise do nothing.

        The flag is cleared atomically with each dispatch decision.  Table
        operations invoked while applying a decision may set it again, so the
        decision loop runs until the flag stays clear.
        """
        self._require_init()
        if kind not in CHECKPOINT_KINDS:
            raise ContractViolation(f"unknown checkpoint kind {kind!r}")
        self.host.trace("checkpoint", actor="hv", detail=f"kind={kind};flag={int(self.flag)}")
        rounds = 0
        while self.flag:
            rounds += 1
            if rounds > _MAX_CHECKPOINT_ROUNDS:
                raise ContractViolation("reschedule flag never settles (scheduler livelock)")
            self.flag = False
            chosen = self._call_schedule()
            if chosen is self.current:
                continue
            old = self.current
            if old is not None and old.run_state is RunState.RUNNING:
                old.run_state = RunState.READY
                self.host.trace("cb_block", actor="hv", detail=f"vm={old.id}")
                self.table.block(old)
            if chosen is None:
                self.current = None
                self.host.trace("dispatch", actor="hv", detail=self._switch_detail(old, None))
            else:
                self.current = chosen
                chosen.run_state = RunState.RUNNING
                chosen.activation_consumed = 0
                self.host.charge(
                    "dispatch", "world_switch", detail=self._switch_detail(old, chosen)
                )
        # A vCPU that went to sleep without a pending reschedule vacates the CPU.
        if self.current is not None and self.current.run_state is not RunState.RUNNING:
            self.host.trace("cpu_idle", actor="hv", detail=f"vacated=vm{self.current.id}")
            self.current = None

    def _call_schedule(self) -> VcpuRecord | None:
        before = [v.run_state for v in self.vcpus]
        chosen = self.table.schedule()
        after = [v.run_state for v in self.vcpus]
        if before != after:
            raise ContractViolation("schedule() changed vCPU run states")
        for v in self.vcpus:
            if v.sched_param is not self._params[v.id]:
                raise ContractViolation(f"sched_param of vm {v.id} was replaced")
        if chosen is not None and chosen.run_state in (RunState.SLEEPING, RunState.BLOCKED):
            raise ContractViolation(
                f"schedule() returned vm {chosen.id} in state {chosen.run_state.value}"
            )
        self.host.trace(
            "cb_schedule",
            actor="hv",
            detail="vm=-" if chosen is None else f"vm={chosen.id}",
        )
        return chosen

    @staticmethod
    def _switch_detail(old: VcpuRecord | None, new: VcpuRecord | None) -> str:
        f = "-" if old is None else str(old.id)
        t = "-" if new is None else str(new.id)
        return f"from={f};to={t}"

    # -- sleep / wakeup -----------------------------------------------------

    def on_vm_sleep(self, vcpu: VcpuRecord) -> None:
        self._require_init()
        if vcpu.run_state is not RunState.RUNNING:
            raise ContractViolation(f"sleep of vm {vcpu.id} which is {vcpu.run_state.value}")
        vcpu.run_state = RunState.SLEEPING
        self.host.trace("vm_sleep", actor=vcpu.id)
        self.host.trace("cb_yield", actor="hv", detail=f"vm={vcpu.id}")
        self.table.yield_()

    def on_vm_wakeup(self, vcpu: VcpuRecord) -> None:
        self._require_init()
        if vcpu.run_state not in (RunState.SLEEPING, RunState.BLOCKED):
            raise ContractViolation(f"wakeup of vm {vcpu.id} which is {vcpu.run_state.value}")
        vcpu.run_state = RunState.READY
        self.host.trace("vm_wake", actor=vcpu.id)
        self.host.trace("cb_unblock", actor="hv", detail=f"vm={vcpu.id}")
        self.table.unblock(vcpu)

    # -- timers -------------------------------------------------------------

    def register_timer_event(self, at: Time, action: str = ACTION_SET_FLAG) -> TimerHandle:
        self._require_init()
        if at < self.host.now():
            raise ValueError(f"timer at {at} is in the past (now={self.host.now()})")
        return self.host.register_timer(at, action)

    def run_timer_action(self, handle: TimerHandle) -> None:
        if handle.action == ACTION_SET_FLAG:
            self.set_reschedule_flag()
        else:
            raise ContractViolation(f"unknown timer action {handle.action!r}")

    def _require_init(self) -> None:
        if not self._initialized:
            raise ContractViolation("framework used before initialization")
