"""Scheduler-table implementations: EDF, fixed-priority, round-robin.

All three keep their bookkeeping entirely in scheduler-private storage and
track which vCPU they last handed to the dispatcher, so schedule() can keep
returning the running vCPU while it remains the best choice.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .framework import SchedulerServices, SchedulerTable, TimerHandle
from .model import ConfigError, SystemSpec, Time, VcpuRecord

DEFAULT_RR_QUANTUM_NS = 10_000_000  # config "quantum_ns" overrides


# ---------------------------------------------------------------------------
# EDF
# ---------------------------------------------------------------------------


@dataclass
class EdfParam:
    period: Time
    budget: Time  # execution time allowed per period


@dataclass
class EdfVmState:
    """Dynamic EDF state: absolute deadline (= next period start) and the
    execution time still allowed in the current period."""

    deadline: Time
    remaining: Time
    mark: Time  # vcpu.total_consumed at the last replenishment


def parse_edf_param(raw, vm_id: int) -> EdfParam:
    if not isinstance(raw, dict) or set(raw) != {"period_ns", "budget_ns"}:
        raise ConfigError(
            f"vm {vm_id}: edf sched_param must be {{'period_ns', 'budget_ns'}}, got {raw!r}"
        )
    period, budget = raw["period_ns"], raw["budget_ns"]
    if not (isinstance(period, int) and isinstance(budget, int)):
        raise ConfigError(f"vm {vm_id}: edf parameters must be integers")
    if not 0 < budget <= period:
        raise ConfigError(f"vm {vm_id}: need 0 < budget_ns <= period_ns, got {budget}/{period}")
    return EdfParam(period=period, budget=budget)


class EdfScheduler(SchedulerTable):
    """Earliest-deadline-first over periodic budgets.

    Two queues: executable VMs ordered by deadline and exhausted VMs waiting
    for their next period start.  schedule() first replenishes every VM whose
    period has arrived, then picks the earliest deadline (lowest VM id on
    ties) and arms a timer for its budget expiry.  A second timer wakes the
    system at the next waiting-queue release; without it a release while a
    longer-deadline VM runs would be handled arbitrarily late.
    """

    def __init__(self, services: SchedulerServices):
        self.services = services
        self._vcpus: dict[int, VcpuRecord] = {}
        self._params: dict[int, EdfParam] = {}
        self._states: dict[int, EdfVmState] = {}
        self._executable: set[int] = set()
        self._waiting: set[int] = set()
        self._dispatched: int | None = None
        self._timers: list[TimerHandle] = []

    def init(self) -> None:
        self._executable.clear()
        self._waiting.clear()
        self._dispatched = None

    def allocate(self, vcpu: VcpuRecord) -> EdfVmState:
        param = parse_edf_param(vcpu.sched_param, vcpu.id)
        state = EdfVmState(
            deadline=self.services.now() + param.period,
            remaining=param.budget,
            mark=vcpu.total_consumed,
        )
        self._vcpus[vcpu.id] = vcpu
        self._params[vcpu.id] = param
        self._states[vcpu.id] = state
        return state

    def enque(self, vcpu: VcpuRecord) -> None:
        self._executable.add(vcpu.id)

    def schedule(self) -> VcpuRecord | None:
        now = self.services.now()
        self._cancel_timers()
        if self._dispatched is not None:
            self._sync(self._dispatched)
        self._sweep(now)

        candidates = [(self._states[i].deadline, i) for i in self._executable]
        if self._dispatched is not None and self._states[self._dispatched].remaining > 0:
            candidates.append((self._states[self._dispatched].deadline, self._dispatched))
        if not candidates:
            winner = None
        else:
            _, winner = min(candidates)
            if winner != self._dispatched:
                self._executable.discard(winner)
        self._dispatched = winner

        if winner is not None:
            st = self._states[winner]
            self._timers.append(self.services.register_timer(now + st.remaining))
            if st.deadline < now + st.remaining:
                # Budget cannot finish in time: a miss is coming; check at the line.
                self._timers.append(self.services.register_timer(st.deadline))
        if self._waiting:
            release = min(self._states[i].deadline for i in self._waiting)
            self._timers.append(self.services.register_timer(release))
        return None if winner is None else self._vcpus[winner]

    def yield_(self) -> None:
        self._dispatched = None  # sleeper leaves scheduling until unblock
        self.services.set_flag()

    def block(self, vcpu: VcpuRecord) -> None:
        self._sync(vcpu.id)
        self._route(vcpu.id)
        self.services.set_flag()

    def unblock(self, vcpu: VcpuRecord) -> None:
        self._sync(vcpu.id)
        st = self._states[vcpu.id]
        now = self.services.now()
        # Periods that elapsed while asleep are forgiven, not counted as misses.
        while st.deadline <= now:
            self._replenish(vcpu.id)
        self._route(vcpu.id)
        self.services.set_flag()

    # -- internals --------------------------------------------------------

    def _sync(self, vm_id: int) -> None:
        st = self._states[vm_id]
        used = self._vcpus[vm_id].total_consumed - st.mark
        st.remaining = self._params[vm_id].budget - used
        assert st.remaining >= 0, f"vm {vm_id} ran past its budget"

    def _replenish(self, vm_id: int) -> None:
        st = self._states[vm_id]
        st.deadline += self._params[vm_id].period
        st.remaining = self._params[vm_id].budget
        st.mark = self._vcpus[vm_id].total_consumed

    def _sweep(self, now: Time) -> None:
        """Replenish every crossed period; unconsumed budget at a crossed
        deadline is a deadline miss."""
        tracked = set(self._executable) | set(self._waiting)
        if self._dispatched is not None:
            tracked.add(self._dispatched)
        for vm_id in sorted(tracked):
            st = self._states[vm_id]
            while st.deadline <= now:
                if st.remaining > 0:
                    self.services.report_deadline_miss(vm_id, st.deadline)
                self._replenish(vm_id)
            if vm_id in self._waiting and st.remaining > 0:
                self._waiting.discard(vm_id)
                self._executable.add(vm_id)

    def _route(self, vm_id: int) -> None:
        self._executable.discard(vm_id)
        self._waiting.discard(vm_id)
        if self._states[vm_id].remaining > 0:
            self._executable.add(vm_id)
        else:
            self._waiting.add(vm_id)
        if self._dispatched == vm_id:
            self._dispatched = None

    def _cancel_timers(self) -> None:
        for h in self._timers:
            self.services.cancel_timer(h)
        self._timers.clear()


# ---------------------------------------------------------------------------
# Fixed priority
# ---------------------------------------------------------------------------


@dataclass
class FpState:
    priority: int


def parse_fp_param(raw, vm_id: int) -> int:
    if not isinstance(raw, dict) or set(raw) != {"priority"} or not isinstance(raw["priority"], int):
        raise ConfigError(f"vm {vm_id}: fp sched_param must be {{'priority': int}}, got {raw!r}")
    return raw["priority"]


class FixedPriorityScheduler(SchedulerTable):
    """Lowest priority value runs; ties go to the lower VM id.

    The flag is raised whenever a table operation changes which vCPU ought to
    be running.
    """

    def __init__(self, services: SchedulerServices):
        self.services = services
        self._vcpus: dict[int, VcpuRecord] = {}
        self._prio: dict[int, int] = {}
        self._ready: set[int] = set()
        self._dispatched: int | None = None

    def init(self) -> None:
        self._ready.clear()
        self._dispatched = None

    def allocate(self, vcpu: VcpuRecord) -> FpState:
        prio = parse_fp_param(vcpu.sched_param, vcpu.id)
        self._vcpus[vcpu.id] = vcpu
        self._prio[vcpu.id] = prio
        return FpState(priority=prio)

    def enque(self, vcpu: VcpuRecord) -> None:
        self._ready.add(vcpu.id)

    def schedule(self) -> VcpuRecord | None:
        winner = self._should_run()
        if winner is not None and winner != self._dispatched:
            self._ready.discard(winner)
        self._dispatched = winner
        return None if winner is None else self._vcpus[winner]

    def yield_(self) -> None:
        before = self._should_run()
        self._dispatched = None
        if self._should_run() != before:
            self.services.set_flag()

    def block(self, vcpu: VcpuRecord) -> None:
        before = self._should_run()
        if self._dispatched == vcpu.id:
            self._dispatched = None
        self._ready.add(vcpu.id)
        if self._should_run() != before:
            self.services.set_flag()

    def unblock(self, vcpu: VcpuRecord) -> None:
        before = self._should_run()
        self._ready.add(vcpu.id)
        if self._should_run() != before:
            self.services.set_flag()

    def _should_run(self) -> int | None:
        cands = set(self._ready)
        if self._dispatched is not None:
            cands.add(self._dispatched)
        if not cands:
            return None
        return min(cands, key=lambda i: (self._prio[i], i))


# ---------------------------------------------------------------------------
# Round robin
# ---------------------------------------------------------------------------


class RoundRobinScheduler(SchedulerTable):
    """Rotate through ready VMs, one quantum each."""

    def __init__(self, services: SchedulerServices, quantum: Time):
        if quantum <= 0:
            raise ConfigError(f"round-robin quantum must be > 0, got {quantum}")
        self.services = services
        self.quantum = quantum
        self._vcpus: dict[int, VcpuRecord] = {}
        self._ring: deque[int] = deque()
        self._dispatched: int | None = None
        self._timer: TimerHandle | None = None

    def init(self) -> None:
        self._ring.clear()
        self._dispatched = None

    def allocate(self, vcpu: VcpuRecord) -> None:
        if vcpu.sched_param not in (None, {}):
            raise ConfigError(f"vm {vcpu.id}: rr takes no per-VM sched_param")
        self._vcpus[vcpu.id] = vcpu
        return None

    def enque(self, vcpu: VcpuRecord) -> None:
        self._ring.append(vcpu.id)

    def schedule(self) -> VcpuRecord | None:
        if self._timer is not None:
            self.services.cancel_timer(self._timer)
            self._timer = None
        winner = self._ring.popleft() if self._ring else self._dispatched
        self._dispatched = winner
        if winner is None:
            return None
        self._timer = self.services.register_timer(self.services.now() + self.quantum)
        return self._vcpus[winner]

    def yield_(self) -> None:
        self._dispatched = None
        self.services.set_flag()

    def block(self, vcpu: VcpuRecord) -> None:
        if self._dispatched == vcpu.id:
            self._dispatched = None
        self._ring.append(vcpu.id)

    def unblock(self, vcpu: VcpuRecord) -> None:
        self._ring.append(vcpu.id)
        if self._dispatched is None:
            self.services.set_flag()  # nothing running: wake the dispatcher


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


class SchedulerPlugin(NamedTuple):
    factory: Callable[[SystemSpec, SchedulerServices], SchedulerTable]
    validate: Callable[[SystemSpec], None]


def _validate_edf(spec: SystemSpec) -> None:
    for vm in spec.vms:
        parse_edf_param(vm.sched_param, vm.id)
    if spec.scheduler_options:
        raise ConfigError(f"edf takes no scheduler options, got {spec.scheduler_options!r}")


def _validate_fp(spec: SystemSpec) -> None:
    for vm in spec.vms:
        parse_fp_param(vm.sched_param, vm.id)
    if spec.scheduler_options:
        raise ConfigError(f"fp takes no scheduler options, got {spec.scheduler_options!r}")


def _rr_quantum(spec: SystemSpec) -> Time:
    opts = dict(spec.scheduler_options or {})
    quantum = opts.pop("quantum_ns", DEFAULT_RR_QUANTUM_NS)
    if opts:
        raise ConfigError(f"unknown rr options {sorted(opts)}")
    if not isinstance(quantum, int) or quantum <= 0:
        raise ConfigError(f"quantum_ns must be a positive integer, got {quantum!r}")
    return quantum


def _validate_rr(spec: SystemSpec) -> None:
    _rr_quantum(spec)
    for vm in spec.vms:
        if vm.sched_param not in (None, {}):
            raise ConfigError(f"vm {vm.id}: rr takes no per-VM sched_param")


SCHEDULERS: dict[str, SchedulerPlugin] = {
    "edf": SchedulerPlugin(lambda spec, svc: EdfScheduler(svc), _validate_edf),
    "fp": SchedulerPlugin(lambda spec, svc: FixedPriorityScheduler(svc), _validate_fp),
    "rr": SchedulerPlugin(lambda spec, svc: RoundRobinScheduler(svc, _rr_quantum(spec)), _validate_rr),
}


def register(name: str, factory, validate=lambda spec: None) -> None:
    """Add a scheduler plugin (used by the config "scheduler" name field)."""
    SCHEDULERS[name] = SchedulerPlugin(factory, validate)


def get_plugin(name: str) -> SchedulerPlugin:
    try:
        return SCHEDULERS[name]
    except KeyError:
        raise ConfigError(f"unknown scheduler {name!r}; have {sorted(SCHEDULERS)}") from None
