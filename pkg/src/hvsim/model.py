"""Core domain types: VM identity, static resource specs, vCPU runtime
records, virtual time, and the hypervisor cost model.

Everything except :class:`VcpuRecord` is immutable after configuration load;
the simulation engine owns all mutable state and runs single-threaded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any

Time = int  # virtual nanoseconds
VmId = int

PAGE_SIZE = 4096
NS_PER_US = 1_000
NS_PER_MS = 1_000_000

# Manifests are rejected beyond this bound so horizon arithmetic stays far
# from any practical overflow even after summing many cost windows.
MAX_TIME = 1 << 62


class ConfigError(ValueError):
    """A manifest is malformed or violates a static invariant."""


class ContractViolation(RuntimeError):
    """A scheduler or caller broke one of the framework contracts."""


class RunState(enum.Enum):
    RUNNING = "running"
    READY = "ready"
    BLOCKED = "blocked"
    SLEEPING = "sleeping"


# Microbenchmark latencies measured on a 912 MHz Cortex-A7 class board:
# (nanoseconds, cycles).  The cycle column is what the cost-model consistency
# report checks against; see config.validate_cost_model.
MEASURED_LATENCIES = {
    "hyp_call": (6_580, 6_000),
    "world_switch": (25_840, 23_564),
    "interrupt_entry_exit": (7_480, 6_824),
    "virtual_interrupt": (29_710, 27_094),
}

# Default TLB-flush cost.  Not a measurement: chosen so that the reference
# gated inter-VM transfer costs 10x the free-access one (ivc.calibrate_tlb_flush
# solves the same linear equation).
DEFAULT_TLB_FLUSH_NS = 156_725


@dataclass(frozen=True)
class CostModel:
    """Hypervisor path costs in virtual nanoseconds.

    A distributor access is a full trap round trip, so mmio_emulation
    defaults to the hyp-call cost.
    """

    hyp_call: Time = MEASURED_LATENCIES["hyp_call"][0]
    world_switch: Time = MEASURED_LATENCIES["world_switch"][0]
    interrupt_entry_exit: Time = MEASURED_LATENCIES["interrupt_entry_exit"][0]
    virtual_interrupt: Time = MEASURED_LATENCIES["virtual_interrupt"][0]
    tlb_flush: Time = DEFAULT_TLB_FLUSH_NS
    mmio_emulation: Time = MEASURED_LATENCIES["hyp_call"][0]

    FIELDS = (
        "hyp_call",
        "world_switch",
        "interrupt_entry_exit",
        "virtual_interrupt",
        "tlb_flush",
        "mmio_emulation",
    )

    def __post_init__(self) -> None:
        for name in self.FIELDS:
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"cost_model.{name} must be a non-negative integer, got {v!r}")

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in self.FIELDS}


ZERO_COST = CostModel(0, 0, 0, 0, 0, 0)

PERM_READ = "r"
PERM_WRITE = "w"


@dataclass(frozen=True)
class MemRegion:
    """One stage-2 mapping: guest IPA range -> physical range, 4 KB granular."""

    ipa_base: int
    pa_base: int
    length: int
    perms: frozenset[str]

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ConfigError(f"region at ipa {self.ipa_base:#x}: length must be > 0")
        for name, v in (("ipa", self.ipa_base), ("pa", self.pa_base), ("len", self.length)):
            if v % PAGE_SIZE != 0:
                raise ConfigError(f"region {name}={v:#x} not 4KB aligned")
        if not self.perms <= {PERM_READ, PERM_WRITE}:
            raise ConfigError(f"bad perms {sorted(self.perms)}")

    @property
    def ipa_end(self) -> int:
        return self.ipa_base + self.length

    @property
    def pa_end(self) -> int:
        return self.pa_base + self.length

    def contains_ipa(self, ipa: int) -> bool:
        return self.ipa_base <= ipa < self.ipa_end


SEGMENT_KINDS = (
    "compute",
    "hyp_call",
    "mmio",
    "wfi",
    "ivc_notify",
    "ivc_acquire",
    "ivc_release",
)


@dataclass(frozen=True)
class Segment:
    """One step of a deterministic guest workload script."""

    kind: str
    duration_ns: Time = 0  # compute only
    ipa: int = 0  # mmio only
    op: str = "read"  # mmio only: "read" | "write"
    value: int = 0  # mmio write payload
    channel: int = 0  # ivc_* only
    payload: str = ""  # free-form annotation carried into the trace


@dataclass(frozen=True)
class Workload:
    """Segment list; with loop=True the script repeats forever."""

    segments: tuple[Segment, ...] = ()
    loop: bool = False


@dataclass(frozen=True)
class SharedPageRef:
    """A VM's declared view of one shared 4 KB page: where it maps and how."""

    page_id: int
    ipa: int
    perms: frozenset[str]


@dataclass(frozen=True)
class VmSpec:
    """Static per-VM configuration, fixed at load time."""

    id: VmId
    regions: tuple[MemRegion, ...]
    assigned_irqs: frozenset[int]
    sched_param: Any  # opaque, scheduler-owned
    workload: Workload
    shared_pages: tuple[SharedPageRef, ...] = ()
    virqs: frozenset[int] = frozenset()


@dataclass(frozen=True)
class SharedPage:
    """One shareable 4 KB physical frame."""

    page_id: int
    pa: int


VARIANT_FREE = "free_access"
VARIANT_GATED = "hypcall_gated"


@dataclass(frozen=True)
class ChannelSpec:
    """Inter-VM channel: shared pages plus per-endpoint notification virqs.

    virqs[i] is the interrupt delivered TO endpoints[i] when the peer
    notifies.
    """

    id: int
    endpoints: tuple[VmId, VmId]
    pages: tuple[int, ...]
    virqs: tuple[int, int]
    variant: str = VARIANT_FREE


@dataclass(frozen=True)
class IrqEvent:
    """Externally scripted physical interrupt arrival."""

    at: Time
    irq: int


@dataclass(frozen=True)
class FaultPolicy:
    stage2: str = "inject"  # "inject" | "halt"
    dist_unmodeled: str = "fault"  # "fault" | "ignore"


@dataclass(frozen=True)
class SystemSpec:
    """Fully validated system configuration; VM count is fixed hereafter."""

    vms: tuple[VmSpec, ...]
    cost_model: CostModel
    scheduler_name: str
    scheduler_options: Any
    shared_pages: tuple[SharedPage, ...] = ()
    channels: tuple[ChannelSpec, ...] = ()
    phys_irqs: tuple[IrqEvent, ...] = ()
    faults: FaultPolicy = FaultPolicy()
    lr_count: int = 4
    gic_boot_init: bool = True

    def vm(self, vm_id: VmId) -> VmSpec:
        return self.vms[vm_id]


@dataclass
class VcpuRecord:
    """Per-VM runtime control block.

    sched_param is constant after allocation and sched_state is only ever
    touched inside scheduler-table operations; the dispatcher reads neither.
    activation_consumed is CPU time since the VM last became Running,
    total_consumed is cumulative since boot.
    """

    id: VmId
    sched_param: Any
    run_state: RunState = RunState.READY
    sched_state: Any = None
    activation_consumed: Time = 0
    total_consumed: Time = 0

    def __repr__(self) -> str:  # keep trace details short
        return f"vcpu{self.id}({self.run_state.value})"
