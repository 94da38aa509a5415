"""Independent reference models.

These deliberately do not share code with the package: the EDF oracle is a
1-microsecond tick simulation, and the interrupt-controller oracle keeps one
tiny state machine per interrupt id.  Both are compared against the engine
elsewhere; keep them dumb.
"""

from __future__ import annotations


# ---------------------------------------------------------------------------
# Brute-force EDF timeline at 1 us resolution
# ---------------------------------------------------------------------------


def edf_tick_timeline(params_us, horizon_us):
    """Simulate ideal EDF tick by tick.

    params_us: list of (period_us, budget_us), one per VM, all always-ready.
    Returns (timeline, misses): timeline[t] is the VM running in [t, t+1) or
    -1 when idle; misses is a list of (vm, deadline_us) for every period that
    ended with unconsumed budget.
    """
    n = len(params_us)
    deadline = [0] * n
    remaining = [0] * n
    timeline = []
    misses = []
    for t in range(horizon_us):
        for i, (period, budget) in enumerate(params_us):
            if t % period == 0:
                if t > 0 and remaining[i] > 0:
                    misses.append((i, t))
                deadline[i] = t + period
                remaining[i] = budget
        run = -1
        best = None
        for i in range(n):
            if remaining[i] > 0:
                key = (deadline[i], i)
                if best is None or key < best:
                    best = key
                    run = i
        timeline.append(run)
        if run >= 0:
            remaining[run] -= 1
    return timeline, misses


# ---------------------------------------------------------------------------
# Per-interrupt distributor/CPU-interface reference model
# ---------------------------------------------------------------------------

_CTLR = 0x000
_ISENABLER = 0x100
_ICENABLER = 0x180
_ISPENDR = 0x200
_ICPENDR = 0x280
_IPRIORITYR = 0x400
_ITARGETSR = 0x800
_N = 128
_SGI = 16
_SPURIOUS = 1023


class _IrqMachine:
    """inactive -> pending -> active -> inactive, one instance per id."""

    def __init__(self):
        self.enabled = False
        self.pending = False
        self.active = False
        self.priority = 0
        self.lr = "invalid"  # "invalid" | "pending" | "active" (in the owner's LRs)
        self.lr_priority = 0  # latched when the LR is filled
        self.hw = False


class OracleGic:
    """Reference model assuming LR capacity is never exhausted."""

    def __init__(self, irq_targets, declared_virqs):
        self.targets = dict(irq_targets)
        self.virqs = {vm: set(v) for vm, v in declared_virqs.items()}
        self.ctlr = {vm: False for vm in declared_virqs}
        self.irqs = [_IrqMachine() for _ in range(_N)]
        self.acks = {vm: 0 for vm in declared_virqs}
        self.eois = {vm: 0 for vm in declared_virqs}

    def _visible(self, vm):
        owned = {i for i, t in self.targets.items() if t == vm}
        return owned | self.virqs[vm]

    def boot_enable(self, vm):
        self.ctlr[vm] = True
        for i, t in self.targets.items():
            if t == vm:
                self.irqs[i].enabled = True

    # one hardware interrupt becomes deliverable
    def _inject_hw(self, i):
        m = self.irqs[i]
        vm = self.targets.get(i)
        if vm is None:
            return
        if self.ctlr[vm] and m.enabled and m.pending and not m.active and m.lr == "invalid":
            m.pending = False
            m.active = True
            m.lr = "pending"
            m.lr_priority = m.priority
            m.hw = True

    def _inject_soft(self, vm, i):
        # A latched soft virq collapses into an existing LR for the same id:
        # one notification, one delivery.
        m = self.irqs[i]
        m.pending = False
        if m.lr == "invalid":
            m.lr = "pending"
            m.lr_priority = m.priority
            m.hw = False

    def _drain(self, vm):
        for i in sorted(self._visible(vm)):
            m = self.irqs[i]
            if not m.pending:
                continue
            if self.targets.get(i) == vm:
                self._inject_hw(i)
            elif i in self.virqs[vm]:
                self._inject_soft(vm, i)

    def mmio(self, vm, offset, is_write, value=0):
        value &= 0xFFFFFFFF
        vis = self._visible(vm)
        if offset == _CTLR:
            if is_write:
                self.ctlr[vm] = bool(value & 1)
                if self.ctlr[vm]:
                    self._drain(vm)
                return None
            return int(self.ctlr[vm])
        for base, attr, sets in (
            (_ISENABLER, "enabled", True),
            (_ICENABLER, "enabled", False),
            (_ISPENDR, "pending", True),
            (_ICPENDR, "pending", False),
        ):
            if base <= offset < base + 16:
                w = (offset - base) // 4
                if not is_write:
                    out = 0
                    for k in range(32):
                        i = w * 32 + k
                        if i in vis and getattr(self.irqs[i], attr):
                            out |= 1 << k
                    return out
                for k in range(32):
                    i = w * 32 + k
                    if (value >> k) & 1 and i in vis and i >= _SGI:
                        setattr(self.irqs[i], attr, sets)
                if sets:
                    self._drain(vm)
                return None
        if _IPRIORITYR <= offset < _IPRIORITYR + 4 * (_N // 4):
            w = (offset - _IPRIORITYR) // 4
            if not is_write:
                out = 0
                for k in range(4):
                    i = w * 4 + k
                    if i in vis:
                        out |= self.irqs[i].priority << (8 * k)
                return out
            for k in range(4):
                i = w * 4 + k
                if i in vis:
                    self.irqs[i].priority = (value >> (8 * k)) & 0xFF
            return None
        if _ITARGETSR <= offset < _ITARGETSR + 4 * (_N // 4):
            if is_write:
                return None  # static assignment, ignored
            w = (offset - _ITARGETSR) // 4
            out = 0
            for k in range(4):
                i = w * 4 + k
                if self.targets.get(i) == vm:
                    out |= 0x01 << (8 * k)
            return out
        return "unmodeled"

    def phys_arrival(self, irq):
        if self.targets.get(irq) is None or irq < _SGI or irq >= _N:
            return
        self.irqs[irq].pending = True
        self._inject_hw(irq)

    def inject_soft(self, vm, virq):
        m = self.irqs[virq]
        if m.lr != "invalid":
            return
        m.lr = "pending"
        m.lr_priority = m.priority
        m.hw = False

    def guest_ack(self, vm):
        best = None
        for i in sorted(self._visible(vm)):
            m = self.irqs[i]
            if m.lr == "pending" and (best is None or (m.lr_priority, i) < best):
                best = (m.lr_priority, i)
        if best is None:
            return _SPURIOUS
        self.irqs[best[1]].lr = "active"
        self.acks[vm] += 1
        return best[1]

    def guest_eoi(self, vm, virq):
        m = self.irqs[virq]
        if virq not in self._visible(vm) or m.lr != "active":
            return False
        m.lr = "invalid"
        if m.hw:
            m.active = False
            m.hw = False
        self.eois[vm] += 1
        self._drain(vm)
        return True

    def snapshot(self):
        return {
            "enabled": tuple(m.enabled for m in self.irqs),
            "pending": tuple(m.pending for m in self.irqs),
            "active": tuple(m.active for m in self.irqs),
            "priority": bytes(m.priority for m in self.irqs),
            "ctlr": dict(self.ctlr),
            "lrs": {vm: self._lr_set(vm) for vm in self.ctlr},
        }

    def _lr_set(self, vm):
        out = []
        for i in sorted(self._visible(vm)):
            m = self.irqs[i]
            if m.lr != "invalid":
                hw = i if m.hw else None
                out.append((i, m.lr_priority, m.lr, hw))
        return frozenset(out)
