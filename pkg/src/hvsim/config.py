"""Configuration manifests: load, validate, and serialize system specs.

The manifest is a strict JSON document; unknown keys anywhere are an error.
Top level:

    cost_model     optional, six nanosecond integers (defaults used if absent)
    scheduler      {"name": ..., "sched_param": {"<vm>": {...}}, ...options}
    vms            [{id, regions, irqs, virqs, shared_pages, workload}]
    shared_pages   [{id, pa}]                      shareable 4 KB frames
    channels       [{id, endpoints, pages, virqs, variant}]
    phys_irqs      [{at_ns, irq}]                  scripted interrupt arrivals
    faults         {"stage2": inject|halt, "dist_unmodeled": fault|ignore}
    lr_count       list-register slots per VM (default 4)
    gic_boot_init  pre-enable each VM's virtual distributor (default true)

Addresses and lengths may be JSON integers, decimal strings, or 0x-hex
strings.  All time quantities are integer nanoseconds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .model import (
    MAX_TIME,
    MEASURED_LATENCIES,
    PAGE_SIZE,
    ChannelSpec,
    ConfigError,
    CostModel,
    FaultPolicy,
    IrqEvent,
    MemRegion,
    Segment,
    SharedPage,
    SharedPageRef,
    SystemSpec,
    VmSpec,
    Workload,
)
from .schedulers import get_plugin
from .vgic import DIST_MMIO_BASE, DIST_MMIO_SIZE, N_INTERRUPTS, SGI_COUNT

_TOP_KEYS = {
    "cost_model",
    "scheduler",
    "vms",
    "shared_pages",
    "channels",
    "phys_irqs",
    "faults",
    "lr_count",
    "gic_boot_init",
}
_VM_KEYS = {"id", "regions", "irqs", "virqs", "shared_pages", "workload"}
_REGION_KEYS = {"ipa", "pa", "len", "perms"}


def _check_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def parse_addr(value, where: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected integer, got {value!r}")
    if isinstance(value, int):
        out = value
    elif isinstance(value, str):
        try:
            out = int(value, 16) if value.lower().startswith("0x") else int(value, 10)
        except ValueError:
            raise ConfigError(f"{where}: cannot parse {value!r} as an address") from None
    else:
        raise ConfigError(f"{where}: expected integer or string, got {value!r}")
    if not 0 <= out < MAX_TIME:
        raise ConfigError(f"{where}: value {out} out of range")
    return out


def _parse_int(value, where: str, lo=0, hi=MAX_TIME) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected integer, got {value!r}")
    if not lo <= value < hi:
        raise ConfigError(f"{where}: value {value} out of range [{lo}, {hi})")
    return value


def _parse_perms(value, where: str) -> frozenset[str]:
    if not isinstance(value, str) or not value or set(value) - {"r", "w"}:
        raise ConfigError(f"{where}: perms must be a combination of 'r' and 'w', got {value!r}")
    return frozenset(value)


# -- workload ---------------------------------------------------------------


def _parse_segment(seg, where: str) -> Segment:
    if not isinstance(seg, dict) or len(seg) != 1:
        raise ConfigError(f"{where}: each segment is an object with exactly one key, got {seg!r}")
    (key, value), = seg.items()
    if key == "compute":
        return Segment("compute", duration_ns=_parse_int(value, f"{where}.compute"))
    if key == "hyp_call":
        payload = "" if value is None else str(value)
        return Segment("hyp_call", payload=payload)
    if key == "wfi":
        if value is not True:
            raise ConfigError(f"{where}.wfi: must be true")
        return Segment("wfi")
    if key == "mmio":
        _check_keys(value, {"ipa", "op", "value"}, {"ipa", "op"}, f"{where}.mmio")
        op = value["op"]
        if op not in ("read", "write"):
            raise ConfigError(f"{where}.mmio.op: must be read or write, got {op!r}")
        return Segment(
            "mmio",
            ipa=parse_addr(value["ipa"], f"{where}.mmio.ipa"),
            op=op,
            value=parse_addr(value.get("value", 0), f"{where}.mmio.value"),
        )
    if key in ("ivc_notify", "ivc_acquire", "ivc_release"):
        return Segment(key, channel=_parse_int(value, f"{where}.{key}"))
    if key == "generate":
        raise ConfigError(
            f"{where}: generated workload not expanded; run through the CLI with --seed"
        )
    raise ConfigError(f"{where}: unknown segment kind {key!r}")


def _parse_workload(raw, where: str) -> Workload:
    loop = False
    if isinstance(raw, dict):
        _check_keys(raw, {"loop", "segments"}, {"segments"}, where)
        loop = bool(raw.get("loop", False))
        raw = raw["segments"]
    if not isinstance(raw, list):
        raise ConfigError(f"{where}: expected a segment list")
    segments = tuple(_parse_segment(s, f"{where}[{i}]") for i, s in enumerate(raw))
    if loop and not any(s.kind == "compute" and s.duration_ns > 0 for s in segments):
        raise ConfigError(f"{where}: a looping script needs a compute segment with time > 0")
    return Workload(segments=segments, loop=loop)


# -- sections -----------------------------------------------------------------


def _parse_cost_model(raw) -> CostModel:
    if raw is None:
        return CostModel()
    _check_keys(raw, set(CostModel.FIELDS), set(), "cost_model")
    defaults = CostModel()
    values = {
        name: _parse_int(raw.get(name, getattr(defaults, name)), f"cost_model.{name}")
        for name in CostModel.FIELDS
    }
    return CostModel(**values)


def _parse_vm(raw, index: int, sched_params: dict) -> VmSpec:
    where = f"vms[{index}]"
    _check_keys(raw, _VM_KEYS, {"id", "regions", "irqs", "workload"}, where)
    vm_id = _parse_int(raw["id"], f"{where}.id")
    if vm_id != index:
        raise ConfigError(f"{where}.id: ids must be dense from 0 in order, got {vm_id}")

    regions = []
    for j, reg in enumerate(raw["regions"]):
        rw = f"{where}.regions[{j}]"
        _check_keys(reg, _REGION_KEYS, _REGION_KEYS, rw)
        try:
            regions.append(
                MemRegion(
                    ipa_base=parse_addr(reg["ipa"], f"{rw}.ipa"),
                    pa_base=parse_addr(reg["pa"], f"{rw}.pa"),
                    length=parse_addr(reg["len"], f"{rw}.len"),
                    perms=_parse_perms(reg["perms"], f"{rw}.perms"),
                )
            )
        except ConfigError as exc:
            raise ConfigError(f"{rw}: {exc}") from None

    irqs = frozenset(
        _parse_int(i, f"{where}.irqs", lo=SGI_COUNT, hi=N_INTERRUPTS) for i in raw["irqs"]
    )
    if len(irqs) != len(raw["irqs"]):
        raise ConfigError(f"{where}.irqs: duplicate interrupt ids")
    virqs = frozenset(
        _parse_int(v, f"{where}.virqs", lo=SGI_COUNT, hi=N_INTERRUPTS)
        for v in raw.get("virqs", [])
    )
    if virqs & irqs:
        raise ConfigError(f"{where}: virqs {sorted(virqs & irqs)} collide with assigned irqs")

    shared = []
    seen_pages = set()
    for j, ref in enumerate(raw.get("shared_pages", [])):
        rw = f"{where}.shared_pages[{j}]"
        _check_keys(ref, {"page", "ipa", "perms"}, {"page", "ipa", "perms"}, rw)
        page_id = _parse_int(ref["page"], f"{rw}.page")
        if page_id in seen_pages:
            raise ConfigError(f"{rw}: page {page_id} referenced twice")
        seen_pages.add(page_id)
        ipa = parse_addr(ref["ipa"], f"{rw}.ipa")
        if ipa % PAGE_SIZE:
            raise ConfigError(f"{rw}.ipa: {ipa:#x} not 4KB aligned")
        shared.append(SharedPageRef(page_id, ipa, _parse_perms(ref["perms"], f"{rw}.perms")))

    return VmSpec(
        id=vm_id,
        regions=tuple(regions),
        assigned_irqs=irqs,
        sched_param=sched_params.get(vm_id),
        workload=_parse_workload(raw["workload"], f"{where}.workload"),
        shared_pages=tuple(shared),
        virqs=virqs,
    )


def _overlap(a_lo, a_hi, b_lo, b_hi) -> bool:
    return a_lo < b_hi and b_lo < a_hi


def _validate_layout(spec: SystemSpec) -> None:
    # Per-VM IPA space must be non-overlapping, and must not shadow the
    # trapped distributor window.
    for vm in spec.vms:
        spans = sorted(
            [(r.ipa_base, r.ipa_end, "region") for r in vm.regions]
            + [(ref.ipa, ref.ipa + PAGE_SIZE, "shared page") for ref in vm.shared_pages]
        )
        for (lo1, hi1, k1), (lo2, hi2, k2) in zip(spans, spans[1:]):
            if lo2 < hi1:
                raise ConfigError(
                    f"vm {vm.id}: {k1} at {lo1:#x} overlaps {k2} at {lo2:#x} in IPA space"
                )
        for lo, hi, kind in spans:
            if _overlap(lo, hi, DIST_MMIO_BASE, DIST_MMIO_BASE + DIST_MMIO_SIZE):
                raise ConfigError(
                    f"vm {vm.id}: {kind} at {lo:#x} overlaps the distributor window"
                )

    # PA disjointness across VMs, except declared shared pages.
    pa_spans = [
        (r.pa_base, r.pa_end, vm.id) for vm in spec.vms for r in vm.regions
    ]
    pa_spans.sort()
    for (lo1, hi1, v1), (lo2, hi2, v2) in zip(pa_spans, pa_spans[1:]):
        if lo2 < hi1:
            if v1 == v2:
                raise ConfigError(f"vm {v1}: regions overlap in PA space at {lo2:#x}")
            raise ConfigError(
                f"PA overlap between vm {v1} and vm {v2} at {lo2:#x} "
                "(only declared shared pages may be shared)"
            )

    page_pa = {}
    for page in spec.shared_pages:
        if page.page_id in page_pa:
            raise ConfigError(f"shared_pages: duplicate id {page.page_id}")
        if page.pa % PAGE_SIZE:
            raise ConfigError(f"shared_pages[{page.page_id}].pa: not 4KB aligned")
        for lo, hi, vm in pa_spans:
            if _overlap(page.pa, page.pa + PAGE_SIZE, lo, hi):
                raise ConfigError(
                    f"shared page {page.page_id} PA {page.pa:#x} overlaps vm {vm} memory"
                )
        for other_id, other_pa in page_pa.items():
            if _overlap(page.pa, page.pa + PAGE_SIZE, other_pa, other_pa + PAGE_SIZE):
                raise ConfigError(
                    f"shared pages {other_id} and {page.page_id} overlap at {page.pa:#x}"
                )
        page_pa[page.page_id] = page.pa

    for vm in spec.vms:
        for ref in vm.shared_pages:
            if ref.page_id not in page_pa:
                raise ConfigError(
                    f"vm {vm.id}: shared page {ref.page_id} not declared in shared_pages"
                )

    seen_irq: dict[int, int] = {}
    for vm in spec.vms:
        for irq in sorted(vm.assigned_irqs):
            if irq in seen_irq:
                raise ConfigError(
                    f"IRQ {irq} assigned to both vm {seen_irq[irq]} and vm {vm.id}"
                )
            seen_irq[irq] = vm.id


def _validate_channels(spec: SystemSpec) -> None:
    n = len(spec.vms)
    page_owner: dict[int, int] = {}
    seen_ids = set()
    for ch in spec.channels:
        where = f"channels[{ch.id}]"
        if ch.id in seen_ids:
            raise ConfigError(f"{where}: duplicate channel id")
        seen_ids.add(ch.id)
        a, b = ch.endpoints
        if a == b or not (0 <= a < n and 0 <= b < n):
            raise ConfigError(f"{where}: endpoints must be two distinct VM ids, got {a},{b}")
        if ch.variant not in ("free_access", "hypcall_gated"):
            raise ConfigError(f"{where}: unknown variant {ch.variant!r}")
        if not ch.pages:
            raise ConfigError(f"{where}: a channel needs at least one page")
        declared = {page.page_id for page in spec.shared_pages}
        for pid in ch.pages:
            if pid not in declared:
                raise ConfigError(f"{where}: page {pid} not in shared_pages")
            if pid in page_owner:
                raise ConfigError(f"{where}: page {pid} already used by channel {page_owner[pid]}")
            page_owner[pid] = ch.id
            for ep in (a, b):
                if pid not in {ref.page_id for ref in spec.vms[ep].shared_pages}:
                    raise ConfigError(f"{where}: endpoint vm {ep} does not declare page {pid}")
        for ep, virq in zip((a, b), ch.virqs):
            if virq not in spec.vms[ep].virqs:
                raise ConfigError(f"{where}: virq {virq} not declared by endpoint vm {ep}")

    # Channel-referenced ivc segments must come from an endpoint VM.
    by_id = {ch.id: ch for ch in spec.channels}
    for vm in spec.vms:
        for i, seg in enumerate(vm.workload.segments):
            if seg.kind.startswith("ivc_"):
                ch = by_id.get(seg.channel)
                if ch is None:
                    raise ConfigError(
                        f"vms[{vm.id}].workload[{i}]: unknown channel {seg.channel}"
                    )
                if vm.id not in ch.endpoints:
                    raise ConfigError(
                        f"vms[{vm.id}].workload[{i}]: vm {vm.id} is not an endpoint "
                        f"of channel {seg.channel}"
                    )


def load_manifest(data: dict) -> SystemSpec:
    _check_keys(data, _TOP_KEYS, {"scheduler", "vms"}, "manifest")

    sched_raw = data["scheduler"]
    if not isinstance(sched_raw, dict) or "name" not in sched_raw:
        raise ConfigError("scheduler: expected an object with a 'name'")
    sched = dict(sched_raw)
    name = sched.pop("name")
    params_raw = sched.pop("sched_param", {})
    if not isinstance(params_raw, dict):
        raise ConfigError("scheduler.sched_param: expected an object keyed by VM id")
    sched_params = {}
    for key, value in params_raw.items():
        try:
            sched_params[int(key)] = value
        except (TypeError, ValueError):
            raise ConfigError(f"scheduler.sched_param: bad VM id key {key!r}") from None

    if not isinstance(data["vms"], list):
        raise ConfigError("vms: expected a list")
    vms = tuple(_parse_vm(raw, i, sched_params) for i, raw in enumerate(data["vms"]))
    for vm_id in sched_params:
        if not 0 <= vm_id < len(vms):
            raise ConfigError(f"scheduler.sched_param: no such VM {vm_id}")

    shared = []
    for j, raw in enumerate(data.get("shared_pages", [])):
        where = f"shared_pages[{j}]"
        _check_keys(raw, {"id", "pa"}, {"id", "pa"}, where)
        shared.append(
            SharedPage(_parse_int(raw["id"], f"{where}.id"), parse_addr(raw["pa"], f"{where}.pa"))
        )

    channels = []
    for j, raw in enumerate(data.get("channels", [])):
        where = f"channels[{j}]"
        _check_keys(raw, {"id", "endpoints", "pages", "virqs", "variant"},
                    {"id", "endpoints", "pages", "virqs"}, where)
        endpoints = raw["endpoints"]
        virqs = raw["virqs"]
        if not (isinstance(endpoints, list) and len(endpoints) == 2):
            raise ConfigError(f"{where}.endpoints: expected [vm, vm]")
        if not (isinstance(virqs, list) and len(virqs) == 2):
            raise ConfigError(f"{where}.virqs: expected [virq_for_ep0, virq_for_ep1]")
        channels.append(
            ChannelSpec(
                id=_parse_int(raw["id"], f"{where}.id"),
                endpoints=(
                    _parse_int(endpoints[0], f"{where}.endpoints[0]"),
                    _parse_int(endpoints[1], f"{where}.endpoints[1]"),
                ),
                pages=tuple(_parse_int(p, f"{where}.pages") for p in raw["pages"]),
                virqs=(
                    _parse_int(virqs[0], f"{where}.virqs[0]"),
                    _parse_int(virqs[1], f"{where}.virqs[1]"),
                ),
                variant=raw.get("variant", "free_access"),
            )
        )

    phys_irqs = []
    for j, raw in enumerate(data.get("phys_irqs", [])):
        where = f"phys_irqs[{j}]"
        _check_keys(raw, {"at_ns", "irq"}, {"at_ns", "irq"}, where)
        phys_irqs.append(
            IrqEvent(_parse_int(raw["at_ns"], f"{where}.at_ns"), _parse_int(raw["irq"], f"{where}.irq", hi=1024))
        )

    faults_raw = data.get("faults", {})
    _check_keys(faults_raw, {"stage2", "dist_unmodeled"}, set(), "faults")
    faults = FaultPolicy(
        stage2=faults_raw.get("stage2", "inject"),
        dist_unmodeled=faults_raw.get("dist_unmodeled", "fault"),
    )
    if faults.stage2 not in ("inject", "halt"):
        raise ConfigError(f"faults.stage2: must be inject or halt, got {faults.stage2!r}")
    if faults.dist_unmodeled not in ("fault", "ignore"):
        raise ConfigError(
            f"faults.dist_unmodeled: must be fault or ignore, got {faults.dist_unmodeled!r}"
        )

    spec = SystemSpec(
        vms=vms,
        cost_model=_parse_cost_model(data.get("cost_model")),
        scheduler_name=name,
        scheduler_options=sched,
        shared_pages=tuple(shared),
        channels=tuple(channels),
        phys_irqs=tuple(phys_irqs),
        faults=faults,
        lr_count=_parse_int(data.get("lr_count", 4), "lr_count", lo=1, hi=64),
        gic_boot_init=bool(data.get("gic_boot_init", True)),
    )
    _validate_layout(spec)
    _validate_channels(spec)
    get_plugin(spec.scheduler_name).validate(spec)
    return spec


def load_config(text: str) -> SystemSpec:
    """Parse and fully validate a JSON manifest."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest is not valid JSON: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("manifest top level must be an object")
    return load_manifest(data)


# -- serialization -------------------------------------------------------------


def _dump_segment(seg: Segment):
    if seg.kind == "compute":
        return {"compute": seg.duration_ns}
    if seg.kind == "hyp_call":
        return {"hyp_call": seg.payload or None}
    if seg.kind == "wfi":
        return {"wfi": True}
    if seg.kind == "mmio":
        out = {"ipa": hex(seg.ipa), "op": seg.op}
        if seg.op == "write":
            out["value"] = seg.value
        return {"mmio": out}
    return {seg.kind: seg.channel}


def dump_config(spec: SystemSpec) -> dict:
    """Manifest dict; load_manifest(dump_config(s)) reproduces s exactly."""
    scheduler = {"name": spec.scheduler_name}
    scheduler.update(spec.scheduler_options)
    params = {str(vm.id): vm.sched_param for vm in spec.vms if vm.sched_param is not None}
    if params:
        scheduler["sched_param"] = params
    out = {
        "cost_model": spec.cost_model.as_dict(),
        "scheduler": scheduler,
        "vms": [
            {
                "id": vm.id,
                "regions": [
                    {
                        "ipa": hex(r.ipa_base),
                        "pa": hex(r.pa_base),
                        "len": hex(r.length),
                        "perms": "".join(p for p in "rw" if p in r.perms),
                    }
                    for r in vm.regions
                ],
                "irqs": sorted(vm.assigned_irqs),
                "virqs": sorted(vm.virqs),
                "shared_pages": [
                    {
                        "page": ref.page_id,
                        "ipa": hex(ref.ipa),
                        "perms": "".join(p for p in "rw" if p in ref.perms),
                    }
                    for ref in vm.shared_pages
                ],
                "workload": {
                    "loop": vm.workload.loop,
                    "segments": [_dump_segment(s) for s in vm.workload.segments],
                },
            }
            for vm in spec.vms
        ],
        "shared_pages": [{"id": p.page_id, "pa": hex(p.pa)} for p in spec.shared_pages],
        "channels": [
            {
                "id": ch.id,
                "endpoints": list(ch.endpoints),
                "pages": list(ch.pages),
                "virqs": list(ch.virqs),
                "variant": ch.variant,
            }
            for ch in spec.channels
        ],
        "phys_irqs": [{"at_ns": e.at, "irq": e.irq} for e in spec.phys_irqs],
        "faults": {"stage2": spec.faults.stage2, "dist_unmodeled": spec.faults.dist_unmodeled},
        "lr_count": spec.lr_count,
        "gic_boot_init": spec.gic_boot_init,
    }
    return out


def dumps_config(spec: SystemSpec) -> str:
    return json.dumps(dump_config(spec), indent=2, sort_keys=True) + "\n"


# -- cost-model consistency -----------------------------------------------------


@dataclass(frozen=True)
class CostRow:
    field: str
    time_ns: int
    cycles: float
    reference_cycles: int | None  # None for fields without a measured row
    deviation: float | None  # |cycles - reference| / reference


@dataclass(frozen=True)
class CostReport:
    clock_mhz: float
    rows: tuple[CostRow, ...]

    def max_reference_deviation(self) -> float:
        return max((r.deviation for r in self.rows if r.deviation is not None), default=0.0)

    def consistent(self, tolerance: float = 0.001) -> bool:
        """True when every measured row agrees with the clock within tolerance."""
        return all(
            r.deviation is not None and r.deviation <= tolerance
            for r in self.rows
            if r.reference_cycles is not None
        )

    def __str__(self) -> str:
        lines = [f"clock {self.clock_mhz:.3f} MHz"]
        for r in self.rows:
            ref = "-" if r.reference_cycles is None else str(r.reference_cycles)
            dev = "-" if r.deviation is None else f"{100 * r.deviation:.4f}%"
            lines.append(
                f"  {r.field:<22} {r.time_ns / 1000:8.2f} us  {r.cycles:10.1f} cyc"
                f"  ref {ref:>6}  dev {dev}"
            )
        return "\n".join(lines)


def implied_clock_mhz() -> float:
    """Clock frequency implied by the measured (time, cycle) pairs."""
    ratios = [cycles / (ns / 1000) for ns, cycles in MEASURED_LATENCIES.values()]
    return sum(ratios) / len(ratios)


def validate_cost_model(cm: CostModel, clock_mhz: float) -> CostReport:
    """Report cycles = time x clock for each latency and, for fields with a
    measured reference, the deviation from the reference cycle count."""
    if clock_mhz <= 0:
        raise ConfigError(f"clock_mhz must be > 0, got {clock_mhz}")
    rows = []
    for name in CostModel.FIELDS:
        ns = getattr(cm, name)
        cycles = ns * clock_mhz / 1000.0
        ref = None
        dev = None
        if name in MEASURED_LATENCIES and ns == MEASURED_LATENCIES[name][0]:
            ref = MEASURED_LATENCIES[name][1]
            dev = abs(cycles - ref) / ref
        rows.append(CostRow(name, ns, cycles, ref, dev))
    return CostReport(clock_mhz=clock_mhz, rows=tuple(rows))
