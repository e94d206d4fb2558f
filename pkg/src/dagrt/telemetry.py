"""Counters, run traces, the four output metrics, and trace export."""

from __future__ import annotations

import csv
import ctypes
import os
import struct
import threading
from dataclasses import dataclass, field
from typing import Optional

from .errors import IncompleteTrace, IoError, ProviderUnavailable, ZeroRate

WALLCLOCK_ONLY = "wallclock-only"
HARDWARE = "hardware"


@dataclass(frozen=True)
class CounterSet:
    """Per-task hardware counters; all counts are absent for the wallclock provider."""

    instructions: Optional[int] = None
    branches: Optional[int] = None
    branch_misses: Optional[int] = None
    l1_loads: Optional[int] = None
    l1_misses: Optional[int] = None
    provider: str = WALLCLOCK_ONLY


class WallclockProvider:
    """Default provider: precise timestamps only, counts reported as absent."""

    name = WALLCLOCK_ONLY

    def open_scope(self):
        return _WallclockScope()


class _WallclockScope:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def read(self) -> CounterSet:
        return CounterSet()


# --- optional perf_event based provider (Linux only, feature-gated) ---

_PERF_EVENT_OPEN = 298  # x86_64 syscall number
_PERF_TYPE_HARDWARE = 0
_PERF_TYPE_HW_CACHE = 3
_HW_INSTRUCTIONS = 1
_HW_BRANCHES = 4
_HW_BRANCH_MISSES = 5
_L1D_READ_ACCESS = 0 | (0 << 8) | (0 << 16)
_L1D_READ_MISS = 0 | (0 << 8) | (1 << 16)


class _PerfAttr(ctypes.Structure):
    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),
        ("bp_type", ctypes.c_uint32),
        ("bp_addr", ctypes.c_uint64),
        ("bp_len", ctypes.c_uint64),
        ("branch_sample_type", ctypes.c_uint64),
        ("sample_regs_user", ctypes.c_uint64),
        ("sample_stack_user", ctypes.c_uint32),
        ("clockid", ctypes.c_int32),
        ("sample_regs_intr", ctypes.c_uint64),
        ("aux_watermark", ctypes.c_uint32),
        ("sample_max_stack", ctypes.c_uint16),
        ("__reserved_2", ctypes.c_uint16),
    ]


class HardwareCounterProvider:
    """Per-thread counters via perf_event_open; raises when the OS refuses."""

    name = HARDWARE

    _EVENTS = [
        (_PERF_TYPE_HARDWARE, _HW_INSTRUCTIONS),
        (_PERF_TYPE_HARDWARE, _HW_BRANCHES),
        (_PERF_TYPE_HARDWARE, _HW_BRANCH_MISSES),
        (_PERF_TYPE_HW_CACHE, _L1D_READ_ACCESS),
        (_PERF_TYPE_HW_CACHE, _L1D_READ_MISS),
    ]

    def __init__(self):
        if os.uname().sysname != "Linux":
            raise ProviderUnavailable("perf events require Linux")
        self._libc = ctypes.CDLL(None, use_errno=True)
        # probe once so construction fails fast on locked-down kernels
        scope = _PerfScope(self._libc, self._EVENTS)
        scope.close()

    def open_scope(self):
        return _PerfScope(self._libc, self._EVENTS)


class _PerfScope:
    def __init__(self, libc, events):
        self._fds = []
        try:
            for ev_type, config in events:
                attr = _PerfAttr()
                attr.type = ev_type
                attr.size = ctypes.sizeof(_PerfAttr)
                attr.config = config
                # bit 0: disabled; bits 5-6: exclude_kernel/exclude_hv
                attr.flags = 1 | (1 << 5) | (1 << 6)
                fd = libc.syscall(
                    _PERF_EVENT_OPEN, ctypes.byref(attr), 0, -1, -1, 0
                )
                if fd < 0:
                    raise ProviderUnavailable(
                        f"perf_event_open failed (errno {ctypes.get_errno()})"
                    )
                self._fds.append(fd)
        except Exception:
            self.close()
            raise

    def close(self):
        for fd in self._fds:
            os.close(fd)
        self._fds = []

    def __enter__(self):
        _ENABLE = 0x2400  # PERF_EVENT_IOC_ENABLE
        _RESET = 0x2403  # PERF_EVENT_IOC_RESET
        import fcntl

        for fd in self._fds:
            fcntl.ioctl(fd, _RESET, 0)
            fcntl.ioctl(fd, _ENABLE, 0)
        return self

    def __exit__(self, *exc):
        import fcntl

        _DISABLE = 0x2401  # PERF_EVENT_IOC_DISABLE
        for fd in self._fds:
            fcntl.ioctl(fd, _DISABLE, 0)
        return False

    def read(self) -> CounterSet:
        values = []
        for fd in self._fds:
            raw = os.read(fd, 8)
            values.append(struct.unpack("<Q", raw)[0])
        counters = CounterSet(*values, provider=HARDWARE)
        self.close()
        return counters


def get_counter_provider(name: str = WALLCLOCK_ONLY, logger=None):
    """Build the named provider, falling back to wallclock when unavailable."""
    if name == HARDWARE:
        try:
            return HardwareCounterProvider()
        except ProviderUnavailable as exc:
            if logger is not None:
                logger.warning("hardware counters unavailable (%s); using wallclock", exc)
            return WallclockProvider()
    return WallclockProvider()


# ---------------------------------------------------------------------------
# run traces
# ---------------------------------------------------------------------------


@dataclass
class RunMeta:
    hw_label: str = ""
    scheduler: str = ""
    cache: bool = False
    queue_depth: int = 8
    workload: str = ""
    injection_rate_mbps: float = 0.0
    repetition: int = 0


@dataclass(frozen=True)
class TaskRow:
    app_name: str
    instance_id: int
    node: str
    pe_id: int
    resource_type: str
    start: int
    end: int
    counters: CounterSet = CounterSet()
    status: int = 0


@dataclass(frozen=True)
class AppRow:
    app_name: str
    instance_id: int
    arrival: int
    first_start: int
    last_end: int
    failed: bool = False


@dataclass(frozen=True)
class SchedRow:
    start: int
    end: int
    ready_count: int
    assigned_count: int


@dataclass
class RunTrace:
    meta: RunMeta = field(default_factory=RunMeta)
    task_rows: list[TaskRow] = field(default_factory=list)
    app_rows: list[AppRow] = field(default_factory=list)
    sched_rows: list[SchedRow] = field(default_factory=list)
    pe_types: dict[int, str] = field(default_factory=dict)


class TraceRecorder:
    """Collects trace rows; all appends go through one lock so worker-side
    callers and the management thread can share it."""

    def __init__(self, meta: Optional[RunMeta] = None):
        self._lock = threading.Lock()
        self.trace = RunTrace(meta=meta or RunMeta())

    def set_pe_types(self, mapping: dict[int, str]) -> None:
        self.trace.pe_types = dict(mapping)

    def task(self, row: TaskRow) -> None:
        with self._lock:
            self.trace.task_rows.append(row)

    def app(self, row: AppRow) -> None:
        with self._lock:
            self.trace.app_rows.append(row)

    def sched(self, row: SchedRow) -> None:
        with self._lock:
            self.trace.sched_rows.append(row)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    avg_cumulative_exec_per_app: float
    avg_exec_per_app: float
    avg_sched_overhead_per_app: float
    utilization: dict[str, float]
    app_count: int
    makespan: float


def compute_metrics(trace: RunTrace) -> MetricsReport:
    """Fold a closed trace into the four output metrics.

    cumulative = mean over apps of the summed task durations; exec = mean of
    (last task end - first task start); scheduling overhead = total scheduler
    time split evenly across finalized apps; utilization = per resource type,
    the mean over PEs of busy time divided by the run makespan.
    """
    if not trace.app_rows:
        raise IncompleteTrace("no finalized applications in trace")
    finalized = {(r.app_name, r.instance_id) for r in trace.app_rows}
    for row in trace.task_rows:
        if (row.app_name, row.instance_id) not in finalized:
            raise IncompleteTrace(
                f"task row for unfinalized instance {row.app_name}#{row.instance_id}"
            )

    per_app_cumulative: dict[tuple[str, int], float] = {k: 0.0 for k in finalized}
    for row in trace.task_rows:
        per_app_cumulative[(row.app_name, row.instance_id)] += row.end - row.start

    n_apps = len(trace.app_rows)
    avg_cumulative = sum(per_app_cumulative.values()) / n_apps
    avg_exec = sum(r.last_end - r.first_start for r in trace.app_rows) / n_apps
    sched_total = sum(r.end - r.start for r in trace.sched_rows)
    avg_overhead = sched_total / n_apps

    first_arrival = min(r.arrival for r in trace.app_rows)
    last_end = max(r.last_end for r in trace.app_rows)
    makespan = max(1.0, float(last_end - first_arrival))

    busy: dict[int, float] = {pe: 0.0 for pe in trace.pe_types}
    for row in trace.task_rows:
        busy.setdefault(row.pe_id, 0.0)
        busy[row.pe_id] += row.end - row.start
    types: dict[str, list[float]] = {}
    for pe_id, busy_time in busy.items():
        rtype = trace.pe_types.get(pe_id, "cpu")
        types.setdefault(rtype, []).append(busy_time / makespan)
    utilization = {t: sum(vals) / len(vals) for t, vals in types.items()}

    return MetricsReport(
        avg_cumulative_exec_per_app=avg_cumulative,
        avg_exec_per_app=avg_exec,
        avg_sched_overhead_per_app=avg_overhead,
        utilization=utilization,
        app_count=n_apps,
        makespan=makespan,
    )


def derive_injection_period(rate_mbps: float, job_input_bits: float) -> float:
    """Inter-arrival period in microseconds; 1 Mbps carries 1 bit per microsecond."""
    if rate_mbps <= 0:
        raise ZeroRate("injection rate must be > 0 Mbps")
    if job_input_bits <= 0:
        raise ZeroRate("job input size must be > 0 bits")
    return job_input_bits / rate_mbps


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

TASK_CSV_COLUMNS = [
    "app_name",
    "instance_id",
    "node",
    "pe_id",
    "resource_type",
    "start_us",
    "end_us",
    "status",
    "instructions",
    "branches",
    "branch_misses",
    "l1_loads",
    "l1_misses",
    "counter_provider",
]


def export_trace_csv(trace: RunTrace, path: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TASK_CSV_COLUMNS)
            for row in sorted(trace.task_rows, key=lambda r: (r.pe_id, r.start)):
                c = row.counters
                writer.writerow(
                    [
                        row.app_name,
                        row.instance_id,
                        row.node,
                        row.pe_id,
                        row.resource_type,
                        row.start,
                        row.end,
                        row.status,
                        c.instructions if c.instructions is not None else "",
                        c.branches if c.branches is not None else "",
                        c.branch_misses if c.branch_misses is not None else "",
                        c.l1_loads if c.l1_loads is not None else "",
                        c.l1_misses if c.l1_misses is not None else "",
                        c.provider,
                    ]
                )
    except OSError as exc:
        raise IoError(str(exc)) from exc


_PALETTE = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
]


def export_gantt_svg(trace: RunTrace, path: str, width: int = 1200) -> None:
    """One horizontal lane per PE, one rectangle per task, time left to right."""
    if not trace.task_rows:
        raise IncompleteTrace("nothing to draw")
    pe_ids = sorted(set(trace.pe_types) | {r.pe_id for r in trace.task_rows})
    t0 = min(r.start for r in trace.task_rows)
    t1 = max(r.end for r in trace.task_rows)
    span = max(1, t1 - t0)
    lane_h, pad, label_w = 28, 10, 90
    height = pad * 2 + lane_h * len(pe_ids)
    scale = (width - label_w - pad) / span
    app_colors: dict[str, str] = {}

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for lane, pe_id in enumerate(pe_ids):
        y = pad + lane * lane_h
        rtype = trace.pe_types.get(pe_id, "?")
        parts.append(
            f'<text x="4" y="{y + lane_h * 0.65:.1f}">PE{pe_id} {rtype}</text>'
        )
        parts.append(
            f'<line x1="{label_w}" y1="{y + lane_h - 1}" x2="{width - pad}" '
            f'y2="{y + lane_h - 1}" stroke="#ddd"/>'
        )
    for row in trace.task_rows:
        lane = pe_ids.index(row.pe_id)
        x = label_w + (row.start - t0) * scale
        w = max(0.5, (row.end - row.start) * scale)
        y = pad + lane * lane_h + 2
        color = app_colors.setdefault(
            row.app_name, _PALETTE[len(app_colors) % len(_PALETTE)]
        )
        parts.append(
            f'<rect x="{x:.2f}" y="{y}" width="{w:.2f}" height="{lane_h - 6}" '
            f'fill="{color}" stroke="#333" stroke-width="0.3">'
            f"<title>{row.app_name}#{row.instance_id} {row.node} "
            f"[{row.start - t0}-{row.end - t0}us]</title></rect>"
        )
    parts.append("</svg>")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(parts))
    except OSError as exc:
        raise IoError(str(exc)) from exc
