"""Emulated processing elements: one worker thread per PE with to-do and
completed queues.

Accelerator PEs run host reference implementations and extend their service
time with a configurable synthetic delay model, so a pool of plain threads
stands in for the CPU/FFT/MMULT mix.  The to-do depth bounds tasks in flight
per PE (queued plus running); depth 1 degenerates to dispatch-on-idle.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .clock import now_us
from .errors import ConfigError, TaskPanic, TypeMismatch, UnknownPE, WorkQueueFull
from .plugins import TaskFunction, invoke_task
from .telemetry import CounterSet, WallclockProvider

log = logging.getLogger(__name__)

DEFAULT_QUEUE_DEPTH = 8


@dataclass(frozen=True)
class DelayModel:
    fixed_us: float = 0.0
    per_byte_us: float = 0.0

    def delay_us(self, nbytes: int) -> float:
        return self.fixed_us + self.per_byte_us * nbytes


@dataclass(frozen=True)
class PEDescriptor:
    pe_id: int
    resource_type: str
    label: str = ""
    synthetic_delay_model: Optional[DelayModel] = None


@dataclass
class CompletionRecord:
    instance_id: int
    node: str
    pe_id: int
    start: int
    end: int
    counters: CounterSet
    status: int
    assignment: object = None
    error: Optional[str] = None


@dataclass
class _Dispatch:
    assignment: object  # scheduling.TaskAssignment, duck-typed
    func: TaskFunction
    buffers: list
    predicted_cost: float
    arity: Optional[int] = None


class _Worker(threading.Thread):
    def __init__(self, pool: "WorkerPool", pe: PEDescriptor, core: Optional[int]):
        super().__init__(name=f"pe-{pe.pe_id}-{pe.resource_type}", daemon=True)
        self.pool = pool
        self.pe = pe
        self.core = core
        self.todo: queue.Queue = queue.Queue()
        self.completed: list[CompletionRecord] = []
        self.lock = threading.Lock()
        self.in_flight: dict[int, float] = {}  # dispatch id -> predicted cost
        self.running: Optional[tuple[int, float]] = None  # (start_us, predicted)
        self._seq = 0

    def run(self):
        if self.core is not None:
            try:
                os.sched_setaffinity(0, {self.core})
            except OSError:
                pass
        if self.pool.rt_priority:
            try:
                os.sched_setscheduler(0, os.SCHED_RR, os.sched_param(99))
            except (OSError, PermissionError):
                pass
        provider = self.pool.provider_factory()
        while True:
            item = self.todo.get()
            if item is None:
                return
            self._execute(item, provider)

    def _execute(self, item: _Dispatch, provider):
        dispatch_id, d = item
        start = now_us()
        with self.lock:
            # moves from the queued estimate to the running estimate
            self.in_flight.pop(dispatch_id, None)
            self.running = (start, d.predicted_cost)
        status = 0
        error = None
        counters = CounterSet()
        scope = provider.open_scope()
        try:
            with scope:
                status = invoke_task(d.func, d.buffers, d.arity)
            counters = scope.read()
        except TaskPanic as exc:
            status = -1
            error = str(exc)
        delay = self.pe.synthetic_delay_model
        if delay is not None:
            nbytes = sum(len(b) for b in d.buffers)
            pause = delay.delay_us(nbytes) / 1e6
            if pause > 0:
                time.sleep(pause)
        end = now_us()
        rec = CompletionRecord(
            instance_id=getattr(d.assignment, "instance_id", -1),
            node=getattr(d.assignment, "node", "?"),
            pe_id=self.pe.pe_id,
            start=start,
            end=end,
            counters=counters,
            status=status,
            assignment=d.assignment,
            error=error,
        )
        with self.lock:
            self.running = None
            self.in_flight.pop(dispatch_id, None)
            self.completed.append(rec)
        self.pool.activity.set()

    # called by the management thread

    def try_enqueue(self, d: _Dispatch) -> None:
        with self.lock:
            outstanding = len(self.in_flight) + (1 if self.running else 0)
            if outstanding >= self.pool.queue_depth:
                raise WorkQueueFull(self.pe.pe_id)
            self._seq += 1
            self.in_flight[self._seq] = d.predicted_cost
            self.todo.put((self._seq, d))

    def drain_completed(self) -> list[CompletionRecord]:
        with self.lock:
            out = self.completed
            self.completed = []
        return out

    def availability(self, now: int) -> float:
        with self.lock:
            total = 0.0
            if self.running is not None:
                start, predicted = self.running
                total += max(0.0, start + predicted - now)
            total += sum(self.in_flight.values())
        return now + total


class WorkerPool:
    """Owns the worker threads; the management thread is its only client."""

    def __init__(
        self,
        descriptors: list[PEDescriptor],
        queue_depth: int = DEFAULT_QUEUE_DEPTH,
        provider_factory: Optional[Callable] = None,
        rt_priority: bool = False,
        pin_workers: bool = True,
    ):
        if not descriptors:
            raise ConfigError("at least one PE is required")
        ids = [d.pe_id for d in descriptors]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate pe_id in configuration")
        if not any(d.resource_type == "cpu" for d in descriptors):
            raise ConfigError("configuration needs at least one cpu PE")
        if queue_depth < 1:
            raise ConfigError("queue depth must be >= 1")
        self.queue_depth = queue_depth
        self.rt_priority = rt_priority
        # A worker waking from its occupancy sleep must reclaim the GIL from
        # the (possibly compute-heavy) management thread; the default 5 ms
        # switch interval would smear that wakeup into the recorded task
        # window, so tighten it while any pool exists.
        sys.setswitchinterval(0.0005)
        self.provider_factory = provider_factory or WallclockProvider
        self.activity = threading.Event()
        self.descriptors = sorted(descriptors, key=lambda d: d.pe_id)

        cores = self._pick_cores(pin_workers)
        self._workers: dict[int, _Worker] = {}
        for desc in self.descriptors:
            self._workers[desc.pe_id] = _Worker(self, desc, cores.get(desc.pe_id))
        for w in self._workers.values():
            w.start()

    def _pick_cores(self, pin_workers: bool) -> dict[int, Optional[int]]:
        cores: dict[int, Optional[int]] = {}
        if not pin_workers:
            return cores
        try:
            available = sorted(os.sched_getaffinity(0))
        except (AttributeError, OSError):
            return cores
        cpu_pes = [d for d in self.descriptors if d.resource_type == "cpu"]
        # best effort: only pin when each cpu worker can own a distinct core
        if len(available) <= len(cpu_pes):
            return cores
        for desc, core in zip(cpu_pes, available):
            cores[desc.pe_id] = core
        return cores

    def _worker(self, pe_id: int) -> _Worker:
        w = self._workers.get(pe_id)
        if w is None:
            raise UnknownPE(pe_id)
        return w

    def enqueue_to_pe(
        self,
        assignment,
        func: TaskFunction,
        buffers: list,
        predicted_cost: Optional[float] = None,
        arity: Optional[int] = None,
    ) -> None:
        """Push an assignment to its PE; FIFO per PE.

        Raises WorkQueueFull when the PE's in-flight budget is exhausted and
        TypeMismatch when the chosen platform does not match the PE type.
        """
        w = self._worker(assignment.pe_id)
        if assignment.entry.resource_type != w.pe.resource_type:
            raise TypeMismatch(
                f"PE {assignment.pe_id}",
                f"assignment targets {assignment.entry.resource_type!r} "
                f"but PE is {w.pe.resource_type!r}",
            )
        if predicted_cost is None:
            predicted_cost = assignment.entry.nodecost
            if w.pe.synthetic_delay_model is not None:
                predicted_cost += w.pe.synthetic_delay_model.delay_us(
                    sum(len(b) for b in buffers)
                )
        w.try_enqueue(_Dispatch(assignment, func, buffers, predicted_cost, arity))

    def poll_completions(self) -> list[CompletionRecord]:
        """Non-blocking drain of every PE's completed queue."""
        out: list[CompletionRecord] = []
        for w in self._workers.values():
            out.extend(w.drain_completed())
        return out

    def estimated_availability(self, pe_id: int, now: Optional[int] = None) -> float:
        if now is None:
            now = now_us()
        return self._worker(pe_id).availability(now)

    def availability_map(self, now: Optional[int] = None) -> dict[int, float]:
        if now is None:
            now = now_us()
        return {pe_id: w.availability(now) for pe_id, w in self._workers.items()}

    def resource_types(self) -> set[str]:
        return {d.resource_type for d in self.descriptors}

    def pe_types(self) -> dict[int, str]:
        return {d.pe_id: d.resource_type for d in self.descriptors}

    def shutdown(self) -> None:
        for w in self._workers.values():
            w.todo.put(None)
        for w in self._workers.values():
            w.join(timeout=5.0)


def build_worker_pool(config: list[PEDescriptor], **kwargs) -> WorkerPool:
    return WorkerPool(config, **kwargs)


# ---------------------------------------------------------------------------
# hardware configuration files
# ---------------------------------------------------------------------------


def load_hardware_config(path: str) -> list[PEDescriptor]:
    """Read {"pes": [{pe_id, resource_type, label, synthetic_delay_model}...]}."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "pes" not in doc:
        raise ConfigError(f"{path}: expected object with a 'pes' list")
    descriptors = []
    for entry in doc["pes"]:
        delay = None
        if entry.get("synthetic_delay_model"):
            dm = entry["synthetic_delay_model"]
            delay = DelayModel(
                fixed_us=float(dm.get("fixed_us", 0.0)),
                per_byte_us=float(dm.get("per_byte_us", 0.0)),
            )
        descriptors.append(
            PEDescriptor(
                pe_id=int(entry["pe_id"]),
                resource_type=str(entry["resource_type"]),
                label=str(entry.get("label", "")),
                synthetic_delay_model=delay,
            )
        )
    return descriptors


def standard_config(
    cpus: int = 3,
    ffts: int = 0,
    mmults: int = 0,
    fft_delay: Optional[DelayModel] = None,
    mmult_delay: Optional[DelayModel] = None,
) -> list[PEDescriptor]:
    """Convenience builder for C{n}-F{n}-M{n} style pools."""
    descriptors = []
    pe_id = 0
    for i in range(cpus):
        descriptors.append(PEDescriptor(pe_id, "cpu", f"CPU {i + 1}"))
        pe_id += 1
    for i in range(ffts):
        descriptors.append(PEDescriptor(pe_id, "fft", f"FFT {i + 1}", fft_delay))
        pe_id += 1
    for i in range(mmults):
        descriptors.append(PEDescriptor(pe_id, "mmult", f"MMULT {i + 1}", mmult_delay))
        pe_id += 1
    return descriptors


def config_label(descriptors: list[PEDescriptor]) -> str:
    counts: dict[str, int] = {}
    for d in descriptors:
        counts[d.resource_type] = counts.get(d.resource_type, 0) + 1
    parts = [f"C{counts.get('cpu', 0)}"]
    parts.append(f"F{counts.get('fft', 0)}")
    parts.append(f"M{counts.get('mmult', 0)}")
    extra = sorted(t for t in counts if t not in ("cpu", "fft", "mmult"))
    for t in extra:
        parts.append(f"{t[:1].upper()}{counts[t]}")
    return "-".join(parts)
