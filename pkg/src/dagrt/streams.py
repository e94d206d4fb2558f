"""Pipelined (streaming) execution of a DAG over a sequence of frames.

Every DAG edge gets a pair of channel buffers (even/odd frame parity), so a
producer can fill the buffer for frame ``f`` while the consumer still reads
frame ``f - 1``.  A node's frame ``f`` becomes ready once all its
predecessors have finished frame ``f`` and all its successors have finished
frame ``f - 2`` -- the latter guarantees nobody still reads the parity
buffer about to be overwritten.  Frame tasks are placed by the normal
scheduler interface; only readiness differs from the one-shot runtime.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Optional

from . import model, plugins, scheduling
from .clock import now_us
from .errors import ConfigError, DagrtError, WorkQueueFull
from .pes import WorkerPool
from .telemetry import AppRow, TaskRow, TraceRecorder

DEFAULT_CHANNEL_BYTES = 1024


@dataclass(frozen=True)
class StreamChannel:
    producer: str
    consumer: str
    nbytes: int

    @property
    def key(self) -> tuple[str, str]:
        return (self.producer, self.consumer)


@dataclass
class StreamPlan:
    """Channel layout for one streaming run: two buffers per DAG edge."""

    prototype: model.ApplicationPrototype
    channels: list[StreamChannel]
    buffers: dict[tuple[str, str], tuple[bytearray, bytearray]]

    def buffer(self, producer: str, consumer: str, frame: int) -> bytearray:
        return self.buffers[(producer, consumer)][frame % 2]

    @property
    def buffer_count(self) -> int:
        return 2 * len(self.channels)


def configure_stream(prototype: model.ApplicationPrototype) -> StreamPlan:
    """Allocate double buffers for every edge of the DAG."""
    spec = prototype.streaming
    sizes = spec.channels if spec is not None else {}
    channels = []
    buffers = {}
    for producer, consumer, _cost in prototype.edges():
        nbytes = sizes.get(f"{producer}->{consumer}", DEFAULT_CHANNEL_BYTES)
        ch = StreamChannel(producer, consumer, nbytes)
        channels.append(ch)
        buffers[ch.key] = (bytearray(nbytes), bytearray(nbytes))
    if not channels and len(prototype.dag) > 1:
        raise ConfigError(f"{prototype.app_name}: streaming DAG has no edges")
    return StreamPlan(prototype, channels, buffers)


def frame_ready(
    node: str,
    frame: int,
    prototype: model.ApplicationPrototype,
    done: set[tuple[str, int]],
    frames: int,
) -> bool:
    """The double-buffer readiness rule for (node, frame)."""
    if frame >= frames:
        return False
    spec = prototype.dag[node]
    for pred in spec.predecessors:
        if (pred.name, frame) not in done:
            return False
    if frame >= 2:
        for succ in spec.successors:
            if (succ.name, frame - 2) not in done:
                return False
    return True


def _frame_buffers(plan: StreamPlan, node: str, frame: int) -> list[bytearray]:
    """Task argument list: inputs (by predecessor name), outputs (by
    successor name), then a 4-byte little-endian frame index."""
    spec = plan.prototype.dag[node]
    bufs = [
        plan.buffer(pred.name, node, frame)
        for pred in sorted(spec.predecessors, key=lambda e: e.name)
    ]
    bufs.extend(
        plan.buffer(node, succ.name, frame)
        for succ in sorted(spec.successors, key=lambda e: e.name)
    )
    bufs.append(bytearray(struct.pack("<I", frame)))
    return bufs


@dataclass
class StreamTaskRecord:
    node: str
    frame: int
    pe_id: int
    start: int
    end: int


@dataclass
class StreamRunResult:
    frames: int
    makespan_us: float
    tasks: list[StreamTaskRecord]
    # (producer, consumer, frame) -> bytes the producer wrote for that frame
    edge_outputs: dict[tuple[str, str, int], bytes]
    plan: StreamPlan
    trace: Optional[object] = None

    def frame_outputs(self, frame: int) -> dict[tuple[str, str], bytes]:
        return {
            (p, c): data
            for (p, c, f), data in self.edge_outputs.items()
            if f == frame
        }


def run_stream(
    prototype: model.ApplicationPrototype,
    frames: int,
    pool: WorkerPool,
    scheduler,
    base_dir: str = ".",
    pipelined: bool = True,
    recorder: Optional[TraceRecorder] = None,
) -> StreamRunResult:
    """Drive ``frames`` frames of the DAG through the pool.

    With ``pipelined=False`` a full-frame barrier replaces the double-buffer
    rule: frame ``f`` may not start until every node finished frame
    ``f - 1``.  This is the baseline the pipelined mode is measured against.
    """
    if frames < 1:
        raise ConfigError("frame count must be >= 1")
    plan = configure_stream(prototype)
    recorder = recorder or TraceRecorder()
    recorder.set_pe_types(pool.pe_types())
    nodes = list(prototype.dag)
    done: set[tuple[str, int]] = set()
    in_flight: set[tuple[str, int]] = set()
    ready: list[scheduling.ReadyTask] = []
    ready_keys: set[tuple[str, int]] = set()
    ranks = scheduling.upward_ranks(prototype)
    edge_outputs: dict[tuple[str, str, int], bytes] = {}
    tasks: list[StreamTaskRecord] = []
    seq = 0
    frame_span: dict[int, tuple[int, int]] = {}

    def is_ready(node: str, frame: int) -> bool:
        if pipelined:
            return frame_ready(node, frame, prototype, done, frames)
        if frame >= frames:
            return False
        if frame > 0 and any((n, frame - 1) not in done for n in nodes):
            return False
        return all(
            (pred.name, frame) in done
            for pred in prototype.dag[node].predecessors
        )

    def refresh_ready(now: int) -> None:
        nonlocal seq
        for node in nodes:
            frame = next_frame[node]
            if (node, frame) in in_flight or (node, frame) in ready_keys:
                continue
            if is_ready(node, frame):
                spec = prototype.dag[node]
                ready.append(
                    scheduling.ReadyTask(
                        instance_id=frame,
                        node=node,
                        app_name=prototype.app_name,
                        options=spec.platforms,
                        enqueue_time=now,
                        seq=seq,
                        rank_u=ranks[node],
                        arg_bytes=sum(
                            ch.nbytes
                            for ch in plan.channels
                            if node in (ch.producer, ch.consumer)
                        ),
                    )
                )
                ready_keys.add((node, frame))
                seq += 1

    next_frame = {n: 0 for n in nodes}
    start_us = now_us()
    refresh_ready(start_us)
    total = len(nodes) * frames
    while len(done) < total:
        if ready:
            now = now_us()
            result = scheduler.schedule(
                list(ready), pool.descriptors, pool.availability_map(now), now
            )
            if result.incompatible:
                bad = result.incompatible[0]
                raise DagrtError(
                    f"no compatible PE for streaming task {bad.node}"
                )
            dispatched = set()
            for a in result.assignments:
                entry = a.entry
                lib_path = entry.shared_object or prototype.shared_object
                if not os.path.isabs(lib_path):
                    lib_path = os.path.join(base_dir, lib_path)
                func = plugins.resolve_task_function(
                    plugins.load_task_library(lib_path), entry.runfunc
                )
                bufs = _frame_buffers(plan, a.node, a.instance_id)
                try:
                    pool.enqueue_to_pe(a, func, bufs, arity=len(bufs))
                except WorkQueueFull:
                    continue
                dispatched.add((a.node, a.instance_id))
                in_flight.add((a.node, a.instance_id))
            if dispatched:
                ready = [
                    t for t in ready if (t.node, t.instance_id) not in dispatched
                ]
                ready_keys -= dispatched
        completions = pool.poll_completions()
        if not completions:
            pool.activity.wait(0.05)
            pool.activity.clear()
        now = now_us()
        for rec in completions:
            node, frame = rec.node, rec.instance_id
            if rec.status != 0:
                raise DagrtError(
                    f"streaming task {node}@{frame} failed: {rec.error}"
                )
            # snapshot the producer's buffers before anything may overwrite
            spec = prototype.dag[node]
            for succ in spec.successors:
                edge_outputs[(node, succ.name, frame)] = bytes(
                    plan.buffer(node, succ.name, frame)
                )
            in_flight.discard((node, frame))
            done.add((node, frame))
            next_frame[node] = frame + 1
            tasks.append(
                StreamTaskRecord(node, frame, rec.pe_id, rec.start, rec.end)
            )
            recorder.task(
                TaskRow(
                    app_name=prototype.app_name,
                    instance_id=frame,
                    node=node,
                    pe_id=rec.pe_id,
                    resource_type=rec.assignment.entry.resource_type,
                    start=rec.start,
                    end=rec.end,
                    counters=rec.counters,
                    status=rec.status,
                )
            )
            lo, hi = frame_span.get(frame, (rec.start, rec.end))
            frame_span[frame] = (min(lo, rec.start), max(hi, rec.end))
        refresh_ready(now)

    for frame in range(frames):
        first, last = frame_span[frame]
        recorder.app(
            AppRow(
                app_name=prototype.app_name,
                instance_id=frame,
                arrival=start_us,
                first_start=first,
                last_end=last,
                failed=False,
            )
        )
    makespan = max(t.end for t in tasks) - min(t.start for t in tasks)
    return StreamRunResult(
        frames=frames,
        makespan_us=float(makespan),
        tasks=tasks,
        edge_outputs=edge_outputs,
        plan=plan,
        trace=recorder.trace,
    )


def execute_stream_reference(
    prototype: model.ApplicationPrototype, frames: int, base_dir: str = "."
) -> dict[tuple[str, str, int], bytes]:
    """Serial per-frame reference: one node at a time in topological order,
    fresh channel buffers each frame, identical call convention.  Returns the
    same edge-output map as :func:`run_stream` for bitwise comparison.
    """
    order = model.topological_order(prototype)
    spec_streaming = prototype.streaming
    sizes = spec_streaming.channels if spec_streaming is not None else {}
    outputs: dict[tuple[str, str, int], bytes] = {}
    for frame in range(frames):
        edge_buf: dict[tuple[str, str], bytearray] = {}
        for producer, consumer, _cost in prototype.edges():
            nbytes = sizes.get(f"{producer}->{consumer}", DEFAULT_CHANNEL_BYTES)
            edge_buf[(producer, consumer)] = bytearray(nbytes)
        for node in order:
            spec = prototype.dag[node]
            bufs = [
                edge_buf[(pred.name, node)]
                for pred in sorted(spec.predecessors, key=lambda e: e.name)
            ]
            bufs.extend(
                edge_buf[(node, succ.name)]
                for succ in sorted(spec.successors, key=lambda e: e.name)
            )
            bufs.append(bytearray(struct.pack("<I", frame)))
            entry = spec.platforms[0]
            lib_path = entry.shared_object or prototype.shared_object
            if not os.path.isabs(lib_path):
                lib_path = os.path.join(base_dir, lib_path)
            func = plugins.resolve_task_function(
                plugins.load_task_library(lib_path), entry.runfunc
            )
            status = plugins.invoke_task(func, bufs, len(bufs))
            if status != 0:
                raise DagrtError(f"reference task {node}@{frame} returned {status}")
            for succ in spec.successors:
                outputs[(node, succ.name, frame)] = bytes(
                    edge_buf[(node, succ.name)]
                )
    return outputs
