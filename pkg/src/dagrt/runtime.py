"""The management loop: arrivals, tracking, scheduling, dispatch, finalize.

One thread owns all runtime state.  Workers communicate only through the
pool's queues; submissions arrive through a thread-safe inbox.  Each loop
iteration drains due arrivals, folds in completions, and runs one batch
scheduling round over the whole ready set.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Optional

from . import model, plugins, scheduling
from .clock import now_us
from .errors import DagrtError, RejectedSubmission, WorkQueueFull
from .pes import CompletionRecord, WorkerPool
from .telemetry import AppRow, SchedRow, TaskRow, TraceRecorder

log = logging.getLogger(__name__)


class DependencyOrderError(RuntimeError):
    """A task was about to dispatch before all its predecessors completed."""


@dataclass
class _CachedApp:
    prototype: model.ApplicationPrototype
    base_dir: str
    ranks: dict[str, float]


@dataclass
class _LiveInstance:
    instance: model.ApplicationInstance
    app: _CachedApp
    outstanding: int = 0  # dispatched but not yet completed


@dataclass
class _Arrival:
    due: int
    submission_id: int
    k: int
    source: str  # path, raw JSON text, or cached app name
    base_dir: str


class Runtime:
    def __init__(
        self,
        pool: WorkerPool,
        scheduler,
        recorder: Optional[TraceRecorder] = None,
        capture_outputs: bool = False,
        drain_on_terminate: bool = True,
    ):
        self.pool = pool
        self.scheduler = scheduling.TimedScheduler(scheduler)
        self.recorder = recorder or TraceRecorder()
        self.recorder.set_pe_types(pool.pe_types())
        self.capture_outputs = capture_outputs
        self.drain_on_terminate = drain_on_terminate
        self.outputs: dict[tuple[str, int], dict[str, bytes]] = {}
        self.arrival_log: list[tuple[int, int, int]] = []  # (sid, k, realized_us)

        self._apps: dict[str, _CachedApp] = {}
        self._instances: dict[int, _LiveInstance] = {}
        self._ready: list[scheduling.ReadyTask] = []
        self._arrivals: list[tuple[int, int, _Arrival]] = []
        self._inbox: list[_Arrival] = []
        self._inbox_lock = threading.Lock()
        self._next_instance = itertools.count()
        self._next_seq = itertools.count()
        self._next_submission = itertools.count()
        self._next_heap = itertools.count()
        self._terminating = False
        self._abort = False
        self.finalized_count = 0
        self.rejected: list[str] = []

    # ------------------------------------------------------------------
    # submission API (thread-safe)
    # ------------------------------------------------------------------

    def submit_path(self, path: str, count: int = 1, period_us: float = 0) -> int:
        if not os.path.isfile(path):
            raise RejectedSubmission(f"no such application file: {path}")
        return self._submit(path, os.path.dirname(os.path.abspath(path)) or ".",
                            count, period_us)

    def submit_text(self, json_text: str, count: int = 1, period_us: float = 0,
                    base_dir: str = ".") -> int:
        return self._submit(json_text, base_dir, count, period_us)

    def _submit(self, source: str, base_dir: str, count: int,
                period_us: float) -> int:
        if count < 1:
            raise RejectedSubmission("instance count must be >= 1")
        if period_us < 0:
            raise RejectedSubmission("period must be >= 0")
        sid = next(self._next_submission)
        now = now_us()
        batch = [
            _Arrival(int(now + k * period_us), sid, k, source, base_dir)
            for k in range(count)
        ]
        with self._inbox_lock:
            self._inbox.extend(batch)
        self.pool.activity.set()
        return sid

    def terminate(self, drain: Optional[bool] = None) -> None:
        self._terminating = True
        if drain is not None:
            self._abort = not drain
        elif not self.drain_on_terminate:
            self._abort = True
        self.pool.activity.set()

    # ------------------------------------------------------------------
    # loop
    # ------------------------------------------------------------------

    def run(self) -> None:
        """Serve until terminated; with draining, in-flight apps finish first."""
        while True:
            self._iteration()
            if self._terminating and (self._abort or self._idle()):
                break
            self._wait()
        if self._abort:
            for live in list(self._instances.values()):
                live.instance.failed = True
                live.instance.fail_reason = "aborted"

    def run_until_idle(self) -> None:
        """Process everything already submitted and return when quiescent."""
        while not self._idle():
            self._iteration()
            if not self._idle():
                self._wait()

    def _idle(self) -> bool:
        with self._inbox_lock:
            pending_inbox = bool(self._inbox)
        return not (
            pending_inbox or self._arrivals or self._instances or self._ready
        )

    def _wait(self) -> None:
        timeout = 0.05
        if self._arrivals:
            due = self._arrivals[0][0]
            timeout = min(timeout, max(0.0, (due - now_us()) / 1e6))
        self.pool.activity.wait(timeout)
        self.pool.activity.clear()

    def _iteration(self) -> None:
        with self._inbox_lock:
            incoming, self._inbox = self._inbox, []
        for arrival in incoming:
            heapq.heappush(
                self._arrivals, (arrival.due, next(self._next_heap), arrival)
            )

        now = now_us()
        due = []
        while self._arrivals and self._arrivals[0][0] <= now:
            due.append(heapq.heappop(self._arrivals)[2])
        if due:
            self.process_arrivals(due)

        for rec in self.pool.poll_completions():
            self.handle_completion(rec)

        if self._ready:
            self._schedule_round()

    # ------------------------------------------------------------------
    # arrivals
    # ------------------------------------------------------------------

    def process_arrivals(self, arrivals: list[_Arrival]) -> None:
        for arrival in arrivals:
            try:
                app = self._resolve_app(arrival.source, arrival.base_dir)
            except DagrtError as exc:
                log.warning("rejected submission %s: %s", arrival.submission_id, exc)
                self.rejected.append(str(exc))
                continue
            now = now_us()
            instance = model.instantiate(app.prototype, next(self._next_instance), now)
            self._instances[instance.instance_id] = _LiveInstance(instance, app)
            self.arrival_log.append((arrival.submission_id, arrival.k, now))
            for node in app.prototype.head_nodes():
                self._push_ready(instance, app, node, now)

    def _resolve_app(self, source: str, base_dir: str) -> _CachedApp:
        if source in self._apps:
            return self._apps[source]
        if os.path.isfile(source):
            with open(source) as fh:
                text = fh.read()
        else:
            text = source
        prototype = model.parse_application(text)
        if prototype.app_name in self._apps:
            cached = self._apps[prototype.app_name]
            self._apps.setdefault(source, cached)
            return cached
        report = model.validate_prototype(prototype)
        if not report.clean:
            raise RejectedSubmission(
                f"{prototype.app_name}: validation failed: {report}"
            )
        app = _CachedApp(prototype, base_dir, scheduling.upward_ranks(prototype))
        self._apps[prototype.app_name] = app
        if source != prototype.app_name:
            self._apps[source] = app
        return app

    def _push_ready(self, instance: model.ApplicationInstance, app: _CachedApp,
                    node: str, now: int) -> None:
        spec = app.prototype.dag[node]
        instance.task_states[node] = model.TaskState.READY
        arg_bytes = sum(len(instance.variable_store[v]) for v in spec.arguments)
        self._ready.append(
            scheduling.ReadyTask(
                instance_id=instance.instance_id,
                node=node,
                app_name=app.prototype.app_name,
                options=spec.platforms,
                enqueue_time=now,
                seq=next(self._next_seq),
                rank_u=app.ranks[node],
                arg_bytes=arg_bytes,
            )
        )

    # ------------------------------------------------------------------
    # scheduling & dispatch
    # ------------------------------------------------------------------

    def _schedule_round(self) -> None:
        now = now_us()
        avail = self.pool.availability_map(now)
        t0 = now_us()
        result = self.scheduler.schedule(
            list(self._ready), self.pool.descriptors, avail, now
        )
        t1 = now_us()
        self.recorder.sched(
            SchedRow(t0, t1, len(self._ready), len(result.assignments))
        )
        for task in result.incompatible:
            live = self._instances.get(task.instance_id)
            if live is not None:
                log.warning("no compatible PE for %s/%s; failing instance",
                            task.app_name, task.node)
                self._fail_instance(live, f"no compatible PE for {task.node}")

        dispatched: set[tuple[int, str]] = set()
        for a in result.assignments:
            live = self._instances.get(a.instance_id)
            if live is None:
                continue
            try:
                self._dispatch(live, a)
            except WorkQueueFull:
                continue  # stays in the ready queue, retried next round
            dispatched.add((a.instance_id, a.node))
        self._ready = [
            t for t in self._ready
            if t.key not in dispatched and t.instance_id in self._instances
        ]

    def _dispatch(self, live: _LiveInstance, a: scheduling.TaskAssignment) -> None:
        instance, app = live.instance, live.app
        if not instance.predecessors_completed(a.node):
            raise DependencyOrderError(
                f"{app.prototype.app_name}/{a.node} dispatched before predecessors"
            )
        spec = app.prototype.dag[a.node]
        lib_path = a.entry.shared_object or app.prototype.shared_object
        if not os.path.isabs(lib_path):
            lib_path = os.path.join(app.base_dir, lib_path)
        func = plugins.resolve_task_function(
            plugins.load_task_library(lib_path), a.entry.runfunc
        )
        buffers = [instance.variable_store[v] for v in spec.arguments]
        self.pool.enqueue_to_pe(a, func, buffers, arity=len(spec.arguments))
        instance.task_states[a.node] = model.TaskState.DISPATCHED
        live.outstanding += 1

    # ------------------------------------------------------------------
    # completions
    # ------------------------------------------------------------------

    def handle_completion(self, rec: CompletionRecord) -> None:
        live = self._instances.get(rec.instance_id)
        if live is None or rec.node not in live.instance.task_states:
            log.warning("completion for unknown task %s#%s", rec.instance_id, rec.node)
            return
        instance, app = live.instance, live.app
        live.outstanding -= 1
        instance.task_states[rec.node] = model.TaskState.COMPLETED
        if instance.first_task_start is None or rec.start < instance.first_task_start:
            instance.first_task_start = rec.start
        if instance.last_task_end is None or rec.end > instance.last_task_end:
            instance.last_task_end = rec.end
        entry = rec.assignment.entry if rec.assignment is not None else None
        self.recorder.task(
            TaskRow(
                app_name=app.prototype.app_name,
                instance_id=rec.instance_id,
                node=rec.node,
                pe_id=rec.pe_id,
                resource_type=entry.resource_type if entry else "?",
                start=rec.start,
                end=rec.end,
                counters=rec.counters,
                status=rec.status,
            )
        )
        if rec.status != 0:
            self._fail_instance(live, rec.error or f"task {rec.node} failed")
            return
        if instance.failed:
            if live.outstanding == 0:
                self._finalize(live)
            return
        now = now_us()
        for succ in app.prototype.dag[rec.node].successors:
            if (
                instance.task_states[succ.name] is model.TaskState.WAITING
                and instance.predecessors_completed(succ.name)
            ):
                self._push_ready(instance, app, succ.name, now)
        if instance.all_completed():
            self._finalize(live)

    def _fail_instance(self, live: _LiveInstance, reason: str) -> None:
        live.instance.failed = True
        live.instance.fail_reason = reason
        self._ready = [
            t for t in self._ready if t.instance_id != live.instance.instance_id
        ]
        if live.outstanding == 0:
            self._finalize(live)

    def _finalize(self, live: _LiveInstance) -> None:
        instance, app = live.instance, live.app
        self.recorder.app(
            AppRow(
                app_name=app.prototype.app_name,
                instance_id=instance.instance_id,
                arrival=instance.arrival_time,
                first_start=instance.first_task_start or instance.arrival_time,
                last_end=instance.last_task_end or instance.arrival_time,
                failed=instance.failed,
            )
        )
        if self.capture_outputs and not instance.failed:
            self.outputs[(app.prototype.app_name, instance.instance_id)] = {
                name: bytes(buf) for name, buf in instance.variable_store.items()
            }
        instance.variable_store.clear()
        del self._instances[instance.instance_id]
        self.finalized_count += 1

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------

    @property
    def live_instance_count(self) -> int:
        return len(self._instances)

    @property
    def scheduler_total_us(self) -> float:
        return self.scheduler.total_us

    @property
    def scheduler_name(self) -> str:
        return self.scheduler.name


def execute_standalone(
    prototype: model.ApplicationPrototype, base_dir: str = "."
) -> dict[str, bytes]:
    """Serial reference execution: run every task's first platform entry in
    topological order on a fresh instance and return the final variable store.
    Used as the output-equivalence oracle for runtime executions.
    """
    instance = model.instantiate(prototype, 0, 0)
    for node in model.topological_order(prototype):
        spec = prototype.dag[node]
        entry = spec.platforms[0]
        lib_path = entry.shared_object or prototype.shared_object
        if not os.path.isabs(lib_path):
            lib_path = os.path.join(base_dir, lib_path)
        func = plugins.resolve_task_function(
            plugins.load_task_library(lib_path), entry.runfunc
        )
        buffers = [instance.variable_store[v] for v in spec.arguments]
        status = plugins.invoke_task(func, buffers, len(spec.arguments))
        if status != 0:
            raise DagrtError(f"standalone task {node} returned {status}")
    return {name: bytes(buf) for name, buf in instance.variable_store.items()}
