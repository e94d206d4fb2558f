"""Scheduling heuristics mapping ready tasks to processing elements.

Five policies are provided -- SIMPLE (round robin), MET, EFT, ETF, and
HEFT_RT -- plus a caching wrapper that memoizes task-to-resource-type
decisions keyed by (application, node).  All schedulers share one contract:

    schedule(ready, pes, avail, now) -> ScheduleResult

where ``ready`` is FIFO by enqueue order, ``avail`` maps pe_id to the
estimated time the PE becomes free, and every returned assignment pairs a
task option with a PE of the matching resource type.  Tasks with no
compatible PE in the pool come back in ``incompatible``.  Tie-breaking is a
documented total order per heuristic so traces are reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from .model import ApplicationPrototype, PlatformEntry
from .pes import PEDescriptor


@dataclass
class ReadyTask:
    instance_id: int
    node: str
    app_name: str
    options: tuple[PlatformEntry, ...]
    enqueue_time: int
    seq: int
    rank_u: float = 0.0
    arg_bytes: int = 0

    @property
    def key(self) -> tuple[int, str]:
        return (self.instance_id, self.node)

    def option_for(self, resource_type: str) -> Optional[PlatformEntry]:
        for entry in self.options:
            if entry.resource_type == resource_type:
                return entry
        return None

    def types(self) -> set[str]:
        return {e.resource_type for e in self.options}


@dataclass
class TaskAssignment:
    instance_id: int
    node: str
    pe_id: int
    entry: PlatformEntry
    predicted_start: float
    predicted_finish: float


@dataclass
class ScheduleResult:
    assignments: list[TaskAssignment] = field(default_factory=list)
    incompatible: list[ReadyTask] = field(default_factory=list)


def service_cost(entry: PlatformEntry, pe: PEDescriptor, arg_bytes: int) -> float:
    cost = entry.nodecost
    if pe.synthetic_delay_model is not None:
        cost += pe.synthetic_delay_model.delay_us(arg_bytes)
    return cost


def _assign(task: ReadyTask, pe: PEDescriptor, entry: PlatformEntry,
            start: float) -> TaskAssignment:
    return TaskAssignment(
        instance_id=task.instance_id,
        node=task.node,
        pe_id=pe.pe_id,
        entry=entry,
        predicted_start=start,
        predicted_finish=start + entry.nodecost
        + (pe.synthetic_delay_model.delay_us(task.arg_bytes)
           if pe.synthetic_delay_model else 0.0),
    )


class RoundRobinScheduler:
    """SIMPLE policy: tasks in FIFO order, PEs in a global circular order.

    The cursor persists across rounds; PEs whose type supports none of the
    task's options are skipped.
    """

    name = "SIMPLE"

    def __init__(self):
        self._cursor = 0

    def schedule(self, ready, pes, avail, now) -> ScheduleResult:
        result = ScheduleResult()
        avail = dict(avail)
        pes = sorted(pes, key=lambda p: p.pe_id)
        n = len(pes)
        for task in ready:
            types = task.types()
            chosen = None
            for step in range(n):
                idx = (self._cursor + step) % n
                if pes[idx].resource_type in types:
                    chosen = idx
                    break
            if chosen is None:
                result.incompatible.append(task)
                continue
            pe = pes[chosen]
            entry = task.option_for(pe.resource_type)
            start = max(avail[pe.pe_id], now)
            a = _assign(task, pe, entry, start)
            avail[pe.pe_id] = a.predicted_finish
            result.assignments.append(a)
            self._cursor = (chosen + 1) % n
        return result


class METScheduler:
    """Minimum execution time: pick the resource type with the lowest
    nodecost (ties: lexicographically lowest type name), then the PE of that
    type with the lowest estimated availability (ties: lowest pe_id).
    """

    name = "MET"

    def schedule(self, ready, pes, avail, now) -> ScheduleResult:
        result = ScheduleResult()
        avail = dict(avail)
        by_type: dict[str, list[PEDescriptor]] = {}
        for pe in pes:
            by_type.setdefault(pe.resource_type, []).append(pe)
        for task in ready:
            options = [e for e in task.options if e.resource_type in by_type]
            if not options:
                result.incompatible.append(task)
                continue
            entry = min(options, key=lambda e: (e.nodecost, e.resource_type))
            pe = min(
                by_type[entry.resource_type],
                key=lambda p: (avail[p.pe_id], p.pe_id),
            )
            start = max(avail[pe.pe_id], now)
            a = _assign(task, pe, entry, start)
            avail[pe.pe_id] = a.predicted_finish
            result.assignments.append(a)
        return result


class EFTScheduler:
    """Earliest finish time: tasks in FIFO order, each placed at the queue
    tail of the compatible PE minimizing availability + cost (ties: lowest
    pe_id); availability is updated between assignments within the round.
    """

    name = "EFT"

    def schedule(self, ready, pes, avail, now) -> ScheduleResult:
        result = ScheduleResult()
        avail = dict(avail)
        for task in ready:
            best = None
            for pe in pes:
                entry = task.option_for(pe.resource_type)
                if entry is None:
                    continue
                start = max(avail[pe.pe_id], now)
                finish = start + service_cost(entry, pe, task.arg_bytes)
                cand = (finish, pe.pe_id, pe, entry, start)
                if best is None or cand[:2] < best[:2]:
                    best = cand
            if best is None:
                result.incompatible.append(task)
                continue
            _, _, pe, entry, start = best
            a = _assign(task, pe, entry, start)
            avail[pe.pe_id] = a.predicted_finish
            result.assignments.append(a)
        return result


class ETFScheduler:
    """Earliest task first: globally greedy over all (task, PE) pairs.

    Each iteration commits the pair with the minimal finish time; ties break
    by earlier enqueue_time, then enqueue sequence, then lowest pe_id.  The
    number of pair evaluations per round is quadratic in the ready count,
    which is the whole point of pairing it with the schedule cache.
    """

    name = "ETF"

    def __init__(self):
        self.last_eval_count = 0

    def schedule(self, ready, pes, avail, now) -> ScheduleResult:
        result = ScheduleResult()
        avail = dict(avail)
        pending = []
        for task in ready:
            if any(task.option_for(pe.resource_type) for pe in pes):
                pending.append(task)
            else:
                result.incompatible.append(task)
        evals = 0
        while pending:
            best = None
            for task in pending:
                for pe in pes:
                    entry = task.option_for(pe.resource_type)
                    if entry is None:
                        continue
                    evals += 1
                    start = max(avail[pe.pe_id], now)
                    finish = start + service_cost(entry, pe, task.arg_bytes)
                    key = (finish, task.enqueue_time, task.seq, pe.pe_id)
                    if best is None or key < best[0]:
                        best = (key, task, pe, entry, start)
            _, task, pe, entry, start = best
            a = _assign(task, pe, entry, start)
            avail[pe.pe_id] = a.predicted_finish
            result.assignments.append(a)
            pending.remove(task)
        self.last_eval_count = evals
        return result


class HEFTRTScheduler:
    """Runtime HEFT: ready tasks ordered by descending upward rank, each
    placed by insertion-based earliest finish over the slots left by the
    assignments already committed this round (ties: lowest pe_id; equal
    ranks fall back to enqueue sequence).
    """

    name = "HEFT_RT"

    def schedule(self, ready, pes, avail, now) -> ScheduleResult:
        result = ScheduleResult()
        # per-PE busy intervals within this round, seeded by current load
        busy: dict[int, list[tuple[float, float]]] = {}
        for pe in pes:
            base = max(avail[pe.pe_id], now)
            busy[pe.pe_id] = [(now, base)] if base > now else []
        ordered = sorted(ready, key=lambda t: (-t.rank_u, t.seq))
        for task in ordered:
            best = None
            for pe in pes:
                entry = task.option_for(pe.resource_type)
                if entry is None:
                    continue
                dur = service_cost(entry, pe, task.arg_bytes)
                start = _earliest_slot(busy[pe.pe_id], now, dur)
                cand = (start + dur, pe.pe_id, pe, entry, start)
                if best is None or cand[:2] < best[:2]:
                    best = cand
            if best is None:
                result.incompatible.append(task)
                continue
            finish, _, pe, entry, start = best
            _insert_interval(busy[pe.pe_id], (start, finish))
            result.assignments.append(_assign(task, pe, entry, start))
        return result


def _earliest_slot(intervals: list[tuple[float, float]], est: float,
                   dur: float) -> float:
    """Earliest start >= est of a gap of length dur between busy intervals."""
    cursor = est
    for start, end in intervals:
        if start - cursor >= dur:
            return cursor
        cursor = max(cursor, end)
    return cursor


def _insert_interval(intervals: list[tuple[float, float]],
                     item: tuple[float, float]) -> None:
    intervals.append(item)
    intervals.sort()


# ---------------------------------------------------------------------------
# upward ranks
# ---------------------------------------------------------------------------


def upward_ranks(p: ApplicationPrototype) -> dict[str, float]:
    """rank(n) = mean nodecost over n's platforms
               + max over successors s of (edgecost(n, s) + rank(s)).

    Computed once per prototype in reverse topological order; edge costs are
    consumed only here.
    """
    from .model import topological_order

    ranks: dict[str, float] = {}
    for node in reversed(topological_order(p)):
        spec = p.dag[node]
        mean_cost = sum(e.nodecost for e in spec.platforms) / len(spec.platforms)
        succ_term = 0.0
        for edge in spec.successors:
            succ_term = max(succ_term, edge.edgecost + ranks[edge.name])
        ranks[node] = mean_cost + succ_term
    return ranks


# ---------------------------------------------------------------------------
# schedule caching
# ---------------------------------------------------------------------------


@dataclass
class ScheduleCache:
    entries: dict[tuple[str, str], str] = field(default_factory=dict)
    hits: int = 0
    misses: int = 0

    def lookup(self, app_name: str, node: str) -> Optional[str]:
        return self.entries.get((app_name, node))

    def store(self, app_name: str, node: str, resource_type: str) -> None:
        # no eviction: the map is unbounded by design
        self.entries[(app_name, node)] = resource_type


class CachedScheduler:
    """Wraps a heuristic with the schedule cache.

    Cache hits are assigned to the least-loaded PE of the cached resource
    type without consulting the inner heuristic; misses are deferred to it
    in one batch and the chosen types are stored afterwards.  Hits whose
    cached type is absent from the current pool (or from the task's own
    options) fall through to the inner heuristic.
    """

    def __init__(self, inner, cache: Optional[ScheduleCache] = None):
        self.inner = inner
        self.cache = cache or ScheduleCache()
        self.inner_calls = 0

    @property
    def name(self) -> str:
        return f"{self.inner.name}(cached)"

    def schedule(self, ready, pes, avail, now) -> ScheduleResult:
        avail = dict(avail)
        by_type: dict[str, list[PEDescriptor]] = {}
        for pe in pes:
            by_type.setdefault(pe.resource_type, []).append(pe)
        result = ScheduleResult()
        misses = []
        for task in ready:
            cached_type = self.cache.lookup(task.app_name, task.node)
            entry = task.option_for(cached_type) if cached_type else None
            if entry is None or cached_type not in by_type:
                misses.append(task)
                continue
            self.cache.hits += 1
            pe = min(by_type[cached_type], key=lambda p: (avail[p.pe_id], p.pe_id))
            start = max(avail[pe.pe_id], now)
            a = _assign(task, pe, entry, start)
            avail[pe.pe_id] = a.predicted_finish
            result.assignments.append(a)
        if misses:
            self.cache.misses += len(misses)
            self.inner_calls += 1
            inner_result = self.inner.schedule(misses, pes, avail, now)
            for a in inner_result.assignments:
                self.cache.store(_app_of(misses, a), a.node, a.entry.resource_type)
            result.assignments.extend(inner_result.assignments)
            result.incompatible.extend(inner_result.incompatible)
        return result


def _app_of(tasks: list[ReadyTask], a: TaskAssignment) -> str:
    for t in tasks:
        if t.instance_id == a.instance_id and t.node == a.node:
            return t.app_name
    return ""


# ---------------------------------------------------------------------------
# construction and timing
# ---------------------------------------------------------------------------

SCHEDULER_NAMES = ("SIMPLE", "MET", "EFT", "ETF", "HEFT_RT")


def make_scheduler(name: str, cached: bool = False):
    table = {
        "SIMPLE": RoundRobinScheduler,
        "RR": RoundRobinScheduler,
        "MET": METScheduler,
        "EFT": EFTScheduler,
        "ETF": ETFScheduler,
        "HEFT_RT": HEFTRTScheduler,
    }
    key = name.upper()
    if key not in table:
        raise ValueError(f"unknown scheduler {name!r}")
    scheduler = table[key]()
    if cached:
        scheduler = CachedScheduler(scheduler)
    return scheduler


class TimedScheduler:
    """Decorator measuring wall-clock time spent inside schedule()."""

    def __init__(self, inner):
        self.inner = inner
        self.total_us = 0.0
        self.invocations = 0

    @property
    def name(self) -> str:
        return self.inner.name

    def schedule(self, ready, pes, avail, now) -> ScheduleResult:
        t0 = time.perf_counter()
        result = self.inner.schedule(ready, pes, avail, now)
        self.total_us += (time.perf_counter() - t0) * 1e6
        self.invocations += 1
        return result
