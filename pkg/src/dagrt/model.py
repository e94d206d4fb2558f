"""Application model: the JSON DAG format, validation, and instantiation.

An application document has four top-level keys -- ``AppName``,
``SharedObject``, ``Variables``, and ``DAG`` -- plus an optional
``Streaming`` block for pipelined applications.  Parsed documents become
immutable :class:`ApplicationPrototype` objects that are cached by name and
instantiated per submission; every instantiation allocates a fresh set of
variable buffers, so instances never alias memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from .errors import AllocationFailure, MalformedJson, MissingKey, TypeMismatch

_TOP_KEYS = {"AppName", "SharedObject", "Variables", "DAG", "Streaming"}
_VAR_KEYS = {"bytes", "is_ptr", "ptr_alloc_bytes", "val"}
_NODE_KEYS = {"arguments", "predecessors", "successors", "platforms"}
_PLATFORM_KEYS = {"name", "runfunc", "nodecost", "shared_object"}
_EDGE_KEYS = {"name", "edgecost"}
_STREAM_KEYS = {"frames_source", "channels"}


@dataclass(frozen=True)
class VariableSpec:
    name: str
    bytes: int
    is_ptr: bool
    ptr_alloc_bytes: int
    init_val: tuple[int, ...]


@dataclass(frozen=True)
class PlatformEntry:
    """One resource-specific implementation of a task node.

    ``shared_object`` overrides the application-level library when set;
    ``nodecost`` is the expected service time in microseconds.
    """

    resource_type: str
    runfunc: str
    nodecost: float
    shared_object: Optional[str] = None


@dataclass(frozen=True)
class EdgeRef:
    name: str
    edgecost: float


@dataclass(frozen=True)
class TaskNodeSpec:
    name: str
    arguments: tuple[str, ...]
    predecessors: tuple[EdgeRef, ...]
    successors: tuple[EdgeRef, ...]
    platforms: tuple[PlatformEntry, ...]

    def platform_for(self, resource_type: str) -> Optional[PlatformEntry]:
        for entry in self.platforms:
            if entry.resource_type == resource_type:
                return entry
        return None


@dataclass(frozen=True)
class StreamingSpec:
    frames_source: Optional[str]
    # channel byte sizes keyed "producer->consumer"; edges without an entry
    # fall back to DEFAULT_CHANNEL_BYTES
    channels: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class ApplicationPrototype:
    app_name: str
    shared_object: str
    variables: dict[str, VariableSpec]
    dag: dict[str, TaskNodeSpec]
    streaming: Optional[StreamingSpec] = None

    def head_nodes(self) -> list[str]:
        return [n for n, spec in self.dag.items() if not spec.predecessors]

    def tail_nodes(self) -> list[str]:
        return [n for n, spec in self.dag.items() if not spec.successors]

    def edges(self) -> list[tuple[str, str, float]]:
        out = []
        for name, spec in self.dag.items():
            for succ in spec.successors:
                out.append((name, succ.name, succ.edgecost))
        return out


class TaskState(Enum):
    WAITING = "waiting"
    READY = "ready"
    DISPATCHED = "dispatched"
    RUNNING = "running"
    COMPLETED = "completed"


@dataclass
class ApplicationInstance:
    instance_id: int
    prototype: ApplicationPrototype
    variable_store: dict[str, bytearray]
    task_states: dict[str, TaskState]
    arrival_time: int
    first_task_start: Optional[int] = None
    last_task_end: Optional[int] = None
    failed: bool = False
    fail_reason: str = ""

    def all_completed(self) -> bool:
        return all(s is TaskState.COMPLETED for s in self.task_states.values())

    def predecessors_completed(self, node: str) -> bool:
        spec = self.prototype.dag[node]
        return all(
            self.task_states[p.name] is TaskState.COMPLETED for p in spec.predecessors
        )


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise MalformedJson(f"duplicate key {key!r}")
        seen[key] = value
    return seen


def _require(obj: dict, key: str, path: str) -> Any:
    if key not in obj:
        raise MissingKey(f"{path}.{key}" if path else key)
    return obj[key]


def _check_keys(obj: dict, allowed: set, path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise TypeMismatch(f"{path}.{key}" if path else key, "unknown key")


def _as_str(value, path: str, allow_empty: bool = True) -> str:
    if not isinstance(value, str):
        raise TypeMismatch(path, f"expected string, got {type(value).__name__}")
    if not allow_empty and not value:
        raise TypeMismatch(path, "must be non-empty")
    return value


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeMismatch(path, f"expected number, got {type(value).__name__}")
    return float(value)


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeMismatch(path, f"expected integer, got {type(value).__name__}")
    return value


def _parse_variable(name: str, obj, path: str) -> VariableSpec:
    if not isinstance(obj, dict):
        raise TypeMismatch(path, "expected object")
    _check_keys(obj, _VAR_KEYS, path)
    nbytes = _as_int(_require(obj, "bytes", path), f"{path}.bytes")
    if nbytes <= 0:
        raise TypeMismatch(f"{path}.bytes", "must be > 0")
    is_ptr = _require(obj, "is_ptr", path)
    if not isinstance(is_ptr, bool):
        raise TypeMismatch(f"{path}.is_ptr", "expected boolean")
    alloc = _as_int(_require(obj, "ptr_alloc_bytes", path), f"{path}.ptr_alloc_bytes")
    if is_ptr:
        if alloc < 0:
            raise TypeMismatch(f"{path}.ptr_alloc_bytes", "must be >= 0")
    elif alloc != 0:
        raise TypeMismatch(f"{path}.ptr_alloc_bytes", "must be 0 for non-pointers")
    val = _require(obj, "val", path)
    if not isinstance(val, list) or not all(
        isinstance(b, int) and not isinstance(b, bool) and 0 <= b < 256 for b in val
    ):
        raise TypeMismatch(f"{path}.val", "expected list of bytes")
    if is_ptr:
        # initial values are only defined for scalar slots
        if val:
            raise TypeMismatch(f"{path}.val", "pointer variables cannot carry val")
    elif len(val) not in (0, nbytes):
        raise TypeMismatch(f"{path}.val", f"length must be 0 or {nbytes}")
    return VariableSpec(name, nbytes, is_ptr, alloc, tuple(val))


def _parse_platform(obj, path: str) -> PlatformEntry:
    if not isinstance(obj, dict):
        raise TypeMismatch(path, "expected object")
    _check_keys(obj, _PLATFORM_KEYS, path)
    rtype = _as_str(_require(obj, "name", path), f"{path}.name", allow_empty=False)
    runfunc = _as_str(
        _require(obj, "runfunc", path), f"{path}.runfunc", allow_empty=False
    )
    nodecost = _as_number(_require(obj, "nodecost", path), f"{path}.nodecost")
    if nodecost <= 0:
        raise TypeMismatch(f"{path}.nodecost", "must be > 0")
    override = obj.get("shared_object")
    if override is not None:
        override = _as_str(override, f"{path}.shared_object", allow_empty=False)
    return PlatformEntry(rtype, runfunc, nodecost, override)


def _parse_edge_list(value, path: str) -> tuple[EdgeRef, ...]:
    if not isinstance(value, list):
        raise TypeMismatch(path, "expected list")
    refs = []
    for i, obj in enumerate(value):
        epath = f"{path}[{i}]"
        if not isinstance(obj, dict):
            raise TypeMismatch(epath, "expected object")
        _check_keys(obj, _EDGE_KEYS, epath)
        name = _as_str(_require(obj, "name", epath), f"{epath}.name", allow_empty=False)
        cost = _as_number(_require(obj, "edgecost", epath), f"{epath}.edgecost")
        refs.append(EdgeRef(name, cost))
    return tuple(refs)


def _parse_node(name: str, obj, path: str) -> TaskNodeSpec:
    if not isinstance(obj, dict):
        raise TypeMismatch(path, "expected object")
    _check_keys(obj, _NODE_KEYS, path)
    args = _require(obj, "arguments", path)
    if not isinstance(args, list) or not all(isinstance(a, str) for a in args):
        raise TypeMismatch(f"{path}.arguments", "expected list of variable names")
    preds = _parse_edge_list(_require(obj, "predecessors", path), f"{path}.predecessors")
    succs = _parse_edge_list(_require(obj, "successors", path), f"{path}.successors")
    platforms_raw = _require(obj, "platforms", path)
    if not isinstance(platforms_raw, list):
        raise TypeMismatch(f"{path}.platforms", "expected list")
    if not platforms_raw:
        raise TypeMismatch(f"{path}.platforms", "at least one platform is required")
    platforms = tuple(
        _parse_platform(p, f"{path}.platforms[{i}]")
        for i, p in enumerate(platforms_raw)
    )
    seen_types = set()
    for entry in platforms:
        if entry.resource_type in seen_types:
            raise TypeMismatch(
                f"{path}.platforms", f"duplicate resource type {entry.resource_type!r}"
            )
        seen_types.add(entry.resource_type)
    return TaskNodeSpec(name, tuple(args), preds, succs, platforms)


def _parse_streaming(obj, path: str) -> StreamingSpec:
    if not isinstance(obj, dict):
        raise TypeMismatch(path, "expected object")
    _check_keys(obj, _STREAM_KEYS, path)
    source = obj.get("frames_source")
    if source is not None:
        source = _as_str(source, f"{path}.frames_source")
    channels_raw = obj.get("channels", {})
    if not isinstance(channels_raw, dict):
        raise TypeMismatch(f"{path}.channels", "expected object")
    channels = {}
    for edge, size in channels_raw.items():
        size = _as_int(size, f"{path}.channels.{edge}")
        if size <= 0:
            raise TypeMismatch(f"{path}.channels.{edge}", "must be > 0")
        channels[edge] = size
    return StreamingSpec(source, channels)


def parse_application(json_text: str) -> ApplicationPrototype:
    """Parse an application document into a prototype.

    Structural problems (bad types, unknown keys, empty platform lists) raise
    immediately with the first offending JSON path; graph-level consistency is
    checked separately by :func:`validate_prototype`.
    """
    try:
        doc = json.loads(json_text, object_pairs_hook=_reject_duplicates)
    except MalformedJson:
        raise
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(doc, dict):
        raise TypeMismatch("", "top level must be an object")
    _check_keys(doc, _TOP_KEYS, "")
    app_name = _as_str(_require(doc, "AppName", ""), "AppName", allow_empty=False)
    shared_object = _as_str(_require(doc, "SharedObject", ""), "SharedObject")
    variables_raw = _require(doc, "Variables", "")
    if not isinstance(variables_raw, dict):
        raise TypeMismatch("Variables", "expected object")
    variables = {
        name: _parse_variable(name, obj, f"Variables.{name}")
        for name, obj in variables_raw.items()
    }
    dag_raw = _require(doc, "DAG", "")
    if not isinstance(dag_raw, dict):
        raise TypeMismatch("DAG", "expected object")
    if not dag_raw:
        raise TypeMismatch("DAG", "must contain at least one node")
    dag = {
        name: _parse_node(name, obj, f"DAG.{name}") for name, obj in dag_raw.items()
    }
    streaming = None
    if "Streaming" in doc:
        streaming = _parse_streaming(doc["Streaming"], "Streaming")
    return ApplicationPrototype(app_name, shared_object, variables, dag, streaming)


def serialize_prototype(p: ApplicationPrototype) -> str:
    """Render a prototype back to its JSON document form."""
    doc: dict[str, Any] = {
        "AppName": p.app_name,
        "SharedObject": p.shared_object,
        "Variables": {
            v.name: {
                "bytes": v.bytes,
                "is_ptr": v.is_ptr,
                "ptr_alloc_bytes": v.ptr_alloc_bytes,
                "val": list(v.init_val),
            }
            for v in p.variables.values()
        },
        "DAG": {},
    }
    for name, node in p.dag.items():
        platforms = []
        for entry in node.platforms:
            obj = {
                "name": entry.resource_type,
                "runfunc": entry.runfunc,
                "nodecost": entry.nodecost,
            }
            if entry.shared_object is not None:
                obj["shared_object"] = entry.shared_object
            platforms.append(obj)
        doc["DAG"][name] = {
            "arguments": list(node.arguments),
            "predecessors": [
                {"name": e.name, "edgecost": e.edgecost} for e in node.predecessors
            ],
            "successors": [
                {"name": e.name, "edgecost": e.edgecost} for e in node.successors
            ],
            "platforms": platforms,
        }
    if p.streaming is not None:
        doc["Streaming"] = {
            "frames_source": p.streaming.frames_source,
            "channels": dict(p.streaming.channels),
        }
    return json.dumps(doc, indent=2)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, kind: str, detail: str) -> None:
        self.violations.append(Violation(kind, detail))

    @property
    def clean(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.clean:
            return "ok"
        return "\n".join(f"{v.kind}: {v.detail}" for v in self.violations)


def _find_cycle(dag: dict[str, TaskNodeSpec]) -> Optional[list[str]]:
    """Return a witness path [a, ..., a] if the successor graph has a cycle."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in dag}
    stack: list[str] = []

    def visit(node: str) -> Optional[list[str]]:
        color[node] = GREY
        stack.append(node)
        for succ in dag[node].successors:
            nxt = succ.name
            if nxt not in dag:
                continue
            if color[nxt] == GREY:
                i = stack.index(nxt)
                return stack[i:] + [nxt]
            if color[nxt] == WHITE:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        color[node] = BLACK
        return None

    for node in dag:
        if color[node] == WHITE:
            found = visit(node)
            if found:
                return found
    return None


def validate_prototype(p: ApplicationPrototype) -> ValidationReport:
    """Check graph-level consistency; an empty report means runnable."""
    report = ValidationReport()

    for name, node in p.dag.items():
        for arg in node.arguments:
            if arg not in p.variables:
                report.add("dangling-variable", f"{name} references undeclared {arg!r}")
        for edge in node.predecessors:
            if edge.name not in p.dag:
                report.add("dangling-node", f"{name} lists unknown predecessor {edge.name!r}")
        for edge in node.successors:
            if edge.name not in p.dag:
                report.add("dangling-node", f"{name} lists unknown successor {edge.name!r}")

    # predecessor/successor symmetry, with matching edgecost
    for name, node in p.dag.items():
        for edge in node.successors:
            other = p.dag.get(edge.name)
            if other is None:
                continue
            back = next((e for e in other.predecessors if e.name == name), None)
            if back is None:
                report.add(
                    "asymmetric-edge",
                    f"{name} lists {edge.name} as successor but not vice versa",
                )
            elif back.edgecost != edge.edgecost:
                report.add(
                    "edgecost-mismatch",
                    f"{name}->{edge.name}: {edge.edgecost} vs {back.edgecost}",
                )
        for edge in node.predecessors:
            other = p.dag.get(edge.name)
            if other is None:
                continue
            fwd = next((e for e in other.successors if e.name == name), None)
            if fwd is None:
                report.add(
                    "asymmetric-edge",
                    f"{name} lists {edge.name} as predecessor but not vice versa",
                )

    cycle = _find_cycle(p.dag)
    if cycle is not None:
        report.add("cycle", " -> ".join(cycle))
    else:
        if not p.head_nodes():
            report.add("no-head-node", "no node with empty predecessors")
        if not p.tail_nodes():
            report.add("no-tail-node", "no node with empty successors")
    return report


def topological_order(p: ApplicationPrototype) -> list[str]:
    """Kahn's algorithm over the successor edges; requires a clean prototype."""
    indeg = {n: len(spec.predecessors) for n, spec in p.dag.items()}
    frontier = [n for n, d in indeg.items() if d == 0]
    order = []
    while frontier:
        node = frontier.pop(0)
        order.append(node)
        for succ in p.dag[node].successors:
            indeg[succ.name] -= 1
            if indeg[succ.name] == 0:
                frontier.append(succ.name)
    if len(order) != len(p.dag):
        raise ValueError("prototype contains a cycle")
    return order


# ---------------------------------------------------------------------------
# instantiation
# ---------------------------------------------------------------------------


def instantiate(
    p: ApplicationPrototype, instance_id: int, now: int
) -> ApplicationInstance:
    """Materialize the variable store and initial task states for one submission."""
    store: dict[str, bytearray] = {}
    for name, spec in p.variables.items():
        size = spec.ptr_alloc_bytes if spec.is_ptr else spec.bytes
        try:
            buf = bytearray(size)
        except MemoryError as exc:
            raise AllocationFailure(name, str(exc)) from exc
        if spec.init_val:
            buf[: len(spec.init_val)] = bytes(spec.init_val)
        store[name] = buf
    heads = set(p.head_nodes())
    states = {
        n: (TaskState.READY if n in heads else TaskState.WAITING) for n in p.dag
    }
    return ApplicationInstance(
        instance_id=instance_id,
        prototype=p,
        variable_store=store,
        task_states=states,
        arrival_time=now,
    )
