"""Userspace runtime for DAG applications on emulated heterogeneous PEs."""

from .errors import DagrtError
from .model import (
    ApplicationInstance,
    ApplicationPrototype,
    TaskState,
    instantiate,
    parse_application,
    serialize_prototype,
    topological_order,
    validate_prototype,
)
from .pes import (
    DEFAULT_QUEUE_DEPTH,
    DelayModel,
    PEDescriptor,
    WorkerPool,
    load_hardware_config,
    standard_config,
)
from .plugins import load_task_library, resolve_task_function
from .runtime import Runtime, execute_standalone
from .scheduling import (
    SCHEDULER_NAMES,
    CachedScheduler,
    ScheduleCache,
    make_scheduler,
    upward_ranks,
)
from .streams import configure_stream, execute_stream_reference, run_stream
from .sweep import SweepConfig, run_one, run_sweep
from .telemetry import (
    CounterSet,
    MetricsReport,
    RunTrace,
    TraceRecorder,
    compute_metrics,
    derive_injection_period,
    export_gantt_svg,
    export_trace_csv,
    get_counter_provider,
)
from .workloads import TEMPLATES, WorkloadSpec, generate_reference_workload

__version__ = "0.1.0"

__all__ = [
    "ApplicationInstance",
    "ApplicationPrototype",
    "CachedScheduler",
    "CounterSet",
    "DagrtError",
    "DEFAULT_QUEUE_DEPTH",
    "DelayModel",
    "MetricsReport",
    "PEDescriptor",
    "Runtime",
    "RunTrace",
    "SCHEDULER_NAMES",
    "ScheduleCache",
    "SweepConfig",
    "TEMPLATES",
    "TaskState",
    "TraceRecorder",
    "WorkerPool",
    "WorkloadSpec",
    "compute_metrics",
    "configure_stream",
    "derive_injection_period",
    "execute_standalone",
    "execute_stream_reference",
    "export_gantt_svg",
    "export_trace_csv",
    "generate_reference_workload",
    "get_counter_provider",
    "instantiate",
    "load_hardware_config",
    "load_task_library",
    "make_scheduler",
    "parse_application",
    "resolve_task_function",
    "run_one",
    "run_stream",
    "run_sweep",
    "serialize_prototype",
    "standard_config",
    "topological_order",
    "upward_ranks",
    "validate_prototype",
]
