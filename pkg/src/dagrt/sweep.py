"""Experiment sweeps: run a matrix of configurations and emit one CSV row
per (hardware, scheduler, workload, injection rate, repetition) cell."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import IoError
from .pes import DEFAULT_QUEUE_DEPTH, PEDescriptor, WorkerPool
from .runtime import Runtime
from .scheduling import make_scheduler
from .telemetry import (
    MetricsReport,
    RunMeta,
    TraceRecorder,
    compute_metrics,
    derive_injection_period,
)
from .workloads import WorkloadSpec

SWEEP_CSV_COLUMNS = [
    "hw",
    "scheduler",
    "cache",
    "workload",
    "rate_mbps",
    "rep",
    "app_count",
    "avg_cumulative_exec_us",
    "avg_exec_us",
    "avg_sched_overhead_us",
    "makespan_us",
    "util_cpu",
    "util_fft",
    "util_mmult",
]


@dataclass
class SweepConfig:
    hw_configs: dict[str, list[PEDescriptor]]
    schedulers: list[str]
    workloads: list[WorkloadSpec]
    rates_mbps: list[float]
    repetitions: int = 1
    instances_per_run: int = 3
    cache: bool = False
    queue_depth: int = DEFAULT_QUEUE_DEPTH


def run_one(
    descriptors: list[PEDescriptor],
    scheduler_name: str,
    workload: WorkloadSpec,
    rate_mbps: float,
    instances: int,
    cache: bool = False,
    queue_depth: int = DEFAULT_QUEUE_DEPTH,
    hw_label: str = "",
    rep: int = 0,
) -> tuple[MetricsReport, TraceRecorder]:
    """Execute one sweep cell to completion and return its metrics."""
    period = derive_injection_period(rate_mbps, workload.input_bits)
    recorder = TraceRecorder(
        RunMeta(
            hw_label=hw_label,
            scheduler=scheduler_name,
            cache=cache,
            queue_depth=queue_depth,
            workload=workload.name,
            injection_rate_mbps=rate_mbps,
            repetition=rep,
        )
    )
    pool = WorkerPool(descriptors, queue_depth=queue_depth)
    try:
        runtime = Runtime(pool, make_scheduler(scheduler_name, cached=cache),
                          recorder=recorder)
        runtime.submit_path(workload.app_path, count=instances, period_us=period)
        runtime.run_until_idle()
    finally:
        pool.shutdown()
    return compute_metrics(recorder.trace), recorder


def _row(meta_args: dict, metrics: MetricsReport) -> dict:
    row = dict(meta_args)
    row.update(
        app_count=metrics.app_count,
        avg_cumulative_exec_us=round(metrics.avg_cumulative_exec_per_app, 3),
        avg_exec_us=round(metrics.avg_exec_per_app, 3),
        avg_sched_overhead_us=round(metrics.avg_sched_overhead_per_app, 3),
        makespan_us=round(metrics.makespan, 3),
        util_cpu=round(metrics.utilization.get("cpu", 0.0), 6),
        util_fft=round(metrics.utilization.get("fft", 0.0), 6),
        util_mmult=round(metrics.utilization.get("mmult", 0.0), 6),
    )
    return row


def run_sweep(
    config: SweepConfig,
    csv_path: Optional[str] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> list[dict]:
    """Run the full matrix; rows come out in deterministic nesting order
    (hardware, scheduler, workload, rate, repetition)."""
    rows: list[dict] = []
    for hw_label, descriptors in config.hw_configs.items():
        for sched_name in config.schedulers:
            for workload in config.workloads:
                for rate in config.rates_mbps:
                    for rep in range(config.repetitions):
                        if progress is not None:
                            progress(
                                f"{hw_label} {sched_name} {workload.name} "
                                f"{rate}Mbps rep{rep}"
                            )
                        metrics, _ = run_one(
                            descriptors,
                            sched_name,
                            workload,
                            rate,
                            config.instances_per_run,
                            cache=config.cache,
                            queue_depth=config.queue_depth,
                            hw_label=hw_label,
                            rep=rep,
                        )
                        rows.append(
                            _row(
                                {
                                    "hw": hw_label,
                                    "scheduler": sched_name,
                                    "cache": int(config.cache),
                                    "workload": workload.name,
                                    "rate_mbps": rate,
                                    "rep": rep,
                                },
                                metrics,
                            )
                        )
    if csv_path is not None:
        write_sweep_csv(rows, csv_path)
    return rows


def write_sweep_csv(rows: list[dict], path: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_sweep_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
