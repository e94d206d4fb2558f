"""Command-line interface."""

from __future__ import annotations

import csv
import json
import logging
import sys
from typing import Optional

import click

from . import daemon as daemon_mod
from . import model, sweep as sweep_mod, workloads
from .pes import DEFAULT_QUEUE_DEPTH, WorkerPool, load_hardware_config, standard_config
from .runtime import Runtime
from .scheduling import SCHEDULER_NAMES, make_scheduler
from .telemetry import (
    RunTrace,
    TaskRow,
    TraceRecorder,
    WALLCLOCK_ONLY,
    HARDWARE,
    compute_metrics,
    export_gantt_svg,
    export_trace_csv,
    get_counter_provider,
)

_SCHED_CHOICES = click.Choice(SCHEDULER_NAMES, case_sensitive=False)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Userspace runtime for DAG applications on emulated heterogeneous PEs."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _build_pool(config, cpus, ffts, mmults, queue_depth, counters):
    if config is not None:
        descriptors = load_hardware_config(config)
    else:
        descriptors = standard_config(cpus, ffts, mmults)
    provider = get_counter_provider(counters, logging.getLogger("dagrt"))
    return WorkerPool(
        descriptors,
        queue_depth=queue_depth,
        provider_factory=lambda: provider,
    )


@main.command("daemon")
@click.option("--config", type=click.Path(exists=True), default=None,
              help="Hardware configuration JSON; overrides the count options.")
@click.option("--cpus", default=3, show_default=True)
@click.option("--ffts", default=0, show_default=True)
@click.option("--mmults", default=0, show_default=True)
@click.option("--scheduler", type=_SCHED_CHOICES, default="EFT", show_default=True)
@click.option("--cache", type=click.Choice(["on", "off"]), default="off",
              show_default=True, help="Schedule caching.")
@click.option("--queue-depth", default=DEFAULT_QUEUE_DEPTH, show_default=True)
@click.option("--counters", type=click.Choice([WALLCLOCK_ONLY, HARDWARE]),
              default=WALLCLOCK_ONLY, show_default=True)
@click.option("--run-dir", type=click.Path(), default=None,
              help="Directory for the endpoint file and socket.")
@click.option("--trace-csv", type=click.Path(), default=None,
              help="Write the task trace here on shutdown.")
def daemon_cmd(config, cpus, ffts, mmults, scheduler, cache, queue_depth,
               counters, run_dir, trace_csv):
    """Run the runtime daemon in the foreground."""
    pool = _build_pool(config, cpus, ffts, mmults, queue_depth, counters)
    recorder = TraceRecorder()
    runtime = Runtime(pool, make_scheduler(scheduler, cached=cache == "on"),
                      recorder=recorder)
    d = daemon_mod.Daemon(runtime, run_dir)
    try:
        d.serve()
    finally:
        pool.shutdown()
        if trace_csv and recorder.trace.task_rows:
            export_trace_csv(recorder.trace, trace_csv)
            click.echo(f"trace written to {trace_csv}")


@main.command()
@click.argument("app", type=click.Path(exists=True))
@click.option("--count", default=1, show_default=True)
@click.option("--period-us", default=0.0, show_default=True,
              help="Inter-arrival period for repeated instances.")
@click.option("--run-dir", type=click.Path(), default=None)
def submit(app, count, period_us, run_dir):
    """Submit an application to the running daemon."""
    reply = daemon_mod.submit(app, count=count, period_us=period_us,
                              run_dir=run_dir)
    _report(reply)


@main.command()
@click.option("--abort", is_flag=True, help="Do not drain in-flight work.")
@click.option("--run-dir", type=click.Path(), default=None)
def kill(abort, run_dir):
    """Terminate the running daemon."""
    _report(daemon_mod.terminate(drain=not abort, run_dir=run_dir))


@main.command()
@click.option("--run-dir", type=click.Path(), default=None)
def status(run_dir):
    """Query the running daemon."""
    _report(daemon_mod.status(run_dir=run_dir))


def _report(reply: dict) -> None:
    click.echo(json.dumps(reply, indent=1))
    if not reply.get("ok"):
        sys.exit(1)


@main.command()
@click.argument("app", type=click.Path(exists=True))
def validate(app):
    """Check an application document and report the first problems found."""
    with open(app) as fh:
        text = fh.read()
    try:
        prototype = model.parse_application(text)
    except Exception as exc:
        click.echo(f"parse error: {exc}")
        sys.exit(1)
    report = model.validate_prototype(prototype)
    click.echo(str(report))
    if not report.clean:
        sys.exit(1)


@main.command("generate-workload")
@click.argument("template", type=click.Choice(workloads.TEMPLATES))
@click.argument("out_dir", type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--width", default=128, show_default=True)
@click.option("--stages", default=8, show_default=True)
@click.option("--fft-speedup", default=4.0, show_default=True)
@click.option("--node-cost-us", default=None, type=int)
def generate_workload(template, out_dir, seed, width, stages, fft_speedup,
                      node_cost_us):
    """Generate a synthetic application and its task library."""
    spec = workloads.generate_reference_workload(
        template, out_dir, seed, width=width, stages=stages,
        fft_speedup=fft_speedup, node_cost_us=node_cost_us,
    )
    click.echo(f"{spec.name}: {len(spec.prototype.dag)} nodes, "
               f"~{spec.serial_cost_us / 1000:.2f} ms serial, {spec.app_path}")


@main.command("run")
@click.argument("app", type=click.Path(exists=True))
@click.option("--count", default=1, show_default=True)
@click.option("--period-us", default=0.0, show_default=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--cpus", default=3, show_default=True)
@click.option("--ffts", default=0, show_default=True)
@click.option("--mmults", default=0, show_default=True)
@click.option("--scheduler", type=_SCHED_CHOICES, default="EFT", show_default=True)
@click.option("--cache", type=click.Choice(["on", "off"]), default="off",
              show_default=True)
@click.option("--queue-depth", default=DEFAULT_QUEUE_DEPTH, show_default=True)
@click.option("--counters", type=click.Choice([WALLCLOCK_ONLY, HARDWARE]),
              default=WALLCLOCK_ONLY, show_default=True)
@click.option("--trace-csv", type=click.Path(), default=None)
@click.option("--gantt-svg", type=click.Path(), default=None)
def run_cmd(app, count, period_us, config, cpus, ffts, mmults, scheduler,
            cache, queue_depth, counters, trace_csv, gantt_svg):
    """Run an application to completion without a daemon and print metrics."""
    pool = _build_pool(config, cpus, ffts, mmults, queue_depth, counters)
    recorder = TraceRecorder()
    try:
        runtime = Runtime(pool, make_scheduler(scheduler, cached=cache == "on"),
                          recorder=recorder)
        runtime.submit_path(app, count=count, period_us=period_us)
        runtime.run_until_idle()
    finally:
        pool.shutdown()
    metrics = compute_metrics(recorder.trace)
    click.echo(f"applications:            {metrics.app_count}")
    click.echo(f"avg cumulative exec/app: {metrics.avg_cumulative_exec_per_app:.1f} us")
    click.echo(f"avg exec/app:            {metrics.avg_exec_per_app:.1f} us")
    click.echo(f"avg sched overhead/app:  {metrics.avg_sched_overhead_per_app:.1f} us")
    for rtype, value in sorted(metrics.utilization.items()):
        click.echo(f"utilization[{rtype}]:    {value * 100:.2f} %")
    if trace_csv:
        export_trace_csv(recorder.trace, trace_csv)
    if gantt_svg:
        export_gantt_svg(recorder.trace, gantt_svg)


@main.command("sweep")
@click.option("--hw", "hw_specs", multiple=True, default=("3,0,0",),
              show_default=True,
              help="cpus,ffts,mmults triple; repeatable.")
@click.option("--scheduler", "schedulers", type=_SCHED_CHOICES, multiple=True,
              default=SCHEDULER_NAMES, show_default=True)
@click.option("--template", "templates", multiple=True,
              type=click.Choice(workloads.TEMPLATES), default=("rc", "tm"),
              show_default=True)
@click.option("--rate", "rates", multiple=True, type=float, default=(1.0, 4.0),
              show_default=True, help="Injection rates in Mbps; repeatable.")
@click.option("--reps", default=1, show_default=True)
@click.option("--instances", default=3, show_default=True)
@click.option("--cache", type=click.Choice(["on", "off"]), default="off",
              show_default=True)
@click.option("--workload-dir", type=click.Path(), default="sweep_workloads",
              show_default=True)
@click.option("--out", type=click.Path(), default="sweep.csv", show_default=True)
def sweep_cmd(hw_specs, schedulers, templates, rates, reps, instances, cache,
              workload_dir, out):
    """Run a configuration matrix and write one CSV row per cell."""
    hw_configs = {}
    for spec in hw_specs:
        try:
            c, f, m = (int(x) for x in spec.split(","))
        except ValueError:
            raise click.BadParameter(f"bad --hw triple {spec!r}")
        hw_configs[f"C{c}-F{f}-M{m}"] = standard_config(c, f, m)
    specs = [
        workloads.generate_reference_workload(t, workload_dir, seed=0)
        for t in templates
    ]
    config = sweep_mod.SweepConfig(
        hw_configs=hw_configs,
        schedulers=[s.upper() for s in schedulers],
        workloads=specs,
        rates_mbps=list(rates),
        repetitions=reps,
        instances_per_run=instances,
        cache=cache == "on",
    )
    rows = sweep_mod.run_sweep(config, csv_path=out, progress=click.echo)
    click.echo(f"{len(rows)} rows written to {out}")


@main.command("gantt")
@click.argument("trace_csv", type=click.Path(exists=True))
@click.argument("out_svg", type=click.Path())
def gantt(trace_csv, out_svg):
    """Render a task trace CSV as a Gantt chart."""
    trace = _load_task_csv(trace_csv)
    export_gantt_svg(trace, out_svg)
    click.echo(f"wrote {out_svg}")


def _load_task_csv(path: str) -> RunTrace:
    trace = RunTrace()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            trace.task_rows.append(
                TaskRow(
                    app_name=row["app_name"],
                    instance_id=int(row["instance_id"]),
                    node=row["node"],
                    pe_id=int(row["pe_id"]),
                    resource_type=row["resource_type"],
                    start=int(row["start_us"]),
                    end=int(row["end_us"]),
                    status=int(row["status"]),
                )
            )
            trace.pe_types.setdefault(int(row["pe_id"]), row["resource_type"])
    return trace


if __name__ == "__main__":
    main()
