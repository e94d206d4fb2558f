import threading
import time

import pytest

from dagrt.clock import now_us
from dagrt.errors import ConfigError, TypeMismatch, UnknownPE, WorkQueueFull
from dagrt.model import PlatformEntry
from dagrt.pes import (
    DelayModel,
    PEDescriptor,
    WorkerPool,
    config_label,
    standard_config,
)
from dagrt.plugins import TaskFunction
from dagrt.scheduling import TaskAssignment


def _fn(callable_, name="task"):
    return TaskFunction(name, callable_, "<test>")


def _assignment(pe_id, rtype="cpu", cost=100.0, node="n", instance_id=0):
    entry = PlatformEntry(rtype, "task", cost)
    return TaskAssignment(instance_id, node, pe_id, entry, 0.0, cost)


def _sleep_task(seconds):
    def task(bufs):
        time.sleep(seconds)
        return 0

    return task


def _wait_all(pool, count, timeout=10.0):
    recs = []
    deadline = time.time() + timeout
    while len(recs) < count and time.time() < deadline:
        recs.extend(pool.poll_completions())
        time.sleep(0.002)
    assert len(recs) == count, f"only {len(recs)}/{count} completions"
    return recs


def test_pool_sizes(make_pool):
    pool = make_pool(standard_config(3, 1, 1))
    assert len(pool.descriptors) == 5
    assert pool.resource_types() == {"cpu", "fft", "mmult"}
    assert config_label(pool.descriptors) == "C3-F1-M1"
    minimal = make_pool(standard_config(1))
    assert len(minimal.descriptors) == 1


def test_duplicate_pe_id_rejected():
    with pytest.raises(ConfigError):
        WorkerPool([PEDescriptor(0, "cpu"), PEDescriptor(0, "cpu")])


def test_empty_and_cpuless_configs_rejected():
    with pytest.raises(ConfigError):
        WorkerPool([])
    with pytest.raises(ConfigError):
        WorkerPool([PEDescriptor(0, "fft")])
    with pytest.raises(ConfigError):
        WorkerPool([PEDescriptor(0, "cpu")], queue_depth=0)


def test_type_mismatch_on_dispatch(make_pool):
    pool = make_pool(standard_config(1, 1, 0))
    fft_pe = next(d for d in pool.descriptors if d.resource_type == "fft")
    bad = _assignment(fft_pe.pe_id, rtype="mmult")
    with pytest.raises(TypeMismatch):
        pool.enqueue_to_pe(bad, _fn(_sleep_task(0)), [])


def test_unknown_pe(make_pool):
    pool = make_pool(standard_config(1))
    with pytest.raises(UnknownPE):
        pool.estimated_availability(99)


def test_fifo_order_per_pe(make_pool):
    pool = make_pool(standard_config(1))
    for i in range(2):
        pool.enqueue_to_pe(
            _assignment(0, cost=5000.0, node=f"t{i}"),
            _fn(_sleep_task(0.005)),
            [],
        )
    recs = _wait_all(pool, 2)
    recs.sort(key=lambda r: r.start)
    assert recs[0].node == "t0" and recs[1].node == "t1"
    assert recs[0].end <= recs[1].start
    assert all(r.end >= r.start for r in recs)


def test_depth_bounds_in_flight(make_pool):
    pool = make_pool(standard_config(1), queue_depth=1)
    gate = threading.Event()

    def blocker(bufs):
        gate.wait(5)
        return 0

    pool.enqueue_to_pe(_assignment(0, cost=1000.0), _fn(blocker), [])
    time.sleep(0.02)  # let the worker pick it up
    with pytest.raises(WorkQueueFull):
        pool.enqueue_to_pe(_assignment(0, cost=1000.0), _fn(blocker), [])
    gate.set()
    _wait_all(pool, 1)


def test_depth_8_accepts_queue_without_blocking(make_pool):
    pool = make_pool(standard_config(1), queue_depth=8)
    gate = threading.Event()

    def blocker(bufs):
        gate.wait(5)
        return 0

    pool.enqueue_to_pe(_assignment(0, cost=1000.0), _fn(blocker), [])
    time.sleep(0.02)
    t0 = time.perf_counter()
    for i in range(3):
        pool.enqueue_to_pe(
            _assignment(0, cost=1000.0, node=f"q{i}"), _fn(_sleep_task(0)), []
        )
    assert time.perf_counter() - t0 < 0.05  # never blocked on the worker
    gate.set()
    _wait_all(pool, 4)


def test_availability_idle_is_now(make_pool):
    pool = make_pool(standard_config(1))
    now = now_us()
    assert pool.estimated_availability(0, now) == now


def test_availability_with_running_and_queued(make_pool):
    """Running task predicted to need 40 ms more, queued costs 100 ms and
    60 ms: availability should sit at ~now + 200 ms."""
    pool = make_pool(standard_config(1), queue_depth=8)
    gate = threading.Event()

    def blocker(bufs):
        gate.wait(10)
        return 0

    pool.enqueue_to_pe(
        _assignment(0, cost=40_000.0), _fn(blocker), [],
        predicted_cost=40_000.0,
    )
    time.sleep(0.02)  # ensure it is the *running* task
    pool.enqueue_to_pe(_assignment(0, cost=100_000.0), _fn(blocker), [],
                       predicted_cost=100_000.0)
    pool.enqueue_to_pe(_assignment(0, cost=60_000.0), _fn(blocker), [],
                       predicted_cost=60_000.0)
    now = now_us()
    remaining = pool.estimated_availability(0, now) - now
    # the running task's 40ms budget has been partly consumed by the sleep
    assert 150_000 <= remaining <= 200_000
    gate.set()
    _wait_all(pool, 3)


def test_queued_single_assignment_availability(make_pool):
    pool = make_pool(standard_config(1), queue_depth=8)
    gate = threading.Event()

    def blocker(bufs):
        gate.wait(10)
        return 0

    pool.enqueue_to_pe(_assignment(0, cost=100.0), _fn(blocker), [],
                       predicted_cost=100.0)
    now = now_us()
    assert pool.estimated_availability(0, now) - now <= 100.0
    assert pool.estimated_availability(0, now) > now - 1
    gate.set()
    _wait_all(pool, 1)


def test_default_predicted_cost_includes_delay(make_pool):
    delay = DelayModel(fixed_us=500.0, per_byte_us=1.0)
    pool = make_pool(
        [PEDescriptor(0, "cpu"), PEDescriptor(1, "fft", "F1", delay)]
    )
    gate = threading.Event()

    def blocker(bufs):
        gate.wait(10)
        return 0

    buf = bytearray(100)
    pool.enqueue_to_pe(
        _assignment(1, rtype="fft", cost=1000.0), _fn(blocker), [buf]
    )
    now = now_us()
    avail = pool.estimated_availability(1, now)
    assert avail - now <= 1000.0 + 500.0 + 100.0
    assert avail - now > 1000.0  # delay model was added on top of nodecost
    gate.set()
    _wait_all(pool, 1)


def test_synthetic_delay_extends_service_time(make_pool):
    delay = DelayModel(fixed_us=50_000.0, per_byte_us=10.0)
    pool = make_pool(
        [PEDescriptor(0, "cpu"), PEDescriptor(1, "fft", "F1", delay)]
    )
    buf = bytearray(1000)  # 50_000 + 10*1000 = 60_000 us expected
    pool.enqueue_to_pe(
        _assignment(1, rtype="fft", cost=60_000.0),
        _fn(lambda bufs: 0),
        [buf],
    )
    (rec,) = _wait_all(pool, 1)
    observed = rec.end - rec.start
    assert 60_000 <= observed <= 60_000 * 1.2 + 10_000


def test_parallel_workers_overlap(make_pool):
    pool = make_pool(standard_config(2))
    for pe in (0, 1):
        pool.enqueue_to_pe(
            _assignment(pe, cost=50_000.0, node=f"p{pe}"),
            _fn(_sleep_task(0.05)),
            [],
        )
    recs = _wait_all(pool, 2)
    a, b = sorted(recs, key=lambda r: r.start)
    assert a.end > b.start  # intervals intersect: true thread-level overlap


def test_failed_task_reports_nonzero_status(make_pool):
    pool = make_pool(standard_config(1))

    def boom(bufs):
        raise ValueError("broken")

    pool.enqueue_to_pe(_assignment(0), _fn(boom), [])
    (rec,) = _wait_all(pool, 1)
    assert rec.status == -1
    assert "broken" in rec.error


def test_poll_returns_from_multiple_pes(make_pool):
    pool = make_pool(standard_config(2))
    assert pool.poll_completions() == []
    for pe in (0, 1):
        pool.enqueue_to_pe(
            _assignment(pe, node=f"m{pe}"), _fn(_sleep_task(0)), []
        )
    recs = _wait_all(pool, 2)
    assert {r.pe_id for r in recs} == {0, 1}
