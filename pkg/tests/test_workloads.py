import pytest

from dagrt import model, plugins
from dagrt.errors import UnknownTemplate
from dagrt.runtime import execute_standalone
from dagrt.workloads import generate_reference_workload

TARGETS_MS = {"rc": 0.82, "tm": 4.39, "wifi_tx": 16.12, "pd": 95.83}


def _fft_capable(prototype):
    return [
        n for n, spec in prototype.dag.items()
        if any(e.resource_type == "fft" for e in spec.platforms)
    ]


def test_rc_shape(tmp_path):
    spec = generate_reference_workload("rc", str(tmp_path))
    assert len(spec.prototype.dag) == 7
    assert len(_fft_capable(spec.prototype)) == 2
    assert model.validate_prototype(spec.prototype).clean


def test_tm_shape(tmp_path):
    spec = generate_reference_workload("tm", str(tmp_path))
    assert len(spec.prototype.dag) == 11
    mmult = [
        n for n, s in spec.prototype.dag.items()
        if any(e.resource_type == "mmult" for e in s.platforms)
    ]
    assert mmult


def test_wifi_tx_is_serial_chain(tmp_path):
    spec = generate_reference_workload("wifi_tx", str(tmp_path))
    dag = spec.prototype.dag
    assert len(dag) == 93
    assert len(_fft_capable(spec.prototype)) == 1
    assert sum(1 for s in dag.values() if not s.predecessors) == 1
    assert sum(1 for s in dag.values() if not s.successors) == 1
    assert all(len(s.successors) <= 1 for s in dag.values())


def test_pd_shape_default(tmp_path):
    spec = generate_reference_workload("pd", str(tmp_path))
    assert len(spec.prototype.dag) == 1027  # 1 + 8*128 + 2
    fft_nodes = _fft_capable(spec.prototype)
    assert len(fft_nodes) == 8 * 128
    # parallel width: the head has 128 successors
    assert len(spec.prototype.dag["pd_head"].successors) == 128


def test_pd_width_parametrized(tmp_path):
    spec = generate_reference_workload("pd", str(tmp_path), width=64, stages=2)
    assert len(spec.prototype.dag) == 1 + 2 * 64 + 2
    assert len(spec.prototype.dag["pd_head"].successors) == 64


@pytest.mark.parametrize("template", ["rc", "tm", "wifi_tx", "pd"])
def test_serial_cost_calibration(tmp_path, template):
    spec = generate_reference_workload(template, str(tmp_path))
    target_us = TARGETS_MS[template] * 1000
    assert abs(spec.serial_cost_us - target_us) / target_us <= 0.30


def test_same_seed_bit_identical(tmp_path):
    a = generate_reference_workload("rc", str(tmp_path / "a"), seed=3)
    b = generate_reference_workload("rc", str(tmp_path / "b"), seed=3)
    assert open(a.app_path, "rb").read() == open(b.app_path, "rb").read()
    assert open(a.library_path, "rb").read() == open(b.library_path, "rb").read()


def test_different_seed_differs(tmp_path):
    a = generate_reference_workload("rc", str(tmp_path / "a"), seed=3)
    b = generate_reference_workload("rc", str(tmp_path / "b"), seed=4)
    assert open(a.app_path, "rb").read() != open(b.app_path, "rb").read()


def test_template_aliases(tmp_path):
    spec = generate_reference_workload("radar_correlator", str(tmp_path))
    assert len(spec.prototype.dag) == 7
    spec = generate_reference_workload(
        "pulse_doppler", str(tmp_path), width=8, stages=2
    )
    assert len(spec.prototype.dag) == 1 + 2 * 8 + 2


def test_unknown_template(tmp_path):
    with pytest.raises(UnknownTemplate):
        generate_reference_workload("mystery", str(tmp_path))


def test_generated_library_loads_and_runs(tmp_path):
    spec = generate_reference_workload(
        "rc", str(tmp_path), seed=9, node_cost_us=1
    )
    out = execute_standalone(spec.prototype, str(tmp_path))
    # the tail node's buffer was written
    tail = spec.prototype.tail_nodes()[0]
    assert out[f"v_{tail}"] != bytes(len(out[f"v_{tail}"]))


def test_platform_variants_functionally_equal(tmp_path):
    """fft-capable nodes must compute the same bytes on either platform."""
    spec = generate_reference_workload("rc", str(tmp_path), seed=2)
    lib = plugins.load_task_library(spec.library_path)
    node = _fft_capable(spec.prototype)[0]
    task = spec.prototype.dag[node]
    bufs_a = [bytearray(b"x" * 64) for _ in task.arguments]
    bufs_b = [bytearray(b"x" * 64) for _ in task.arguments]
    cpu = plugins.resolve_task_function(lib, task.platform_for("cpu").runfunc)
    fft = plugins.resolve_task_function(lib, task.platform_for("fft").runfunc)
    plugins.invoke_task(cpu, bufs_a)
    plugins.invoke_task(fft, bufs_b)
    assert bufs_a == bufs_b


def test_stream_template_has_channels(tmp_path):
    spec = generate_reference_workload("rc_stream", str(tmp_path))
    streaming = spec.prototype.streaming
    assert streaming is not None
    edges = spec.prototype.edges()
    assert len(streaming.channels) == len(edges)


def test_fanout_and_pulse_templates(tmp_path):
    pulse = generate_reference_workload(
        "pulse", str(tmp_path), node_cost_us=500
    )
    assert len(pulse.prototype.dag) == 1
    assert pulse.prototype.dag["pulse_n0"].platforms[0].nodecost == 500
    fan = generate_reference_workload(
        "fanout", str(tmp_path), width=6, fft_speedup=5.0, node_cost_us=1000
    )
    assert len(fan.prototype.dag) == 8
    worker = fan.prototype.dag["fo_w00"]
    assert worker.platform_for("cpu").nodecost == 1000
    assert worker.platform_for("fft").nodecost == 200
