import json
import os
import threading
import time

import pytest

from dagrt import model
from dagrt.errors import RejectedSubmission
from dagrt.pes import standard_config
from dagrt.runtime import Runtime, execute_standalone
from dagrt.scheduling import make_scheduler
from dagrt.telemetry import TraceRecorder


def _runtime(make_pool, cpus=1, ffts=0, mmults=0, scheduler="EFT", **kwargs):
    pool = make_pool(standard_config(cpus, ffts, mmults))
    recorder = TraceRecorder()
    rt = Runtime(pool, make_scheduler(scheduler), recorder=recorder, **kwargs)
    return rt, recorder


def _sample_path(data_dir):
    return os.path.join(data_dir, "sample_application.json")


def test_sample_application_runs_to_completion(make_pool, data_dir):
    rt, rec = _runtime(make_pool, cpus=1, capture_outputs=True)
    rt.submit_path(_sample_path(data_dir))
    rt.run_until_idle()
    assert rt.finalized_count == 1
    assert len(rec.trace.task_rows) == 3
    assert len(rec.trace.app_rows) == 1
    assert not rec.trace.app_rows[0].failed
    # dependency order is visible in the timestamps
    by_node = {r.node: r for r in rec.trace.task_rows}
    assert by_node["Node 0"].end <= by_node["Node 1"].start
    assert by_node["Node 1"].end <= by_node["Node 2"].start


def test_outputs_match_standalone_execution(make_pool, data_dir):
    rt, _ = _runtime(make_pool, cpus=2, capture_outputs=True)
    rt.submit_path(_sample_path(data_dir), count=2)
    rt.run_until_idle()
    p = model.parse_application(open(_sample_path(data_dir)).read())
    expected = execute_standalone(p, data_dir)
    assert len(rt.outputs) == 2
    for outputs in rt.outputs.values():
        assert outputs == expected


def test_prototype_parsed_once(make_pool, data_dir, monkeypatch):
    from dagrt import runtime as runtime_mod

    calls = []
    real = model.parse_application

    def counting(text):
        calls.append(1)
        return real(text)

    monkeypatch.setattr(runtime_mod.model, "parse_application", counting)
    rt, _ = _runtime(make_pool)
    rt.submit_path(_sample_path(data_dir))
    rt.run_until_idle()
    rt.submit_path(_sample_path(data_dir), count=3)
    rt.run_until_idle()
    assert rt.finalized_count == 4
    assert len(calls) == 1


def test_liveness_ten_instances_on_one_cpu(make_pool, data_dir):
    rt, rec = _runtime(make_pool, cpus=1)
    rt.submit_path(_sample_path(data_dir), count=10)
    rt.run_until_idle()
    assert rt.finalized_count == 10
    assert len(rec.trace.task_rows) == 30
    assert len(rec.trace.app_rows) == 10
    assert rt.live_instance_count == 0


def test_invalid_json_rejected_daemon_continues(make_pool, data_dir):
    rt, _ = _runtime(make_pool)
    rt.submit_text("{broken")
    rt.run_until_idle()
    assert len(rt.rejected) == 1
    rt.submit_path(_sample_path(data_dir))
    rt.run_until_idle()
    assert rt.finalized_count == 1


def test_nonexistent_path_rejected_up_front(make_pool):
    rt, _ = _runtime(make_pool)
    with pytest.raises(RejectedSubmission):
        rt.submit_path("/no/such/app.json")


def test_diamond_and_join(make_pool, tmp_path):
    lib = tmp_path / "diamond.py"
    lib.write_text(
        "def mark(bufs):\n"
        "    bufs[-1][0] = (bufs[-1][0] + 1) % 256\n"
        "    return 0\n"
    )
    nodes = {
        "A": ([], ["B", "C"]),
        "B": (["A"], ["D"]),
        "C": (["A"], ["D"]),
        "D": (["B", "C"], []),
    }
    doc = {
        "AppName": "diamond", "SharedObject": "diamond.py",
        "Variables": {
            n.lower(): {"bytes": 1, "is_ptr": False,
                        "ptr_alloc_bytes": 0, "val": []}
            for n in nodes
        },
        "DAG": {
            n: {
                "arguments": [n.lower()],
                "predecessors": [{"name": p, "edgecost": 1.0} for p in preds],
                "successors": [{"name": s, "edgecost": 1.0} for s in succs],
                "platforms": [
                    {"name": "cpu", "runfunc": "mark", "nodecost": 10.0}
                ],
            }
            for n, (preds, succs) in nodes.items()
        },
    }
    app = tmp_path / "diamond.json"
    app.write_text(json.dumps(doc))
    rt, rec = _runtime(make_pool, cpus=2)
    rt.submit_path(str(app))
    rt.run_until_idle()
    rows = {r.node: r for r in rec.trace.task_rows}
    assert rows["D"].start >= rows["B"].end
    assert rows["D"].start >= rows["C"].end
    assert rows["B"].start >= rows["A"].end


def test_failed_task_fails_instance_only(make_pool, tmp_path, data_dir):
    lib = tmp_path / "failing.py"
    lib.write_text("def die(bufs):\n    raise RuntimeError('intentional')\n")
    doc = {
        "AppName": "failing", "SharedObject": "failing.py", "Variables": {},
        "DAG": {
            "only": {
                "arguments": [], "predecessors": [], "successors": [],
                "platforms": [
                    {"name": "cpu", "runfunc": "die", "nodecost": 10.0}
                ],
            }
        },
    }
    app = tmp_path / "failing.json"
    app.write_text(json.dumps(doc))
    rt, rec = _runtime(make_pool)
    rt.submit_path(str(app))
    rt.run_until_idle()
    assert rec.trace.app_rows[0].failed
    # the runtime keeps serving afterwards
    rt.submit_path(_sample_path(data_dir))
    rt.run_until_idle()
    assert rt.finalized_count == 2
    assert not rec.trace.app_rows[1].failed


def test_no_compatible_pe_fails_instance(make_pool, tmp_path):
    doc = {
        "AppName": "gpuonly", "SharedObject": "x.py", "Variables": {},
        "DAG": {
            "only": {
                "arguments": [], "predecessors": [], "successors": [],
                "platforms": [
                    {"name": "gpu", "runfunc": "f", "nodecost": 10.0}
                ],
            }
        },
    }
    app = tmp_path / "gpuonly.json"
    app.write_text(json.dumps(doc))
    rt, rec = _runtime(make_pool)
    rt.submit_path(str(app))
    rt.run_until_idle()
    assert rec.trace.app_rows[0].failed
    assert rt.live_instance_count == 0


def test_run_drains_on_terminate(make_pool, data_dir):
    rt, rec = _runtime(make_pool, cpus=1)
    rt.submit_path(_sample_path(data_dir), count=5)
    thread = threading.Thread(target=rt.run)
    thread.start()
    time.sleep(0.05)
    rt.terminate()  # drain mode: accepted instances must still finalize
    thread.join(timeout=10)
    assert not thread.is_alive()
    assert rt.finalized_count == 5


def test_periodic_arrivals_are_spaced(make_pool, data_dir):
    rt, rec = _runtime(make_pool, cpus=2)
    period = 20_000.0  # 20 ms
    rt.submit_path(_sample_path(data_dir), count=3, period_us=period)
    rt.run_until_idle()
    arrivals = sorted(t for _, _, t in rt.arrival_log)
    assert len(arrivals) == 3
    gaps = [b - a for a, b in zip(arrivals, arrivals[1:])]
    for gap in gaps:
        assert gap >= period * 0.5
        assert gap <= period * 2.0


def test_memory_released_after_finalize(make_pool, data_dir):
    rt, _ = _runtime(make_pool, cpus=1)
    rt.submit_path(_sample_path(data_dir), count=8)
    rt.run_until_idle()
    assert rt.live_instance_count == 0
    assert rt._instances == {}


def test_standalone_oracle_is_deterministic(data_dir):
    p = model.parse_application(open(_sample_path(data_dir)).read())
    a = execute_standalone(p, data_dir)
    b = execute_standalone(p, data_dir)
    assert a == b
    assert len(a["var_2"]) == 2048
    assert a["var_2"] != bytes(2048)  # actually computed, not left zeroed
