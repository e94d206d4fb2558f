import math
import os
import struct

import pytest

from dagrt import plugins
from dagrt.errors import LoadFailure, SymbolNotFound, TaskPanic, TypeMismatch

from oracles import dft_oracle


@pytest.fixture(autouse=True)
def fresh_cache():
    plugins.clear_library_cache()
    yield
    plugins.clear_library_cache()


def _lib(data_dir, name):
    return plugins.load_task_library(os.path.join(data_dir, name))


def test_repeat_load_returns_cached_handle(data_dir):
    a = _lib(data_dir, "sample_application.so")
    b = _lib(data_dir, "sample_application.so")
    assert a is b


def test_load_missing_path(data_dir):
    with pytest.raises(LoadFailure):
        _lib(data_dir, "no_such_library.so")


def test_override_library_coexists(data_dir):
    cpu = _lib(data_dir, "sample_application.so")
    fft = _lib(data_dir, "fft_accel.so")
    assert cpu is not fft
    assert plugins.resolve_task_function(cpu, "Node_1_CPU")
    assert plugins.resolve_task_function(fft, "FFT_Accel_Dispatch")


def test_resolve_memoized(data_dir):
    lib = _lib(data_dir, "sample_application.so")
    f1 = plugins.resolve_task_function(lib, "Node_0_CPU")
    f2 = plugins.resolve_task_function(lib, "Node_0_CPU")
    assert f1 is f2


def test_resolve_missing_symbol(data_dir):
    lib = _lib(data_dir, "sample_application.so")
    with pytest.raises(SymbolNotFound):
        plugins.resolve_task_function(lib, "missing")


def test_wrong_arity_rejected_before_call(data_dir):
    lib = _lib(data_dir, "sample_application.so")
    f = plugins.resolve_task_function(lib, "Node_0_CPU")
    target = bytearray(4)
    with pytest.raises(TypeMismatch):
        plugins.invoke_task(f, [target], expected_arity=2)
    assert bytes(target) == b"\x00" * 4  # untouched


def test_panic_isolation(data_dir, tmp_path):
    bad = tmp_path / "bad.so"
    bad.write_text("def boom(bufs):\n    raise RuntimeError('nope')\n")
    lib = plugins.load_task_library(str(bad))
    f = plugins.resolve_task_function(lib, "boom")
    with pytest.raises(TaskPanic):
        plugins.invoke_task(f, [])
    # the loader and other libraries keep working afterwards
    ok = plugins.resolve_task_function(
        _lib(data_dir, "sample_application.so"), "Node_0_CPU"
    )
    assert plugins.invoke_task(ok, [bytearray(4), bytearray(4)]) == 0


def test_none_return_is_status_zero(tmp_path):
    lib_file = tmp_path / "lib.py"
    lib_file.write_text("def noop(bufs):\n    pass\n")
    lib = plugins.load_task_library(str(lib_file))
    f = plugins.resolve_task_function(lib, "noop")
    assert plugins.invoke_task(f, []) == 0


def test_platform_implementations_agree(data_dir):
    """cpu and accelerator variants of the same node must be functionally
    identical on identical inputs."""
    cpu = plugins.resolve_task_function(
        _lib(data_dir, "sample_application.so"), "Node_1_CPU"
    )
    fft = plugins.resolve_task_function(
        _lib(data_dir, "fft_accel.so"), "FFT_Accel_Dispatch"
    )
    var_1 = bytearray([0, 1, 0, 0])
    out_a, out_b = bytearray(2048), bytearray(2048)
    plugins.invoke_task(cpu, [bytearray(var_1), out_a])
    plugins.invoke_task(fft, [bytearray(var_1), out_b])
    assert out_a == out_b


def test_fft256_matches_dft_oracle(data_dir):
    lib = _lib(data_dir, "fft_tasks.py")
    f = plugins.resolve_task_function(lib, "fft_256")
    n = 256
    samples = [
        complex(math.sin(0.37 * i) + 0.25 * math.cos(1.9 * i),
                0.5 * math.sin(2.11 * i))
        for i in range(n)
    ]
    inp = bytearray(
        struct.pack(f"<{2 * n}d", *(x for c in samples for x in (c.real, c.imag)))
    )
    out = bytearray(16 * n)
    assert plugins.invoke_task(f, [inp, out]) == 0
    flat = struct.unpack(f"<{2 * n}d", bytes(out))
    got = [complex(flat[2 * i], flat[2 * i + 1]) for i in range(n)]
    want = dft_oracle(samples)
    scale = max(abs(w) for w in want)
    for g, w in zip(got, want):
        assert abs(g - w) / scale <= 1e-9
