"""Task library loading and the task call convention.

A task library is a Python module loaded from an arbitrary file path (the
extension does not matter, so library names like ``fft_accel.so`` work as
long as the file contains Python source).  A task function receives one flat
list of mutable byte buffers -- one per DAG ``arguments`` entry -- and
returns an integer status code (``None`` counts as 0).
"""

from __future__ import annotations

import importlib.util
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import LoadFailure, SymbolNotFound, TaskPanic, TypeMismatch


@dataclass
class TaskFunction:
    symbol: str
    fn: Callable
    library_path: str


@dataclass
class TaskLibrary:
    path: str
    module: object
    _resolved: dict[str, TaskFunction] = field(default_factory=dict)


_lock = threading.Lock()
_loaded: dict[str, TaskLibrary] = {}
_counter = 0


def load_task_library(path: str) -> TaskLibrary:
    """Load a library, returning the cached handle on repeat loads.

    Libraries are keyed by canonical path and loaded at most once per
    process lifetime.
    """
    canonical = os.path.realpath(path)
    with _lock:
        lib = _loaded.get(canonical)
        if lib is not None:
            return lib
        if not os.path.isfile(canonical):
            raise LoadFailure(path, "no such file")
        global _counter
        _counter += 1
        modname = f"_dagrt_tasklib_{_counter}"
        try:
            spec = importlib.util.spec_from_loader(
                modname,
                importlib.machinery.SourceFileLoader(modname, canonical),
            )
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
        except Exception as exc:
            raise LoadFailure(path, repr(exc)) from exc
        lib = TaskLibrary(canonical, module)
        _loaded[canonical] = lib
        return lib


def resolve_task_function(lib: TaskLibrary, symbol: str) -> TaskFunction:
    """Resolve an exported symbol to a callable; results are memoized."""
    with _lock:
        cached = lib._resolved.get(symbol)
        if cached is not None:
            return cached
        fn = getattr(lib.module, symbol, None)
        if not callable(fn):
            raise SymbolNotFound(symbol, lib.path)
        handle = TaskFunction(symbol, fn, lib.path)
        lib._resolved[symbol] = handle
        return handle


def invoke_task(
    f: TaskFunction,
    buffers: list[bytearray],
    expected_arity: Optional[int] = None,
) -> int:
    """Call a task function on the current thread.

    A wrong argument count is rejected before the call; any exception raised
    by the function surfaces as :class:`TaskPanic` so the caller can fail the
    owning application without taking down the process.
    """
    if expected_arity is not None and len(buffers) != expected_arity:
        raise TypeMismatch(
            f"{f.symbol} arguments",
            f"expected {expected_arity} buffers, got {len(buffers)}",
        )
    try:
        status = f.fn(buffers)
    except Exception as exc:
        raise TaskPanic(f.symbol, exc) from exc
    return 0 if status is None else int(status)


def clear_library_cache() -> None:
    # test hook; the daemon never needs this
    with _lock:
        _loaded.clear()
