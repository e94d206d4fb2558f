"""Exception types shared across the runtime."""


class DagrtError(Exception):
    """Base class for all runtime errors."""


# --- application parsing / validation ---

class MalformedJson(DagrtError):
    pass


class MissingKey(DagrtError):
    def __init__(self, path: str):
        super().__init__(f"missing required key at {path!r}")
        self.path = path


class TypeMismatch(DagrtError):
    def __init__(self, path: str, detail: str = ""):
        msg = f"bad value at {path!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.path = path


class AllocationFailure(DagrtError):
    def __init__(self, variable: str, reason: str = ""):
        super().__init__(f"failed to allocate {variable!r}: {reason}")
        self.variable = variable


# --- task libraries ---

class LoadFailure(DagrtError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"cannot load task library {path!r}: {reason}")
        self.path = path
        self.reason = reason


class SymbolNotFound(DagrtError):
    def __init__(self, symbol: str, path: str):
        super().__init__(f"symbol {symbol!r} not found in {path!r}")
        self.symbol = symbol
        self.path = path


class TaskPanic(DagrtError):
    """A task function raised; the owning application is failed, the daemon survives."""

    def __init__(self, symbol: str, cause: BaseException):
        super().__init__(f"task {symbol!r} panicked: {cause!r}")
        self.symbol = symbol
        self.cause = cause


# --- processing elements ---

class ConfigError(DagrtError):
    pass


class UnknownPE(DagrtError):
    def __init__(self, pe_id: int):
        super().__init__(f"no PE with id {pe_id}")
        self.pe_id = pe_id


class WorkQueueFull(DagrtError):
    """Raised by enqueue when a PE's in-flight budget is exhausted.

    The management thread treats this as "retry next loop iteration".
    """

    def __init__(self, pe_id: int):
        super().__init__(f"to-do queue of PE {pe_id} is full")
        self.pe_id = pe_id


# --- scheduling ---

class NoCompatiblePE(DagrtError):
    def __init__(self, task: str):
        super().__init__(f"no PE in the pool can run task {task!r}")
        self.task = task


# --- telemetry ---

class IncompleteTrace(DagrtError):
    pass


class ZeroRate(DagrtError):
    pass


class UnknownTemplate(DagrtError):
    def __init__(self, name: str):
        super().__init__(f"unknown workload template {name!r}")
        self.name = name


class ProviderUnavailable(DagrtError):
    pass


class IoError(DagrtError):
    pass


# --- daemon / IPC ---

class DaemonUnreachable(DagrtError):
    pass


class EndpointBusy(DagrtError):
    def __init__(self, endpoint: str):
        super().__init__(f"another daemon is already serving {endpoint!r}")
        self.endpoint = endpoint


class RejectedSubmission(DagrtError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason
