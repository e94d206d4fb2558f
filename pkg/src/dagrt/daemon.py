"""Background service mode: a runtime daemon reachable over a unix socket.

The daemon owns a :class:`~dagrt.runtime.Runtime` and speaks newline-
delimited JSON.  Clients find it through an endpoint file (``daemon.json``
holding the pid and socket path) in the runtime directory.  Periodic
arrivals are generated daemon-side: a submission carries a count and a
period and the management loop realizes instance k at submit_time + k*period.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import threading
from typing import Optional

from .errors import DaemonUnreachable, EndpointBusy
from .runtime import Runtime

log = logging.getLogger(__name__)

ENDPOINT_FILE = "daemon.json"
SOCKET_FILE = "daemon.sock"
_RECV_LIMIT = 1 << 20


def runtime_dir(override: Optional[str] = None) -> str:
    path = override or os.environ.get("DAGRT_RUNTIME_DIR") or os.path.expanduser(
        "~/.dagrt"
    )
    os.makedirs(path, exist_ok=True)
    return path


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


class Daemon:
    def __init__(self, runtime: Runtime, run_dir: Optional[str] = None):
        self.runtime = runtime
        self.run_dir = runtime_dir(run_dir)
        self.endpoint_path = os.path.join(self.run_dir, ENDPOINT_FILE)
        self.socket_path = os.path.join(self.run_dir, SOCKET_FILE)
        self._server: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._stopping = threading.Event()

    # ------------------------------------------------------------------

    def serve(self) -> None:
        """Bind, publish the endpoint file, and block until TERMINATE."""
        self._claim_endpoint()
        try:
            self._server = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            if os.path.exists(self.socket_path):
                os.unlink(self.socket_path)
            self._server.bind(self.socket_path)
            self._server.listen(8)
            self._accept_thread = threading.Thread(
                target=self._accept_loop, name="daemon-accept", daemon=True
            )
            self._accept_thread.start()
            log.info("daemon listening on %s", self.socket_path)
            self.runtime.run()
        finally:
            self._stopping.set()
            if self._server is not None:
                try:
                    self._server.close()
                except OSError:
                    pass
            for path in (self.socket_path, self.endpoint_path):
                try:
                    os.unlink(path)
                except OSError:
                    pass

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve, name="daemon", daemon=True)
        thread.start()
        return thread

    def _claim_endpoint(self) -> None:
        if os.path.exists(self.endpoint_path):
            try:
                with open(self.endpoint_path) as fh:
                    existing = json.load(fh)
                pid = int(existing.get("pid", -1))
            except (ValueError, OSError):
                pid = -1
            if pid > 0 and _pid_alive(pid):
                raise EndpointBusy(
                    f"daemon already running (pid {pid}, {self.endpoint_path})"
                )
            os.unlink(self.endpoint_path)  # stale endpoint from a dead daemon
        with open(self.endpoint_path, "w") as fh:
            json.dump({"pid": os.getpid(), "socket": self.socket_path}, fh)

    # ------------------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            threading.Thread(
                target=self._serve_connection, args=(conn,), daemon=True
            ).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn:
            buf = b""
            while not self._stopping.is_set():
                try:
                    chunk = conn.recv(4096)
                except OSError:
                    return
                if not chunk:
                    return
                buf += chunk
                if len(buf) > _RECV_LIMIT:
                    return
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if not line.strip():
                        continue
                    response = self._handle(line)
                    try:
                        conn.sendall(
                            json.dumps(response).encode() + b"\n"
                        )
                    except OSError:
                        return

    def _handle(self, line: bytes) -> dict:
        try:
            msg = json.loads(line)
            cmd = str(msg.get("cmd", "")).upper()
        except (ValueError, AttributeError):
            return {"ok": False, "error": "malformed request"}
        try:
            if cmd == "SUBMIT":
                sid = self.runtime.submit_path(
                    str(msg["path"]),
                    count=int(msg.get("count", 1)),
                    period_us=float(msg.get("period_us", 0)),
                )
                return {"ok": True, "submission_id": sid}
            if cmd == "STATUS":
                return {
                    "ok": True,
                    "pid": os.getpid(),
                    "scheduler": self.runtime.scheduler_name,
                    "live_instances": self.runtime.live_instance_count,
                    "finalized": self.runtime.finalized_count,
                    "rejected": len(self.runtime.rejected),
                }
            if cmd == "TERMINATE":
                self.runtime.terminate(drain=bool(msg.get("drain", True)))
                return {"ok": True}
        except KeyError as exc:
            return {"ok": False, "error": f"missing field {exc}"}
        except Exception as exc:  # reported to the client, daemon stays up
            return {"ok": False, "error": str(exc)}
        return {"ok": False, "error": f"unknown command {cmd!r}"}


# ---------------------------------------------------------------------------
# client side
# ---------------------------------------------------------------------------


def read_endpoint(run_dir: Optional[str] = None) -> dict:
    path = os.path.join(runtime_dir(run_dir), ENDPOINT_FILE)
    if not os.path.exists(path):
        raise DaemonUnreachable(f"no endpoint file at {path}")
    with open(path) as fh:
        return json.load(fh)


def request(msg: dict, run_dir: Optional[str] = None, timeout: float = 10.0) -> dict:
    endpoint = read_endpoint(run_dir)
    try:
        with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
            sock.settimeout(timeout)
            sock.connect(endpoint["socket"])
            sock.sendall(json.dumps(msg).encode() + b"\n")
            buf = b""
            while b"\n" not in buf:
                chunk = sock.recv(4096)
                if not chunk:
                    raise DaemonUnreachable("connection closed mid-reply")
                buf += chunk
    except OSError as exc:
        raise DaemonUnreachable(str(exc)) from exc
    return json.loads(buf.split(b"\n", 1)[0])


def submit(
    path: str,
    count: int = 1,
    period_us: float = 0,
    run_dir: Optional[str] = None,
) -> dict:
    return request(
        {
            "cmd": "SUBMIT",
            "path": os.path.abspath(path),
            "count": count,
            "period_us": period_us,
        },
        run_dir,
    )


def status(run_dir: Optional[str] = None) -> dict:
    return request({"cmd": "STATUS"}, run_dir)


def terminate(drain: bool = True, run_dir: Optional[str] = None) -> dict:
    return request({"cmd": "TERMINATE", "drain": drain}, run_dir)
