"""Message channels between the manager and its workers.

Both endpoints push every message through the binary frame codec, so the
in-process and multi-process modes exercise the same wire format and report
the same byte counts.
"""
import multiprocessing as mp
import sys
import time
from dataclasses import dataclass

from .protocol import BackwardTask, PartialResult, decode, encode
from .worker import Worker, worker_main


class WorkerTimeoutError(TimeoutError):
    pass


@dataclass
class ByteCounter:
    sent: int = 0
    received: int = 0
    map_forward: int = 0   # partial C/T maps received from workers
    map_backward: int = 0  # gradient maps sent to workers
    frames: int = 0

    def reset(self):
        self.sent = self.received = self.map_forward = self.map_backward = self.frames = 0


class InProcessEndpoint:
    """Worker living in the manager's process, reached only through frames."""

    def __init__(self, index, timeout=None):
        self.index = index
        self.worker = Worker()
        self.counter = ByteCounter()
        self._reply = None

    def send(self, msg):
        frame, maps = encode(msg)
        self.counter.sent += len(frame)
        self.counter.frames += 1
        if isinstance(msg, BackwardTask):
            self.counter.map_backward += maps
        incoming, _ = decode(frame)
        self._reply = encode(self.worker.handle(incoming))[0]

    def recv(self, timeout=None):
        if self._reply is None:
            raise WorkerTimeoutError(f"worker {self.index} has no pending reply")
        frame, self._reply = self._reply, None
        return self._account(frame)

    def _account(self, frame):
        msg, maps = decode(frame)
        self.counter.received += len(frame)
        self.counter.frames += 1
        if isinstance(msg, PartialResult):
            self.counter.map_forward += maps
        return msg

    def close(self):
        pass


class ProcessEndpoint(InProcessEndpoint):
    """Worker in a child process connected by a duplex pipe."""

    def __init__(self, index, timeout=60.0):
        self.index = index
        self.timeout = timeout
        self.counter = ByteCounter()
        method = "fork" if sys.platform.startswith("linux") else "spawn"
        ctx = mp.get_context(method)
        self.conn, child = ctx.Pipe(duplex=True)
        self.proc = ctx.Process(target=worker_main, args=(child,), daemon=True,
                                name=f"splatshard-worker-{index}")
        self.proc.start()
        child.close()

    def send(self, msg):
        frame, maps = encode(msg)
        self.counter.sent += len(frame)
        self.counter.frames += 1
        if isinstance(msg, BackwardTask):
            self.counter.map_backward += maps
        self.conn.send_bytes(frame)

    def recv(self, timeout=None):
        timeout = self.timeout if timeout is None else timeout
        if not self.conn.poll(timeout):
            raise WorkerTimeoutError(f"worker {self.index} timed out after {timeout}s")
        try:
            frame = self.conn.recv_bytes()
        except EOFError:
            raise WorkerTimeoutError(f"worker {self.index} exited") from None
        return self._account(frame)

    def close(self):
        try:
            self.conn.close()
        finally:
            deadline = time.monotonic() + 5.0
            self.proc.join(max(0.0, deadline - time.monotonic()))
            if self.proc.is_alive():
                self.proc.terminate()
