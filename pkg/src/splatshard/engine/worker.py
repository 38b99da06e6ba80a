"""Worker side of the protocol: owns one subset, renders partials, applies updates."""
import logging
import time

import numpy as np

from ..optim import Adam
from ..partition import _MEMBERSHIP_EPS
from ..raster import GradBuffers, NonFiniteGradientError
from ..splat import SplatSet
from .core import WorkerState, partial_backward, partial_render
from .protocol import (
    Ack, AddSplats, BackwardTask, Checkpoint, EdgeQuery, EdgeSplats, ErrorReply, GradSync, PartialResult,
    RenderTask, Repartition, Shutdown, Snapshot, Step, TYPE_IDS, decode, encode,
)

log = logging.getLogger(__name__)


class Worker:
    """Message handler around a :class:`WorkerState`.

    ``handle`` maps one incoming message to one reply; it never touches any
    other worker's data.
    """

    def __init__(self, state: WorkerState = None, sh_degree=None, reach_multiplier=3.0):
        self.state = state
        self.opt = Adam(state.splats) if state is not None else None
        self.sh_degree = sh_degree
        self.reach_multiplier = reach_multiplier
        self.pending = {}
        self.grads = None
        self.last_view = None
        self.running = True

    def _zero_grads(self):
        self.grads = GradBuffers.zeros_like(self.state.splats).as_dict()

    def handle(self, msg):
        try:
            return self._dispatch(msg)
        except Exception as exc:  # report instead of dying so the manager can surface it
            log.exception("worker failed on %s", type(msg).__name__)
            return ErrorReply(f"worker {getattr(self.state, 'k', '?')}: {type(exc).__name__}: {exc}")

    def _dispatch(self, msg):
        if isinstance(msg, RenderTask):
            return self._render(msg)
        if isinstance(msg, BackwardTask):
            return self._backward(msg)
        if isinstance(msg, Step):
            return self._step(msg)
        if isinstance(msg, GradSync):
            return self._apply_sync(msg)
        if isinstance(msg, Repartition):
            return self._repartition(msg)
        if isinstance(msg, Checkpoint):
            return self._checkpoint(msg)
        if isinstance(msg, EdgeQuery):
            return self._edges()
        if isinstance(msg, AddSplats):
            return self._add(msg)
        if isinstance(msg, Shutdown):
            self.running = False
            return Ack(TYPE_IDS[Shutdown])
        raise TypeError(f"unexpected message {type(msg).__name__}")

    def _render(self, msg: RenderTask):
        if self.last_view is not None and msg.view_id <= self.last_view:
            raise ValueError(f"view id {msg.view_id} not increasing (last {self.last_view})")
        self.last_view = msg.view_id
        t0 = time.perf_counter()
        img, proj = partial_render(
            self.state, msg.camera, epoch=msg.epoch, dtype=np.dtype(msg.dtype).type,
            stop_T=msg.stop_T, view_id=msg.view_id, gate=msg.gate, sh_degree=self.sh_degree,
            reach_multiplier=self.reach_multiplier, keep_cache=msg.keep)
        ms = (time.perf_counter() - t0) * 1e3
        if msg.keep:
            self.pending[msg.view_id] = (msg.camera, proj, np.dtype(msg.dtype).type, msg.stop_T)
        stats = {"compute_ms": ms, "contributions": int(img.count.sum()), "splats": len(self.state.splats)}
        img.count = None
        return PartialResult(img, stats)

    def _backward(self, msg: BackwardTask):
        camera, proj, dtype, stop_T = self.pending.pop(msg.view_id)
        t0 = time.perf_counter()
        g = partial_backward(self.state, camera, proj, msg.grad_C, msg.grad_T, dtype, stop_T)
        if self.grads is None:
            self._zero_grads()
        for name, arr in g.items():
            self.grads[name] += arr
        return Ack(TYPE_IDS[BackwardTask], msg.view_id,
                   {"compute_ms": (time.perf_counter() - t0) * 1e3})

    def _shared_rows(self):
        ids = self.state.splats.ids
        return np.nonzero(np.isin(ids, self.state.shared_ids))[0]

    def _step(self, msg: Step):
        if self.grads is None:
            self._zero_grads()
        self._lrs = msg.lrs
        if msg.sync:
            rows = self._shared_rows()
            return GradSync(self.state.splats.ids[rows], {k: v[rows] for k, v in self.grads.items()})
        return self._apply(msg.step)

    def _apply_sync(self, msg: GradSync):
        rows = self.state.splats.rows_for(msg.ids)
        for name, arr in msg.grads.items():
            self.grads[name][rows] = arr
        return self._apply(self.opt.step_count + 1)

    def _apply(self, step):
        buf = GradBuffers.from_dict(self.state.splats.ids, self.grads)
        try:
            buf.check_finite()
        except NonFiniteGradientError as exc:
            raise NonFiniteGradientError(f"step {step}: {exc}") from None
        self.opt.step(self.state.splats, self.grads, self._lrs)
        self.grads = None
        return Ack(TYPE_IDS[Step], step)

    def _repartition(self, msg: Repartition):
        self.state = WorkerState(msg.k, msg.subspace, msg.splats, msg.epoch, msg.shared_ids)
        self.opt = Adam(msg.splats, state=msg.opt_state, step=msg.opt_step)
        self.pending.clear()
        self.grads = None
        self.last_view = None
        return Ack(TYPE_IDS[Repartition], msg.epoch, {"splats": len(msg.splats)})

    def _edges(self):
        # subspaces are axis-aligned boxes, so a splat whose reach stays strictly
        # inside every face of this one cannot be required by any other subset
        s = self.state.splats
        slack = s.reach(self.reach_multiplier) * (1.0 + _MEMBERSHIP_EPS) + _MEMBERSHIP_EPS
        near = np.zeros(len(s), dtype=bool)
        for p in self.state.subspace.planes:
            near |= p.value(s.mu) >= -slack
        rows = np.nonzero(near)[0]
        return EdgeSplats(self.state.k, s.take(rows), {n: v[rows] for n, v in self.opt.state.items()})

    def _add(self, msg: AddSplats):
        if self.pending or self.grads is not None:
            raise RuntimeError("AddSplats between a render and its optimizer step")
        s = self.state.splats
        rows = np.nonzero(~np.isin(msg.splats.ids, s.ids))[0]
        if len(rows):
            self.state.splats = SplatSet.concat([s, msg.splats.take(rows)])
            self.opt.state = {n: np.concatenate([v, msg.opt_state[n][rows]]) for n, v in self.opt.state.items()}
        self.state.shared_ids = np.asarray(msg.shared_ids, dtype=np.int64)
        return Ack(TYPE_IDS[AddSplats], len(rows), {"splats": len(self.state.splats)})

    def _checkpoint(self, msg: Checkpoint):
        if not msg.path:
            return Snapshot(self.state.k, self.state.epoch, self.state.splats.copy(),
                            {k: v.copy() for k, v in self.opt.state.items()}, self.opt.step_count)
        from ..io.ply import save_splats_ply

        save_splats_ply(msg.path, self.state.splats)
        return Ack(TYPE_IDS[Checkpoint], 0, {"path": msg.path})


def worker_main(conn):
    """Process entry point: serve frames from ``conn`` until Shutdown."""
    worker = Worker()
    while worker.running:
        try:
            frame = conn.recv_bytes()
        except EOFError:
            break
        msg, _ = decode(frame)
        reply = worker.handle(msg)
        conn.send_bytes(encode(reply)[0])
    conn.close()
