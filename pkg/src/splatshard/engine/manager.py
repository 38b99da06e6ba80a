"""Central manager: owns the partition, dispatches tasks, merges, reduces gradients."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from ..optim import Adam
from ..partition import assign_subsets, build_kdtree, membership_mask, plan_repartition
from ..splat import SplatSet
from .core import merge, merge_backward, pixel_orders
from .protocol import (
    Ack, AddSplats, BackwardTask, Checkpoint, EdgeQuery, EdgeSplats, ErrorReply, GradSync, PartialResult,
    ProtocolError, RenderTask, Repartition, Shutdown, Snapshot, Step,
)
from .transport import InProcessEndpoint, ProcessEndpoint

log = logging.getLogger(__name__)


def default_worker_count():
    return int(os.environ.get("SPLATSHARD_WORKERS", "4"))


@dataclass
class ViewResult:
    view_id: int
    image: object
    partials: list
    orders: np.ndarray
    stats: list
    loss: float | None = None


class Manager:
    def __init__(self, endpoints, table, background=(0.0, 0.0, 0.0), dtype="float64", stop_T=0.0,
                 timeout=None, track_membership=True, reach_multiplier=3.0):
        if table.membership is None:
            raise ValueError("partition table needs membership")
        if len(endpoints) != table.K:
            raise ValueError(f"{len(endpoints)} workers for {table.K} subsets")
        self.endpoints = endpoints
        self.table = table
        self.background = np.asarray(background, dtype=np.float64)
        self.dtype = np.dtype(dtype).name
        self.stop_T = stop_T
        self.timeout = timeout
        # after every step, copy splats that moved or grew into subsets lacking them
        self.track_membership = track_membership
        self.reach_multiplier = reach_multiplier
        self.copied = 0
        self.next_view = 0
        self.step_count = 0
        self.closed = False

    # -- construction ---------------------------------------------------------

    @classmethod
    def launch(cls, splats: SplatSet, depth=None, table=None, processes=False, timeout=60.0,
               **kwargs):
        """Partition ``splats`` (KD-tree of ``depth``), start one worker per subset, seed them."""
        if table is None:
            if depth is None:
                depth = int(np.log2(default_worker_count()))
            table = build_kdtree(splats.mu, depth)
        if table.membership is None:
            table = assign_subsets(table, splats)
        make = ProcessEndpoint if processes else InProcessEndpoint
        endpoints = [make(k, timeout) for k in range(table.K)]
        mgr = cls(endpoints, table, timeout=timeout, **kwargs)
        mgr._distribute(splats, Adam(splats).state, 0)
        return mgr

    def _distribute(self, splats, opt_state, opt_step):
        shared = self.table.shared_ids()
        for k, ep in enumerate(self.endpoints):
            rows = splats.rows_for(self.table.membership[k])
            sub = splats.take(rows)
            ep.send(Repartition(self.table.epoch, k, self.table.subspaces[k], sub,
                                {n: v[rows] for n, v in opt_state.items()}, opt_step,
                                shared[np.isin(shared, sub.ids)]))
        self._collect(Ack)

    # -- messaging --------------------------------------------------------------

    def _recv(self, k, expect):
        msg = self.endpoints[k].recv(self.timeout)
        if isinstance(msg, ErrorReply):
            raise RuntimeError(msg.message)
        if not isinstance(msg, expect):
            raise ProtocolError(f"worker {k}: expected {expect.__name__}, got {type(msg).__name__}")
        return msg

    def _collect(self, expect):
        return [self._recv(k, expect) for k in range(len(self.endpoints))]

    @property
    def K(self):
        return len(self.endpoints)

    def bytes(self):
        tot = {"sent": 0, "received": 0, "map_forward": 0, "map_backward": 0}
        for ep in self.endpoints:
            for key in tot:
                tot[key] += getattr(ep.counter, key)
        return tot

    def reset_counters(self):
        for ep in self.endpoints:
            ep.counter.reset()

    # -- rendering --------------------------------------------------------------

    def render(self, camera, keep=False, gate=True):
        view_id = self.next_view
        self.next_view += 1
        for ep in self.endpoints:
            ep.send(RenderTask(view_id, self.table.epoch, camera, self.dtype, self.stop_T, gate, keep))
        results = self._collect(PartialResult)
        for k, res in enumerate(results):
            if res.image.k != k or res.image.view_id != view_id:
                raise ProtocolError(f"worker {k} answered for subset {res.image.k} view {res.image.view_id}")
            if res.image.T.shape != (camera.height, camera.width) or res.image.C.shape != (camera.height, camera.width, 3):
                raise ProtocolError(f"worker {k}: partial shape {res.image.C.shape} does not match view")
        partials = [r.image for r in results]
        orders = pixel_orders(camera, self.table)
        image = merge(partials, orders, self.background)
        return ViewResult(view_id, image, partials, orders, [r.stats for r in results])

    def backward(self, view: ViewResult, grad_color, grad_T=None):
        grads = merge_backward(view.partials, view.orders, grad_color, grad_T, self.background)
        dt = np.dtype(self.dtype)
        for k, ep in enumerate(self.endpoints):
            gC, gT = grads[k]
            ep.send(BackwardTask(view.view_id, gC.astype(dt), gT.astype(dt)))
        return self._collect(Ack)

    def step(self, lrs, sync=False):
        """Barrier: every worker applies its optimizer update (after a gradient sync if asked)."""
        self.step_count += 1
        for ep in self.endpoints:
            ep.send(Step(self.step_count, lrs, sync))
        if not sync:
            self._collect(Ack)
            if self.track_membership:
                self.refresh_membership()
            return
        reports = self._collect(GradSync)
        ids = np.concatenate([r.ids for r in reports])
        uniq, inv = np.unique(ids, return_inverse=True)
        summed = {}
        for name in reports[0].grads:
            stacked = np.concatenate([r.grads[name] for r in reports])
            acc = np.zeros((len(uniq),) + stacked.shape[1:])
            np.add.at(acc, inv, stacked)  # sequential, worker-index order
            summed[name] = acc
        for r, ep in zip(reports, self.endpoints):
            pos = np.searchsorted(uniq, r.ids)
            ep.send(GradSync(r.ids, {n: v[pos] for n, v in summed.items()}))
        self._collect(Ack)
        if self.track_membership:
            self.refresh_membership()

    def refresh_membership(self):
        """Keep every subset a superset of the splats its subspace needs.

        Workers report splats whose reach touches their own faces; the
        manager recomputes which subsets require them and sends copies
        (parameters and optimizer moments) to those lacking them.  The planes
        and epoch are unchanged, subsets only grow until the next
        repartition.  Returns the number of copies made.
        """
        for ep in self.endpoints:
            ep.send(EdgeQuery())
        reports = self._collect(EdgeSplats)
        chosen = {}
        for rep in reports:
            inside = self.table.subspaces[rep.k].contains(rep.splats.mu)
            for row, (i, ins) in enumerate(zip(rep.splats.ids, inside)):
                i = int(i)
                if i not in chosen or (ins and not chosen[i][2]):
                    chosen[i] = (rep, row, bool(ins))
        if not chosen:
            return 0
        ids = np.array(sorted(chosen), dtype=np.int64)
        cand = SplatSet.concat([chosen[int(i)][0].splats.take([chosen[int(i)][1]]) for i in ids])
        state = Adam.concat_states([{n: v[[chosen[int(i)][1]]] for n, v in chosen[int(i)][0].opt_state.items()}
                                    for i in ids])
        reach = cand.reach(self.reach_multiplier)
        adds, membership = {}, list(self.table.membership)
        for sub in self.table.subspaces:
            rows = np.nonzero(membership_mask(sub, cand.mu, reach) & ~np.isin(cand.ids, membership[sub.k]))[0]
            if len(rows):
                adds[sub.k] = rows
                membership[sub.k] = np.union1d(membership[sub.k], cand.ids[rows])
        if not adds:
            return 0
        self.table = self.table.with_membership(membership)
        shared = self.table.shared_ids()
        empty = np.zeros(0, dtype=np.int64)
        for k, ep in enumerate(self.endpoints):
            rows = adds.get(k, empty)
            ep.send(AddSplats(cand.take(rows), {n: v[rows] for n, v in state.items()},
                              shared[np.isin(shared, membership[k])]))
        self._collect(Ack)
        n = sum(len(r) for r in adds.values())
        self.copied += n
        log.debug("membership refresh copied %d splats", n)
        return n

    # -- state ------------------------------------------------------------------

    def snapshot(self):
        """Gather one canonical replica per splat; returns (splats, opt_state, opt_step)."""
        for ep in self.endpoints:
            ep.send(Checkpoint(""))
        snaps = self._collect(Snapshot)
        chosen = {}
        for snap in snaps:
            sub = self.table.subspaces[snap.k]
            inside = sub.contains(snap.splats.mu)
            for row, (i, ins) in enumerate(zip(snap.splats.ids, inside)):
                i = int(i)
                # prefer the replica whose center lies in its own subspace, then lowest k
                if i not in chosen or (ins and not chosen[i][2]):
                    chosen[i] = (snap, row, bool(ins))
        ids = np.array(sorted(chosen), dtype=np.int64)
        parts, states = [], []
        for i in ids:
            snap, row, _ = chosen[int(i)]
            parts.append(snap.splats.take([row]))
            states.append({n: v[[row]] for n, v in snap.opt_state.items()})
        splats = SplatSet.concat(parts) if parts else SplatSet.empty()
        state = Adam.concat_states(states) if states else Adam(splats).state
        return splats, state, snaps[0].opt_step

    def replica_divergence(self):
        """Largest parameter difference between replicas of shared splats."""
        for ep in self.endpoints:
            ep.send(Checkpoint(""))
        snaps = self._collect(Snapshot)
        seen = {}
        worst = 0.0
        for snap in snaps:
            s = snap.splats
            for row, i in enumerate(s.ids):
                vec = np.concatenate([s.mu[row], s.log_scale[row], s.rotation[row],
                                      [s.opacity_logit[row]], s.sh[row].ravel()])
                if int(i) in seen:
                    worst = max(worst, float(np.max(np.abs(seen[int(i)] - vec))))
                else:
                    seen[int(i)] = vec
        return worst

    def repartition(self, depth=None):
        """Rebuild the KD-tree on current centers and migrate parameters + optimizer state."""
        splats, state, opt_step = self.snapshot()
        table, plan = plan_repartition(self.table, splats, depth)
        if table.K != self.K:
            raise ValueError("repartition cannot change the worker count")
        self.table = table
        self._distribute(splats, state, opt_step)
        return table, plan

    def save_checkpoint(self, path):
        from ..io.ply import save_splats_ply

        splats, _, _ = self.snapshot()
        save_splats_ply(path, splats)
        return splats

    def shutdown(self):
        if self.closed:
            return
        try:
            for ep in self.endpoints:
                ep.send(Shutdown())
            self._collect(Ack)
        finally:
            for ep in self.endpoints:
                ep.close()
            self.closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def run_manager(views, manager: Manager, loss_fn=None, lrs=None, sync=False, batch_size=1):
    """Drive ``manager`` over ``views``; yields one :class:`ViewResult` per view.

    ``views`` yields cameras (render only) or ``(camera, target)`` pairs with
    ``loss_fn(image, target) -> (loss, grad_color)`` (training).  Workers are
    shut down when the view stream ends.
    """
    try:
        pending = 0
        for view in views:
            t0 = time.perf_counter()
            if loss_fn is None:
                yield manager.render(view)
                continue
            camera, target = view
            res = manager.render(camera, keep=True)
            loss, grad = loss_fn(res.image, target)
            manager.backward(res, grad / batch_size)
            res.loss = float(loss)
            pending += 1
            if pending == batch_size:
                manager.step(lrs, sync)
                pending = 0
            res.stats.append({"wall_ms": (time.perf_counter() - t0) * 1e3})
            yield res
        if pending:
            manager.step(lrs, sync)
    finally:
        manager.shutdown()
