"""Per-subset partial rendering and the ordered merge of partial maps."""
from dataclasses import dataclass, field

import numpy as np

from .. import _kernels
from ..partition import ray_orders
from ..raster import RenderedImage
from ..splat import TRUNCATION, Camera, SplatSet, project, project_backward


class EpochMismatchError(RuntimeError):
    pass


class MissingPartialError(KeyError):
    pass


@dataclass
class PartialImage:
    k: int
    view_id: int
    C: np.ndarray
    T: np.ndarray
    count: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.T.shape

    @property
    def payload_bytes(self):
        return self.C.nbytes + self.T.nbytes


@dataclass
class WorkerState:
    """What one worker owns: its subspace and a private copy of its subset."""

    k: int
    subspace: object
    splats: SplatSet
    epoch: int = 0
    shared_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def partial_render(worker: WorkerState, camera: Camera, epoch=None, dtype=np.float64, stop_T=0.0,
                   view_id=0, gate=True, sh_degree=None, reach_multiplier=TRUNCATION,
                   keep_cache=False):
    """Partial color and transmittance of one subset, without background.

    With ``gate`` a splat only counts on rays whose closest point to its
    center lies inside the worker's subspace.  ``gate=False`` is a test hook
    for the negative control.  Returns ``(PartialImage, Projection)``.
    """
    if epoch is not None and epoch != worker.epoch:
        raise EpochMismatchError(f"partition epoch mismatch: worker {worker.k} at {worker.epoch}, "
                                 f"task for {epoch}")
    proj = project(worker.splats, camera, sh_degree, reach_multiplier, keep_cache=keep_cache)
    planes = worker.subspace.planes if gate else None
    C, T, count = _kernels.composite(proj, camera, planes, (0.0, 0.0, 0.0), stop_T, dtype)
    return PartialImage(worker.k, view_id, C, T, count), proj


def partial_backward(worker: WorkerState, camera: Camera, proj, grad_C, grad_T, dtype=np.float64,
                     stop_T=0.0):
    """Parameter gradients of one subset given the merge adjoint maps."""
    d_m, d_k, d_c, d_a = _kernels.composite_backward(
        proj, camera, grad_C, grad_T, worker.subspace.planes, (0.0, 0.0, 0.0), stop_T, dtype)
    return project_backward(worker.splats, camera, proj, d_m, d_k, d_c, d_a)


def pixel_orders(camera: Camera, table):
    """Per-pixel merge order ``(H, W, K)``, ``-1`` padded."""
    return ray_orders(camera.center, camera.pixel_dirs(), table)


def _stack(partials, K):
    by_k = {p.k: p for p in partials}
    missing = [k for k in range(K) if k not in by_k]
    if missing:
        raise MissingPartialError(f"missing partial results for subsets {missing}")
    C = np.stack([by_k[k].C for k in range(K)])
    T = np.stack([by_k[k].T for k in range(K)])
    return C, T


def merge(partials, orders, background=(0.0, 0.0, 0.0)):
    """Compose partial maps front to back along each pixel's subspace order."""
    K = orders.shape[-1]
    C, T = _stack(partials, K)
    dt = C.dtype
    bg = np.asarray(background, dtype=dt)
    H, W = orders.shape[:2]
    yy, xx = np.mgrid[0:H, 0:W]
    acc = np.zeros((H, W, 3), dt)
    P = np.ones((H, W), dt)
    for r in range(K):
        k = orders[..., r]
        valid = k >= 0
        kk = np.where(valid, k, 0)
        Ck = C[kk, yy, xx]
        Tk = T[kk, yy, xx]
        acc = np.where(valid[..., None], acc + Ck * P[..., None], acc)
        P = np.where(valid, P * Tk, P)
    return RenderedImage(acc + P[..., None] * bg, P, np.asarray(background, dtype=np.float64))


def merge_backward(partials, orders, grad_color, grad_T_total=None, background=(0.0, 0.0, 0.0)):
    """Adjoint of :func:`merge`: ``{k: (grad_C_k, grad_T_k)}`` for every subset."""
    K = orders.shape[-1]
    C, T = _stack(partials, K)
    C = C.astype(np.float64)
    T = T.astype(np.float64)
    H, W = orders.shape[:2]
    grad_color = np.asarray(grad_color, dtype=np.float64)
    gT = np.zeros((H, W)) if grad_T_total is None else np.asarray(grad_T_total, dtype=np.float64)
    yy, xx = np.mgrid[0:H, 0:W]

    prefix = np.ones((K, H, W))
    P = np.ones((H, W))
    for r in range(K):
        k = orders[..., r]
        valid = k >= 0
        prefix[r] = P
        P = np.where(valid, P * T[np.where(valid, k, 0), yy, xx], P)

    dC = np.zeros((K, H, W, 3))
    dT = np.zeros((K, H, W))
    R = np.broadcast_to(np.asarray(background, dtype=np.float64), (H, W, 3)).copy()
    Q = np.ones((H, W))
    for r in range(K - 1, -1, -1):
        k = orders[..., r]
        valid = k >= 0
        kk = np.where(valid, k, 0)
        Pr = prefix[r]
        yv, xv, kv = yy[valid], xx[valid], kk[valid]
        dC[kv, yv, xv] = grad_color[valid] * Pr[valid][:, None]
        dT[kv, yv, xv] = Pr[valid] * (np.sum(grad_color[valid] * R[valid], axis=1) + gT[valid] * Q[valid])
        Ck = C[kk, yy, xx]
        Tk = T[kk, yy, xx]
        R = np.where(valid[..., None], Ck + Tk[..., None] * R, R)
        Q = np.where(valid, Tk * Q, Q)
    return {k: (dC[k], dT[k]) for k in range(K)}


def render_distributed(splats: SplatSet, table, camera: Camera, background=(0.0, 0.0, 0.0),
                       dtype=np.float64, stop_T=0.0, gate=True, sh_degree=None):
    """In-process reference path: partial-render every subset and merge."""
    if table.membership is None:
        raise ValueError("partition table has no membership; call assign_subsets first")
    partials = []
    for s in table.subspaces:
        state = WorkerState(s.k, s, splats.select_ids(table.membership[s.k]), table.epoch)
        partials.append(partial_render(state, camera, dtype=dtype, stop_T=stop_T, gate=gate,
                                       sh_degree=sh_degree)[0])
    orders = pixel_orders(camera, table)
    return merge(partials, orders, background), partials, orders
