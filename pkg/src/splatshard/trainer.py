"""Training loop over the manager/worker engine with a fixed splat count."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import raster
from .engine.manager import Manager
from .io.metrics import psnr, ssim
from .optim import DEFAULT_LRS, exp_decay_lr
from .partition import plan_repartition
from .sh import C0, num_coeffs
from .splat import SplatSet, logit

log = logging.getLogger(__name__)

INIT_OPACITY = 0.1


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 2000
    epochs: int | None = None          # overrides iterations when set
    batch_size: int = 1                # views rendered before each optimizer barrier
    lambda_ssim: float = 0.2
    lrs: dict = field(default_factory=lambda: dict(DEFAULT_LRS))
    lr_position_start: float = 1.6e-4
    lr_position_end: float = 1.6e-6
    position_lr_scale: float | None = None  # None: camera-rig extent
    repartition_interval: int = 0      # epochs; 0 disables
    grad_sync: bool = False
    depth: int = 0                     # KD-tree depth, K = 2**depth workers
    processes: bool = False
    dtype: str = "float32"
    stop_T: float = 1e-4
    background: tuple = (0.0, 0.0, 0.0)
    log_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ValueError("lambda_ssim must lie in [0, 1]")
        if self.lr_position_end > self.lr_position_start:
            raise ValueError("position LR end must not exceed its start")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def oracle(cls, **kw):
        """Double precision, no early termination."""
        kw.setdefault("dtype", "float64")
        kw.setdefault("stop_T", 0.0)
        return cls(**kw)


def loss(render, target, lambda_ssim=0.2):
    """``(1 - lambda) L1 + lambda (1 - SSIM)``; returns ``(value, d value / d render)``."""
    color = render.color if hasattr(render, "color") else render
    color = np.asarray(color, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if color.shape != target.shape:
        raise ValueError(f"resolution mismatch: {color.shape} vs {target.shape}")
    diff = color - target
    l1 = float(np.abs(diff).mean())
    grad = (1.0 - lambda_ssim) * np.sign(diff) / diff.size
    value = (1.0 - lambda_ssim) * l1
    if lambda_ssim > 0:
        s, ds = ssim(color, target, return_grad=True)
        value += lambda_ssim * (1.0 - s)
        grad = grad - lambda_ssim * ds
    return value, grad


def init_from_pointcloud(cloud, target_count, seed=0, sh_degree=3):
    """Exactly ``target_count`` isotropic splats seeded from a colored point cloud.

    Points are subsampled uniformly without replacement; when more splats
    than points are requested the surplus is drawn with replacement and
    jittered.  Scales start at the mean distance to the three nearest
    sampled neighbors.
    """
    pts = np.asarray(cloud.points, dtype=np.float64)
    cols = np.asarray(cloud.colors, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty point cloud")
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    rng = np.random.default_rng(seed)
    if target_count <= len(pts):
        pick = np.sort(rng.choice(len(pts), target_count, replace=False))
        mu, rgb = pts[pick], cols[pick]
    else:
        extra = rng.integers(0, len(pts), target_count - len(pts))
        spacing = _knn_mean_distance(pts)
        jitter = rng.normal(0.0, 1.0, (len(extra), 3)) * 0.5 * spacing[extra, None]
        mu = np.concatenate([pts, pts[extra] + jitter])
        rgb = np.concatenate([cols, cols[extra]])
    dist = _knn_mean_distance(mu)
    N = len(mu)
    log_scale = np.repeat(np.log(dist)[:, None], 3, axis=1)
    rotation = np.tile([1.0, 0.0, 0.0, 0.0], (N, 1))
    sh = np.zeros((N, num_coeffs(sh_degree), 3))
    sh[:, 0] = (rgb - 0.5) / C0
    opacity = np.full(N, logit(INIT_OPACITY))
    return SplatSet(np.arange(N, dtype=np.int64), mu, log_scale, rotation, opacity, sh)


def _knn_mean_distance(pts, k=3, floor=1e-7):
    n = len(pts)
    if n < 2:
        return np.ones(n)
    kk = min(k, n - 1)
    d, _ = cKDTree(pts).query(pts, k=kk + 1)
    return np.maximum(np.asarray(d)[:, 1:].mean(axis=1), floor)


def camera_extent(cameras):
    """Radius of the camera-center cloud around its mean, padded by 10%."""
    c = np.array([cam.center for cam in cameras])
    return 1.1 * float(np.max(np.linalg.norm(c - c.mean(axis=0), axis=1))) if len(c) else 1.0


def evaluate(splats, views, background=(0.0, 0.0, 0.0), dtype=np.float32):
    """Mean PSNR / SSIM of monolithic renders against held-out targets."""
    ps, ss = [], []
    for cam, target in views:
        img = raster.render_view(splats, cam, background, dtype=dtype).color.astype(np.float64)
        ps.append(psnr(np.clip(img, 0, 1), target))
        ss.append(ssim(np.clip(img, 0, 1), target))
    return {"psnr": float(np.mean(ps)) if ps else float("nan"),
            "ssim": float(np.mean(ss)) if ss else float("nan")}


@dataclass
class TrainResult:
    splats: SplatSet
    records: list
    losses: list
    table: object
    replica_divergence: float = 0.0


def repartition(manager: Manager, depth=None):
    """Rebuild the partition on current centers and migrate splats + optimizer state."""
    return manager.repartition(depth)


def train(splats: SplatSet, views, config: TrainConfig = None, metric_log=None, manager=None):
    """Optimize ``splats`` against ``views`` (list of ``(camera, target)``) through the engine.

    ``metric_log`` may be a path or a writable text stream; one JSON record
    ``{step, loss, psnr, lr_position, comm_bytes, wall_ms}`` is written every
    ``log_every`` steps.  The splat count never changes.
    """
    config = config or TrainConfig()
    if not views:
        raise ValueError("no training views")
    n_start = len(splats)
    own_manager = manager is None
    if own_manager:
        manager = Manager.launch(splats, depth=config.depth, processes=config.processes,
                                 dtype=config.dtype, stop_T=config.stop_T,
                                 background=config.background)
    steps_per_epoch = -(-len(views) // config.batch_size)
    total = config.iterations if config.epochs is None else config.epochs * steps_per_epoch
    scale = config.position_lr_scale
    if scale is None:
        scale = camera_extent([c for c, _ in views])
    rng = np.random.default_rng(config.seed)
    sink = open(metric_log, "w") if isinstance(metric_log, str) else metric_log
    records, losses = [], []
    t0 = time.perf_counter()
    order = []
    try:
        for step in range(total):
            if not order:
                order = list(rng.permutation(len(views)))
            batch = [order.pop(0) for _ in range(min(config.batch_size, len(order)))]
            lrs = dict(config.lrs)
            lrs["mu"] = scale * exp_decay_lr(step, total, config.lr_position_start,
                                             config.lr_position_end)
            batch_loss, batch_psnr = 0.0, 0.0
            for i in batch:
                cam, target = views[i]
                res = manager.render(cam, keep=True)
                value, grad = loss(res.image, target, config.lambda_ssim)
                if not np.isfinite(value):
                    raise TrainingDivergedError(f"non-finite loss at step {step}")
                manager.backward(res, grad / len(batch))
                batch_loss += value / len(batch)
                batch_psnr += psnr(res.image.color, target) / len(batch)
            manager.step(lrs, config.grad_sync)
            losses.append(batch_loss)
            if config.log_every and (step % config.log_every == 0 or step == total - 1):
                rec = {"step": step, "loss": batch_loss, "psnr": batch_psnr, "lr_position": lrs["mu"],
                       "comm_bytes": manager.bytes()["map_forward"] + manager.bytes()["map_backward"],
                       "wall_ms": (time.perf_counter() - t0) * 1e3}
                records.append(rec)
                if sink is not None:
                    sink.write(json.dumps(rec) + "\n")
                    sink.flush()
            if (config.repartition_interval and not order
                    and ((step + 1) // steps_per_epoch) % config.repartition_interval == 0
                    and step + 1 < total):
                table, plan = manager.repartition()
                log.info("repartitioned at step %d: epoch %d, %d splats moved", step, table.epoch, len(plan))
        divergence = manager.replica_divergence()
        final, _, _ = manager.snapshot()
        table = manager.table
    finally:
        if own_manager:
            manager.shutdown()
        if isinstance(metric_log, str) and sink is not None:
            sink.close()
    if len(final) != n_start:
        raise RuntimeError(f"splat count changed from {n_start} to {len(final)}")
    return TrainResult(final, records, losses, table, divergence)


__all__ = ["TrainConfig", "TrainResult", "TrainingDivergedError", "evaluate", "init_from_pointcloud",
           "loss", "plan_repartition", "repartition", "train"]
