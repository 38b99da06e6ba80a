"""Workload balance, communication volume and barrier-wait accounting."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import raster
from .engine.manager import Manager
from .partition import assign_subsets, build_fixed_grid, build_kdtree, leaf_center_counts
from .sh import num_coeffs


def floats_per_splat(sh_degree):
    return 3 + 3 + 4 + 1 + 3 * num_coeffs(sh_degree)


def bytes_per_splat(sh_degree, scalar_bytes=4, with_optimizer=True):
    """Parameters, plus two moment buffers when ``with_optimizer``."""
    return floats_per_splat(sh_degree) * scalar_bytes * (3 if with_optimizer else 1)


@dataclass
class BalanceReport:
    kind: str
    K: int
    total: int
    counts: list                 # |N_k|, overlap included
    center_counts: list          # centers per subspace, no overlap
    count_min: int
    count_max: int
    count_mean: float
    ratio: float                 # max / min over non-empty subsets
    overlap_fraction: float      # (sum |N_k| - N) / N
    memory_bytes: list           # per worker
    comm_bytes_per_view: int = 0
    times: dict = field(default_factory=dict)

    def as_record(self):
        return asdict(self)

    def text(self):
        lines = [f"{self.kind} K={self.K} splats={self.total}",
                 f"  subset sizes min={self.count_min} max={self.count_max} mean={self.count_mean:.1f} "
                 f"ratio={self.ratio:.3f} overlap={self.overlap_fraction:.3%}",
                 f"  centers per subspace {self.center_counts}",
                 f"  memory per worker {[f'{m / 2**20:.2f}MiB' for m in self.memory_bytes]}"]
        if self.comm_bytes_per_view:
            lines.append(f"  partial-map bytes per view {self.comm_bytes_per_view}")
        for k, v in self.times.items():
            lines.append(f"  {k} {v:.1f} ms")
        return "\n".join(lines)


def _ratio(counts):
    nz = [c for c in counts if c > 0]
    return float(max(nz) / min(nz)) if nz else 1.0


def balance_stats(table, splats, camera=None, scalar_bytes=4):
    """Exact per-subset counts and derived statistics of a filled table."""
    if table.membership is None:
        raise ValueError("partition table has no membership")
    counts = [int(len(m)) for m in table.membership]
    centers = leaf_center_counts(table, splats.mu).tolist() if len(splats) else [0] * table.K
    total = len(splats)
    per = bytes_per_splat(splats.sh_degree, scalar_bytes)
    return BalanceReport(
        table.kind, table.K, total, counts, centers, min(counts), max(counts),
        float(np.mean(counts)), _ratio(counts),
        (sum(counts) - total) / total if total else 0.0,
        [c * per for c in counts],
        comm_model(camera, table.K, scalar_bytes) if camera is not None else 0,
    )


def comm_model(camera, K, scalar_bytes=4):
    """Partial-map bytes one view sends to the manager (the backward pass sends as many)."""
    if K <= 0:
        return 0
    return K * camera.height * camera.width * 4 * scalar_bytes


def data_parallel_bytes(n_splats, sh_degree, K, scalar_bytes=4):
    """Per-step gradient exchange of a fully replicated model: every worker ships all gradients."""
    return K * n_splats * floats_per_splat(sh_degree) * scalar_bytes


def grid_table(bounds, K):
    """Fixed grid with ``K`` equal cells (``K`` a power of two), splitting axes x, y, z in turn."""
    bounds = np.asarray(bounds, dtype=np.float64)
    cells = [1, 1, 1]
    for i in range(int(np.log2(K))):
        cells[i % 3] *= 2
    size = (bounds[1] - bounds[0]) / np.array(cells)
    return build_fixed_grid(bounds, size)


def make_table(splats, K, kind="kdtree", bounds=None):
    if kind == "kdtree":
        table = build_kdtree(splats.mu, int(np.log2(K)))
    elif kind in ("grid", "fixed-grid"):
        if bounds is None:
            bounds = np.array([splats.mu.min(axis=0), splats.mu.max(axis=0)])
        table = grid_table(bounds, K)
    else:
        raise ValueError(f"unknown partition kind {kind!r}")
    return assign_subsets(table, splats)


@dataclass
class TimingRow:
    mode: str
    kind: str
    K: int
    batch: int
    views: int
    compute_ms: list       # per worker, summed over views
    wait_ms: list          # per worker, time spent blocked at barriers
    max_wait_fraction: float
    critical_path_ms: float  # sum over barriers of the slowest worker
    merge_ms: float
    comm_bytes: int

    @property
    def total_ms(self):
        return self.critical_path_ms + self.merge_ms


def timing_harness(splats, cameras, K=2, batch=1, mode="mp", kind="kdtree", bounds=None,
                   dtype="float32", processes=False, repeats=1, table=None):
    """Per-worker compute / wait accounting over a fixed view list.

    Workers report their own compute time per task.  ``batch`` may be a list:
    the views are measured once and one row is returned per batch size.  At
    each barrier (every ``batch`` views) the step lasts as long as the busiest worker; every
    other worker waits for the difference.  ``mode="mono"`` renders the same
    views with the single-worker renderer and reports no communication.
    """
    batches = [batch] if np.isscalar(batch) else list(batch)
    views = list(cameras) * repeats
    if mode == "mono":
        t = []
        for cam in views:
            t0 = time.perf_counter()
            raster.render_view(splats, cam, dtype=np.dtype(dtype).type)
            t.append((time.perf_counter() - t0) * 1e3)
        total = float(np.sum(t))
        rows = [TimingRow("mono", "-", 1, b, len(views), [total], [0.0], 0.0, total, 0.0, 0)
                for b in batches]
        return rows[0] if np.isscalar(batch) else rows
    if table is None:
        table = make_table(splats, K, kind, bounds)
    mgr = Manager.launch(splats, table=table, processes=processes, dtype=dtype, stop_T=1e-4)
    try:
        mgr.reset_counters()
        per_view = []
        merge_ms = 0.0
        for cam in views:
            t0 = time.perf_counter()
            res = mgr.render(cam)
            wall = (time.perf_counter() - t0) * 1e3
            comp = [float(s["compute_ms"]) for s in res.stats]
            per_view.append(comp)
            merge_ms += max(wall - sum(comp), 0.0) if not processes else max(wall - max(comp), 0.0)
        comm = mgr.bytes()["map_forward"]
    finally:
        mgr.shutdown()
    per_view = np.array(per_view)
    rows = [_barrier_row("mp", table.kind, table.K, b, per_view, merge_ms, comm) for b in batches]
    return rows[0] if np.isscalar(batch) else rows


def _barrier_row(mode, kind, K, batch, per_view, merge_ms, comm):
    n = len(per_view)
    busy_total = np.zeros(per_view.shape[1])
    wait_total = np.zeros(per_view.shape[1])
    critical = 0.0
    for s in range(0, n, batch):
        busy = per_view[s:s + batch].sum(axis=0)
        step = busy.max()
        critical += step
        busy_total += busy
        wait_total += step - busy
    frac = float((wait_total / critical).max()) if critical > 0 else 0.0
    return TimingRow(mode, kind, K, batch, n, busy_total.tolist(), wait_total.tolist(), frac,
                     float(critical), float(merge_ms), int(comm))


def format_rows(rows):
    header = f"{'mode':<5} {'kind':<10} {'K':>2} {'batch':>5} {'views':>5} {'max_wait':>8} " \
             f"{'critical_ms':>11} {'merge_ms':>8} {'comm_bytes':>11}"
    out = [header]
    for r in rows:
        out.append(f"{r.mode:<5} {r.kind:<10} {r.K:>2} {r.batch:>5} {r.views:>5} "
                   f"{r.max_wait_fraction:>8.3f} {r.critical_path_ms:>11.1f} {r.merge_ms:>8.1f} "
                   f"{r.comm_bytes:>11}")
    return "\n".join(out)
