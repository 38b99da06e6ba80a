"""Executable checks of the distributed renderer against its monolithic oracle."""
from dataclasses import dataclass, field

import numpy as np

from .. import _kernels, raster
from ..partition import PartitionTable, Subspace, assign_subsets, axis_halfspaces, build_kdtree, ray_intervals
from ..splat import Camera, SplatSet, project
from .core import WorkerState, merge, partial_render, pixel_orders, render_distributed


@dataclass
class BoundaryReport:
    passed: bool
    camera: Camera
    table: PartitionTable
    partials: list
    merged: object
    off_side: list            # per subset, bool (H, W) mask of pixels whose ray never enters S_k
    offending: dict = field(default_factory=dict)  # k -> (n, 2) array of (row, col)

    def summary(self):
        lines = []
        for k, mask in enumerate(self.off_side):
            bad = self.offending.get(k, np.zeros((0, 2), int))
            lines.append(f"subset {k}: off-side pixels {int(mask.sum())}, violations {len(bad)}")
            for r, c in bad[:10]:
                p = self.partials[k]
                lines.append(f"  pixel ({r},{c}) C={p.C[r, c].tolist()} T={float(p.T[r, c])}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def split_table(axis, value, splats=None):
    """Two-leaf partition split by the plane ``x[axis] = value``."""
    left, right = axis_halfspaces(axis, value)
    table = PartitionTable([Subspace(0, [left]), Subspace(1, [right])], depth=1, kind="kdtree",
                           splits=[(axis, float(value))])
    return assign_subsets(table, splats) if splats is not None else table


def axis_camera_on_plane(splats, axis, value, width=64, height=64, fx=60.0, distance=None):
    """Camera whose center and optical axis both lie in the plane ``x[axis] = value``."""
    lo, hi = splats.mu.min(axis=0), splats.mu.max(axis=0)
    center = 0.5 * (lo + hi)
    center[axis] = value
    a1, a2 = (axis + 1) % 3, (axis + 2) % 3
    extent = float(np.max(hi - lo)) if len(splats) else 1.0
    dist = distance if distance is not None else 2.5 * max(extent, 1e-3)
    eye = center.copy()
    eye[a1] -= dist
    up = np.zeros(3)
    up[a2] = 1.0
    return Camera.look_at(eye, center, up, width, height, fx)


def boundary_validity_test(splats: SplatSet, axis=0, value=None, camera=None, gate=True,
                           dtype=np.float64):
    """Check that each half's partial image is exactly empty where its rays never enter it.

    ``gate=False`` disables the intersection-point indicator (negative control).
    """
    if value is None:
        value = float(np.median(splats.mu[:, axis]))
    table = split_table(axis, value, splats)
    if camera is None:
        camera = axis_camera_on_plane(splats, axis, value)
    partials = []
    for s in table.subspaces:
        state = WorkerState(s.k, s, splats.select_ids(table.membership[s.k]), table.epoch)
        partials.append(partial_render(state, camera, dtype=dtype, stop_T=0.0, gate=gate)[0])
    orders = pixel_orders(camera, table)
    merged = merge(partials, orders)
    t_in, t_out = ray_intervals(camera.center, camera.pixel_dirs(), table)
    off_side, offending = [], {}
    for k, p in enumerate(partials):
        never = ~((t_out[..., k] > 0) & (t_in[..., k] < t_out[..., k]))
        off_side.append(never)
        bad = never & ((p.T != 1) | np.any(p.C != 0, axis=-1))
        if bad.any():
            offending[k] = np.argwhere(bad)
    passed = not offending and all(m.any() for m in off_side)
    return BoundaryReport(passed, camera, table, partials, merged, off_side, offending)


def equivalence_check(splats, table, camera, dtype=np.float64, background=(0.0, 0.0, 0.0)):
    """Max per-channel |distributed - monolithic| for one view (termination off)."""
    mono = raster.render_view(splats, camera, background, stop_T=0.0, dtype=dtype)
    dist, _, _ = render_distributed(splats, table, camera, background, dtype=dtype)
    return float(np.max(np.abs(dist.color.astype(np.float64) - mono.color.astype(np.float64))))


def ring_cameras(n, radius, width=64, height=64, fx=60.0, elevation=0.35, seed=None, target=(0, 0, 0)):
    """``n`` cameras on a ring around ``target``; random azimuth jitter when ``seed`` is given."""
    rng = np.random.default_rng(seed) if seed is not None else None
    cams = []
    for i in range(n):
        az = 2 * np.pi * i / max(n, 1)
        el = elevation
        if rng is not None:
            az += rng.uniform(0, 2 * np.pi / max(n, 1))
            el = elevation + rng.uniform(-0.25, 0.25)
        eye = np.asarray(target, float) + radius * np.array(
            [np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)])
        cams.append(Camera.look_at(eye, target, [0, 1, 0], width, height, fx, name=f"cam{i:03d}"))
    return cams


def equivalence_sweep(scenes, Ks=(2, 4, 8), cameras_per_scene=8, dtypes=(np.float64, np.float32),
                      size=48, seed=0):
    """Records ``{scene, K, camera, dtype, error}`` over every combination."""
    records = []
    for si, splats in enumerate(scenes):
        extent = float(np.max(np.abs(splats.mu))) if len(splats) else 1.0
        cams = ring_cameras(cameras_per_scene, 3.0 * max(extent, 0.1), size, size, size * 0.9,
                            seed=seed + si)
        tables = {K: assign_subsets(build_kdtree(splats.mu, int(np.log2(K))), splats) for K in Ks}
        for ci, cam in enumerate(cams):
            for dt in dtypes:
                mono = raster.render_view(splats, cam, stop_T=0.0, dtype=dt).color.astype(np.float64)
                for K in Ks:
                    dist = render_distributed(splats, tables[K], cam, dtype=dt)[0].color
                    records.append({"scene": si, "n": len(splats), "K": K, "camera": ci,
                                    "dtype": np.dtype(dt).name,
                                    "error": float(np.max(np.abs(dist.astype(np.float64) - mono)))})
    return records


def contribution_counts(splats, table, cameras):
    """Per-(ray, splat) contribution counts summed over subsets.

    Returns ``(counts, missing)``: ``counts`` holds one entry per distinct
    (ray, splat) pair that contributed in any subset; ``missing`` is the
    number of monolithic contributions absent from every subset.
    """
    all_counts, missing = [], 0
    for cam in cameras:
        n_pix = cam.width * cam.height
        keys = []
        for s in table.subspaces:
            sub = splats.select_ids(table.membership[s.k])
            pix, ids = _kernels.contributions(project(sub, cam), cam, s.planes)
            keys.append(ids * n_pix + pix)
        keys = np.concatenate(keys) if keys else np.zeros(0, np.int64)
        uniq, counts = np.unique(keys, return_counts=True)
        all_counts.append(counts)
        pix, ids = _kernels.contributions(project(splats, cam), cam, None)
        mono = np.unique(ids * n_pix + pix)
        missing += int(np.setdiff1d(mono, uniq).size) + int(np.setdiff1d(uniq, mono).size)
    counts = np.concatenate(all_counts) if all_counts else np.zeros(0, np.int64)
    return counts, missing
