"""Convex space partitions (KD-tree or fixed grid), overlapping subsets, ray ordering.

Every subspace is an intersection of half-spaces ``n . x + d <= 0`` (closed)
or ``< 0`` (open).  Split planes are shared by two siblings with opposite
senses, and outer faces are dropped, so the leaves tile R^3: any point
belongs to exactly one subspace.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .splat import TRUNCATION, Ray, SplatSet

# relative slack on subset membership so rounding never drops a needed splat
_MEMBERSHIP_EPS = 1e-9


class DegeneratePointSetError(ValueError):
    pass


@dataclass(frozen=True)
class HalfSpace:
    n: tuple
    d: float
    closed: bool = True

    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x[..., 0] * self.n[0] + x[..., 1] * self.n[1] + x[..., 2] * self.n[2] + self.d

    def contains(self, x):
        v = self.value(x)
        return v <= 0 if self.closed else v < 0


def axis_halfspaces(axis, value):
    """(left, right) half-spaces of the plane ``x[axis] = value``: left < value, right >= value."""
    e = [0.0, 0.0, 0.0]
    e[axis] = 1.0
    left = HalfSpace(tuple(e), -float(value), closed=False)
    e[axis] = -1.0
    right = HalfSpace(tuple(e), float(value), closed=True)
    return left, right


@dataclass
class Subspace:
    k: int
    planes: list
    aabb: np.ndarray = field(default_factory=lambda: np.array([[-np.inf] * 3, [np.inf] * 3]))

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        inside = np.ones(x.shape[:-1], dtype=bool)
        for p in self.planes:
            inside &= p.contains(x)
        return inside


@dataclass
class PartitionTable:
    subspaces: list
    membership: list | None = None
    depth: int = 0
    kind: str = "kdtree"
    epoch: int = 0
    # KD split records (axis, value) in breadth-first order, for equality checks
    splits: list = field(default_factory=list)

    def __len__(self):
        return len(self.subspaces)

    @property
    def K(self):
        return len(self.subspaces)

    def locate(self, points):
        """Index of the subspace owning each point."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        owner = np.full(len(points), -1, dtype=np.int64)
        for s in self.subspaces:
            owner[s.contains(points)] = s.k
        return owner

    def with_membership(self, membership):
        return PartitionTable(self.subspaces, membership, self.depth, self.kind, self.epoch,
                              self.splits)

    def shared_ids(self):
        """Ids that appear in more than one subset."""
        if not self.membership:
            return np.zeros(0, np.int64)
        ids, counts = np.unique(np.concatenate(self.membership), return_counts=True)
        return ids[counts > 1]

    def dump(self, out=None):
        """Human-readable listing of every leaf's planes and member ids."""
        buf = out or io.StringIO()
        buf.write(f"partition kind={self.kind} depth={self.depth} leaves={self.K} epoch={self.epoch}\n")
        for s in self.subspaces:
            buf.write(f"leaf {s.k}\n")
            for p in s.planes:
                op = "<=" if p.closed else "<"
                buf.write(f"  plane n=({p.n[0]:g},{p.n[1]:g},{p.n[2]:g}) d={p.d!r} {op} 0\n")
            if self.membership is not None:
                ids = self.membership[s.k]
                buf.write(f"  members {len(ids)}: {' '.join(str(int(i)) for i in ids)}\n")
        return buf.getvalue() if out is None else None


def _split_value(values):
    v = np.sort(values)
    n = len(v)
    if n % 2 == 0:
        return 0.5 * (v[n // 2 - 1] + v[n // 2])
    return v[(n - 1) // 2]


def _choose_split(pts, extent):
    """Widest axis whose median split is balanced; ties on the widest axis fall through."""
    order = np.argsort(-extent, kind="stable")
    for axis in order:
        if extent[axis] <= 0:
            break
        value = float(_split_value(pts[:, axis]))
        if np.count_nonzero(pts[:, axis] < value) == len(pts) // 2:
            return int(axis), value
    axis = int(order[0])
    return axis, float(_split_value(pts[:, axis]))


def build_kdtree(centers, L):
    """KD-tree with ``2**L`` leaves, median splits along the widest axis."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if len(centers) == 0:
        raise ValueError("centers must be non-empty")
    if L < 0:
        raise ValueError("depth must be >= 0")
    if L > 0 and np.all(np.ptp(centers, axis=0) == 0):
        raise DegeneratePointSetError("degenerate point set")

    # nodes: (point indices, planes, aabb, parent axis)
    level = [(np.arange(len(centers)), [], np.array([[-np.inf] * 3, [np.inf] * 3]), -1)]
    splits = []
    for _ in range(L):
        nxt = []
        for idx, planes, box, parent_axis in level:
            pts = centers[idx]
            extent = np.ptp(pts, axis=0) if len(pts) else np.zeros(3)
            if len(pts) >= 2 and extent.max() > 0:
                axis, value = _choose_split(pts, extent)
            else:
                # nothing left to balance: split anyway to keep 2**L leaves
                axis = (parent_axis + 1) % 3
                if len(pts):
                    value = float(pts[0, axis])
                elif np.all(np.isfinite(box[:, axis])):
                    value = float(0.5 * (box[0, axis] + box[1, axis]))
                elif np.isfinite(box[0, axis]):
                    value = float(box[0, axis] + 1.0)
                elif np.isfinite(box[1, axis]):
                    value = float(box[1, axis] - 1.0)
                else:
                    value = 0.0
            splits.append((axis, value))
            left_hs, right_hs = axis_halfspaces(axis, value)
            goes_left = pts[:, axis] < value
            lbox, rbox = box.copy(), box.copy()
            lbox[1, axis] = value
            rbox[0, axis] = value
            nxt.append((idx[goes_left], planes + [left_hs], lbox, axis))
            nxt.append((idx[~goes_left], planes + [right_hs], rbox, axis))
        level = nxt
    subspaces = [Subspace(k, planes, box) for k, (_, planes, box, _) in enumerate(level)]
    return PartitionTable(subspaces, None, L, "kdtree", 0, splits)


def leaf_center_counts(table, centers):
    owner = table.locate(centers)
    return np.bincount(owner, minlength=table.K)


def build_fixed_grid(bounds, cell_size):
    """Regular grid over ``bounds`` (2x3: min, max); border cells extend to infinity."""
    bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
    cell_size = np.broadcast_to(np.asarray(cell_size, dtype=np.float64), (3,))
    if np.any(cell_size <= 0):
        raise ValueError("cell_size must be positive")
    cuts = []
    for a in range(3):
        n = max(1, int(np.ceil((bounds[1, a] - bounds[0, a]) / cell_size[a] - 1e-9)))
        cuts.append([bounds[0, a] + i * cell_size[a] for i in range(1, n)])
    subspaces = []
    k = 0
    for i in range(len(cuts[0]) + 1):
        for j in range(len(cuts[1]) + 1):
            for m in range(len(cuts[2]) + 1):
                planes = []
                box = np.array([[-np.inf] * 3, [np.inf] * 3])
                for a, c in zip(range(3), (i, j, m)):
                    if c > 0:
                        planes.append(axis_halfspaces(a, cuts[a][c - 1])[1])
                        box[0, a] = cuts[a][c - 1]
                    if c < len(cuts[a]):
                        planes.append(axis_halfspaces(a, cuts[a][c])[0])
                        box[1, a] = cuts[a][c]
                subspaces.append(Subspace(k, planes, box))
                k += 1
    return PartitionTable(subspaces, None, 0, "fixed-grid")


def membership_mask(subspace, centers, reach):
    """Splats whose center is within ``reach`` of every half-space of ``subspace``."""
    ok = np.ones(len(centers), dtype=bool)
    slack = reach * (1.0 + _MEMBERSHIP_EPS) + _MEMBERSHIP_EPS
    for p in subspace.planes:
        ok &= p.value(centers) <= slack
    return ok


def assign_subsets(table, splats: SplatSet, reach_multiplier=TRUNCATION):
    """Fill N_k: ids whose center lies within D_i of every plane of S_k."""
    reach = splats.reach(reach_multiplier)
    membership = [np.sort(splats.ids[membership_mask(s, splats.mu, reach)]) for s in table.subspaces]
    return table.with_membership(membership)


def intersection_point(ray: Ray, splat):
    """Orthogonal projection of the splat center onto the ray line."""
    u = splat.mu if hasattr(splat, "mu") else np.asarray(splat, dtype=np.float64)
    return ray.o + float(ray.d @ (u - ray.o)) * ray.d


def indicator(x, subspace):
    return int(bool(subspace.contains(np.asarray(x, dtype=np.float64))))


def ray_intervals(origins, dirs, table):
    """Ray-parameter intervals ``[t_in, t_out]`` per subspace, arrays ``(..., K)``.

    Empty intervals come back with ``t_in > t_out``; parallel faces use the
    half-space sense at the origin.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    shape = np.broadcast_shapes(origins.shape, dirs.shape)[:-1]
    K = table.K
    t_in = np.full(shape + (K,), -np.inf)
    t_out = np.full(shape + (K,), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in table.subspaces:
            lo = t_in[..., s.k]
            hi = t_out[..., s.k]
            for p in s.planes:
                nd = dirs[..., 0] * p.n[0] + dirs[..., 1] * p.n[1] + dirs[..., 2] * p.n[2]
                no = p.value(origins)
                no = np.broadcast_to(no, shape)
                t = -no / nd
                hi = np.where(nd > 0, np.minimum(hi, t), hi)
                lo = np.where(nd < 0, np.maximum(lo, t), lo)
                outside = (no > 0) if p.closed else (no >= 0)
                dead = (nd == 0) & outside
                lo = np.where(dead, np.inf, lo)
                hi = np.where(dead, -np.inf, hi)
            t_in[..., s.k] = lo
            t_out[..., s.k] = hi
    return t_in, t_out


def ray_orders(origins, dirs, table):
    """Per-ray merge order: ``(..., K)`` subspace indices, ``-1`` padded.

    Live subspaces have ``t_out > 0`` and a non-empty interval; they are
    sorted by ``max(t_in, 0)`` with ties broken by index.
    """
    t_in, t_out = ray_intervals(origins, dirs, table)
    start = np.maximum(t_in, 0.0)
    live = (t_out > 0) & (t_in < t_out)
    key = np.where(live, start, np.inf)
    K = table.K
    kidx = np.broadcast_to(np.arange(K), key.shape)
    order = np.lexsort((kidx, key), axis=-1)
    order = np.take_along_axis(kidx, order, axis=-1).copy()
    order[np.take_along_axis(~live, order, axis=-1)] = -1
    return order


def subspace_order(ray: Ray, table):
    order = ray_orders(ray.o, ray.d, table)
    return [int(k) for k in order if k >= 0]


def diff_membership(old, new):
    """Migration plan between two filled tables: list of (id, from_ks, to_ks) for changed ids."""
    def index(table):
        where = {}
        for k, ids in enumerate(table.membership):
            for i in ids:
                where.setdefault(int(i), set()).add(k)
        return where

    a, b = index(old), index(new)
    plan = []
    for i in sorted(set(a) | set(b)):
        if a.get(i, set()) != b.get(i, set()):
            plan.append((i, sorted(a.get(i, set())), sorted(b.get(i, set()))))
    return plan


def id_checksum(ids):
    """Order-independent digest of a splat id multiset."""
    ids = np.sort(np.asarray(ids, dtype=np.int64))
    return hashlib.sha256(ids.tobytes()).hexdigest()


class MigrationError(RuntimeError):
    pass


def plan_repartition(old, splats: SplatSet, depth=None, reach_multiplier=TRUNCATION):
    """Rebuild the KD-tree on current centers; returns ``(new_table, migration_plan)``.

    The new table carries ``old.epoch + 1``.  Raises :class:`MigrationError`
    when the id multiset covered by the new membership differs from ``splats``.
    """
    depth = old.depth if depth is None else depth
    table = assign_subsets(build_kdtree(splats.mu, depth), splats, reach_multiplier)
    table.epoch = old.epoch + 1
    covered = np.unique(np.concatenate(table.membership)) if table.membership else np.zeros(0, np.int64)
    if id_checksum(covered) != id_checksum(splats.ids):
        raise MigrationError("splat id checksum changed during repartition")
    plan = diff_membership(old, table) if old.membership is not None else []
    return table, plan
