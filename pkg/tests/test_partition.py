import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatshard.partition import (
    DegeneratePointSetError, HalfSpace, MigrationError, Subspace, assign_subsets, build_fixed_grid,
    build_kdtree, id_checksum, indicator, intersection_point, leaf_center_counts, plan_repartition,
    ray_intervals, ray_orders, subspace_order,
)
from splatshard.splat import Ray, SplatSet

from conftest import make_scene


def line_centers(xs):
    return np.array([[x, 0.0, 0.0] for x in xs])


def iso_splat(center, s, i=0):
    return SplatSet([i], [center], np.log([[s, s, s]]), [[1, 0, 0, 0]], [0.0], np.zeros((1, 1, 3)))


# --- build_kdtree ------------------------------------------------------------

def test_kdtree_line_median():
    t = build_kdtree(line_centers([0, 1, 2, 3]), 1)
    assert t.splits == [(0, 1.5)]
    assert leaf_center_counts(t, line_centers([0, 1, 2, 3])).tolist() == [2, 2]


def test_kdtree_depth_zero_single_unbounded_leaf():
    t = build_kdtree(np.random.default_rng(0).normal(size=(10, 3)), 0)
    assert t.K == 1 and t.subspaces[0].planes == []
    assert t.locate([[1e9, -1e9, 0]]).tolist() == [0]


def test_kdtree_degenerate_points():
    with pytest.raises(DegeneratePointSetError, match="degenerate point set"):
        build_kdtree(np.ones((5, 3)), 2)


def test_split_point_belongs_to_right_leaf_only():
    t = build_kdtree(line_centers([0, 1, 2, 3]), 1)
    x = [1.5, 0.0, 0.0]
    hits = [indicator(x, s) for s in t.subspaces]
    assert hits == [0, 1]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 400), st.integers(0, 5), st.integers(0, 10**6))
def test_kdtree_balance(n, L, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3)) * rng.uniform(0.1, 3, 3)
    pts[:, 1] = np.round(pts[:, 1], 1)  # ties along one axis
    if 2 ** L > n:
        return
    t = build_kdtree(pts, L)
    counts = leaf_center_counts(t, pts)
    assert t.K == 2 ** L
    assert counts.sum() == n
    assert counts.max() - counts.min() <= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(0, 10**6))
def test_tiling_exactly_one_owner(L, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (200, 3))
    t = build_kdtree(pts, L)
    # queries include the split planes themselves and points far outside the bounds
    q = rng.uniform(-3, 3, (10000, 3))
    for j, (axis, value) in enumerate(t.splits[:20]):
        q[j, axis] = value
    total = sum(s.contains(q).astype(int) for s in t.subspaces)
    assert np.all(total == 1)


# --- fixed grid ----------------------------------------------------------------

def test_fixed_grid_unit_cube():
    t = build_fixed_grid([[0, 0, 0], [1, 1, 1]], 0.5)
    assert t.K == 8
    q = np.random.default_rng(0).uniform(-1, 2, (1000, 3))
    assert np.all(sum(s.contains(q).astype(int) for s in t.subspaces) == 1)


# --- assign_subsets ------------------------------------------------------------

def _right_half():
    t = build_kdtree(line_centers([0, 1, 2, 3]), 1)  # split x = 1.5
    return t


def test_membership_slack_two_sigma_included():
    t = _right_half()
    s = 0.1
    filled = assign_subsets(t, iso_splat([1.5 - 2 * s, 0, 0], s))
    assert 0 in filled.membership[1]


def test_membership_four_sigma_excluded():
    t = _right_half()
    s = 0.1
    filled = assign_subsets(t, iso_splat([1.5 - 4 * s, 0, 0], s))
    assert 0 not in filled.membership[1] and 0 in filled.membership[0]


def test_membership_inside_always_included():
    t = _right_half()
    filled = assign_subsets(t, iso_splat([3.0, 0, 0], 1e-6))
    assert filled.membership[1].tolist() == [0]


def test_every_splat_in_its_own_subspace_subset():
    s = make_scene(500, seed=3)
    t = assign_subsets(build_kdtree(s.mu, 3), s)
    owner = t.locate(s.mu)
    for i, k in zip(s.ids, owner):
        assert i in t.membership[k]


# --- intersection / indicator -----------------------------------------------------

def test_intersection_point_example():
    assert np.allclose(intersection_point(Ray([0, 0, 0], [0, 0, 1]), [1, 0, 5]), [0, 0, 5])


def test_intersection_of_point_on_ray_is_itself():
    r = Ray([1, 2, 3], [1, 1, 0])
    u = r.at(2.5)
    assert np.allclose(intersection_point(r, u), u)


def test_indicator_examples():
    box = Subspace(0, [HalfSpace((1.0, 0.0, 0.0), -2.0)])
    assert indicator([1, 5, 3], box) == 1
    assert indicator([3, 0, 0], box) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_intersection_lies_on_ray_and_is_closest(o, d, u):
    if np.linalg.norm(d) < 1e-3:
        return
    r = Ray(o, d)
    x = intersection_point(r, u)
    t = r.d @ (x - r.o)
    assert np.allclose(r.at(t), x, atol=1e-9)
    assert abs((np.asarray(u) - x) @ r.d) < 1e-9


# --- ordering --------------------------------------------------------------------

def _z_split():
    return build_kdtree(np.array([[0, 0, 0.0], [0, 0, 2.0]]), 1)  # split z = 1


def test_order_forward():
    assert subspace_order(Ray([0, 0, 0], [0, 0, 1]), _z_split()) == [0, 1]


def test_order_backward_only_origin_leaf():
    assert subspace_order(Ray([0, 0, 0], [0, 0, -1]), _z_split()) == [0]


def test_order_single_leaf():
    t = build_kdtree(np.random.default_rng(0).normal(size=(5, 3)), 0)
    assert subspace_order(Ray([0, 0, 0], [1, 0, 0]), t) == [0]


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10**6))
def test_order_intervals_ascending_disjoint(L, seed):
    rng = np.random.default_rng(seed)
    t = build_kdtree(rng.uniform(-1, 1, (300, 3)), L)
    o = rng.uniform(-3, 3, (500, 3))
    d = rng.normal(size=(500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t_in, t_out = ray_intervals(o, d, t)
    orders = ray_orders(o, d, t)
    for r in range(len(o)):
        ks = [k for k in orders[r] if k >= 0]
        assert ks, "every ray starts inside some leaf"
        prev_out = 0.0
        for k in ks:
            assert max(t_in[r, k], 0.0) >= prev_out - 1e-9
            prev_out = t_out[r, k]
        # the live intervals cover t > 0 without gaps
        assert np.isinf(prev_out)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10**6))
def test_overlap_soundness(L, seed):
    rng = np.random.default_rng(seed)
    s = make_scene(300, seed=seed % 997, scale=(0.02, 0.2))
    t = assign_subsets(build_kdtree(s.mu, L), s)
    member = [set(m.tolist()) for m in t.membership]
    reach = s.reach()
    o = rng.uniform(-3, 3, (200, 3))
    d = rng.normal(size=(200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    checked = 0
    for oi, di in zip(o, d):
        tt = (s.mu - oi) @ di
        x = oi + tt[:, None] * di
        near = (tt > 0) & (np.sum((s.mu - x) ** 2, axis=1) <= reach ** 2)
        owner = t.locate(x[near])
        for i, k in zip(s.ids[near], owner):
            assert int(i) in member[k]
            checked += 1
    assert checked > 0


# --- repartition ---------------------------------------------------------------

def test_repartition_no_move_identical():
    s = make_scene(200, seed=4)
    old = assign_subsets(build_kdtree(s.mu, 2), s)
    new, plan = plan_repartition(old, s)
    assert new.splits == old.splits and plan == [] and new.epoch == old.epoch + 1


def test_repartition_translation_equivariant():
    s = make_scene(200, seed=4)
    old = assign_subsets(build_kdtree(s.mu, 2), s)
    shift = np.array([0.5, -1.25, 2.0])
    moved = s.copy()
    moved.mu += shift
    new, _ = plan_repartition(old, moved)
    for (a0, v0), (a1, v1) in zip(old.splits, new.splits):
        assert a0 == a1 and v1 == pytest.approx(v0 + shift[a0], abs=1e-12)


def test_repartition_perturbation_covers_all():
    s = make_scene(400, seed=6)
    old = assign_subsets(build_kdtree(s.mu, 3), s)
    moved = s.copy()
    rows = np.random.default_rng(0).choice(len(s), 40, replace=False)
    moved.mu[rows] += np.random.default_rng(1).normal(0, 0.3, (40, 3))
    new, plan = plan_repartition(old, moved)
    assert set(np.concatenate(new.membership).tolist()) == set(s.ids.tolist())
    assert plan


def test_repartition_checksum_mismatch(monkeypatch):
    import splatshard.partition as part

    s = make_scene(50, seed=1)
    old = assign_subsets(build_kdtree(s.mu, 1), s)
    real = part.assign_subsets

    def lossy(table, splats, reach_multiplier=3.0):
        out = real(table, splats, reach_multiplier)
        out.membership = [m[m != 0] for m in out.membership]
        return out

    monkeypatch.setattr(part, "assign_subsets", lossy)
    with pytest.raises(MigrationError, match="checksum"):
        plan_repartition(old, s)


def test_id_checksum_order_independent():
    assert id_checksum([3, 1, 2]) == id_checksum([1, 2, 3]) != id_checksum([1, 2, 4])


def test_dump_lists_members():
    s = make_scene(20, seed=2)
    text = assign_subsets(build_kdtree(s.mu, 1), s).dump()
    assert "leaves=2" in text and "members" in text
