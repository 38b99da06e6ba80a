import numpy as np
import pytest

from splatshard.bench import (
    balance_stats, bytes_per_splat, comm_model, data_parallel_bytes, floats_per_splat, format_rows, make_table,
    timing_harness,
)
from splatshard.engine.manager import Manager
from splatshard.io.synth import camera_ring, random_splats
from splatshard.partition import assign_subsets, build_kdtree
from splatshard.splat import Camera

from conftest import look, make_scene


def test_comm_model_examples():
    cam = Camera(100, 100, 100.0, 100.0, 50.0, 50.0)
    assert comm_model(cam, 2) == 320_000
    assert comm_model(cam, 0) == 0
    assert comm_model(cam, 2, scalar_bytes=8) == 640_000


def test_floats_per_splat():
    assert floats_per_splat(3) == 59
    assert bytes_per_splat(0, 4, with_optimizer=False) == 14 * 4
    assert data_parallel_bytes(10, 0, 2) == 2 * 10 * 14 * 4


def test_kd_uniform_ratio():
    s = random_splats(100_000, seed=0, scale_range=(0.002, 0.005))
    rep = balance_stats(make_table(s, 2), s)
    assert rep.ratio <= 1.1


def test_grid_clustered_ratio():
    s = random_splats(20_000, seed=0, distribution="clustered")
    grid = balance_stats(make_table(s, 2, "grid"), s)
    kd = balance_stats(make_table(s, 2), s)
    assert grid.ratio >= 3 and grid.ratio >= 3 * kd.ratio


def test_single_leaf_ratio_one():
    s = make_scene(100)
    rep = balance_stats(make_table(s, 1), s)
    assert rep.ratio == 1.0 and rep.overlap_fraction == 0.0


def test_counts_match_recount():
    s = make_scene(500, seed=3)
    t = make_table(s, 4)
    rep = balance_stats(t, s)
    recount = [sum(1 for i in s.ids if i in set(m.tolist())) for m in t.membership]
    assert rep.counts == recount
    assert sum(rep.counts) >= len(s) and sum(rep.center_counts) == len(s)
    assert "ratio" in rep.text() and rep.as_record()["K"] == 4


def test_balance_requires_membership():
    s = make_scene(10)
    with pytest.raises(ValueError):
        balance_stats(build_kdtree(s.mu, 1), s)


def test_measured_bytes_equal_model_in_process():
    s = make_scene(200, seed=1)
    cam = look([0.2, 0.5, 3.0], size=20)
    with Manager.launch(s, depth=2, dtype="float32") as mgr:
        mgr.reset_counters()
        mgr.render(cam)
        assert mgr.bytes()["map_forward"] == comm_model(cam, 4)


def test_mono_mode_zero_comm():
    s = make_scene(100)
    row = timing_harness(s, [look([0, 0.3, 3], size=16)], mode="mono")
    assert row.comm_bytes == 0 and row.max_wait_fraction == 0.0


def test_batch_trend_and_kd_vs_grid():
    s = random_splats(6000, seed=0, distribution="clustered", sh_degree=0)
    cams = camera_ring(12, 3.5, 32, 32)
    kd = timing_harness(s, cams, K=4, batch=[1, 4], kind="kdtree")
    grid = timing_harness(s, cams, K=4, batch=[1, 4], kind="grid")
    assert kd[1].max_wait_fraction <= kd[0].max_wait_fraction
    assert kd[0].total_ms <= grid[0].total_ms
    assert "critical_ms" in format_rows(kd + grid)
