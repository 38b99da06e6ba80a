import json
import os
import subprocess
import sys

import pytest

from splatshard.cli import main
from splatshard.io import save_cameras

from conftest import look, make_scene


def run(*argv):
    return main([str(a) for a in argv])


def test_partition_depth_three(capsys):
    assert run("partition", "--depth", 3, "--count", 500) == 0
    assert "leaves: 8" in capsys.readouterr().out


def test_render_missing_camera_file(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run("render", "--cameras", missing, "--out", tmp_path / "o.png", "--count", 50) == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_flag_exit_two():
    with pytest.raises(SystemExit) as e:
        run("render", "--bogus")
    assert e.value.code == 2


def test_module_entry_point_usage():
    r = subprocess.run([sys.executable, "-m", "splatshard", "train", "--no-such-flag"],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr


def test_validate_equivalence_default(capsys):
    assert run("validate-equivalence", "--workers", 4, "--seed", 7) == 0
    assert "PASS" in capsys.readouterr().out


def test_validate_boundary_and_control(tmp_path, capsys):
    assert run("validate-boundary", "--count", 800, "--out", tmp_path) == 0
    assert os.path.exists(tmp_path / "partial_0.png")
    assert run("validate-boundary", "--count", 800, "--no-gate") == 1


def test_render_and_render_dist(tmp_path, capsys):
    cams = tmp_path / "cams.json"
    save_cameras(str(cams), [look([0.3, 0.4, 3.2], size=24), look([2, 1, 2], size=24)])
    assert run("render", "--cameras", cams, "--out", tmp_path / "mono", "--count", 300) == 0
    assert len(os.listdir(tmp_path / "mono")) == 2
    assert run("render-dist", "--cameras", cams, "--index", 1, "--out", tmp_path / "d.png",
               "--count", 300, "--workers", 2, "--check", "--oracle") == 0
    assert os.path.exists(tmp_path / "d.png")
    assert run("render-dist", "--cameras", cams, "--out", tmp_path / "x", "--workers", 3) == 1


def test_synth_then_train_from_bundle(tmp_path, capsys):
    out = tmp_path / "bundle"
    assert run("synth", "--out", out, "--count", 200, "--views", 4, "--size", 16, "--points", 300) == 0
    assert run("train", "--bundle", out, "--init-count", 150, "--iterations", 3, "--workers", 2,
               "--log", tmp_path / "log.ndjson", "--out", tmp_path / "ck.ply") == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["splats"] == 150
    assert os.path.exists(tmp_path / "ck.ply")


def test_oracle_training_log_reproducible(tmp_path):
    logs = []
    for i in range(2):
        path = tmp_path / f"log{i}.ndjson"
        assert run("train", "--count", 200, "--views", 4, "--size", 16, "--init-count", 120,
                   "--iterations", 6, "--log-every", 2, "--workers", 2, "--grad-sync",
                   "--oracle", "--seed", 3, "--log", path) == 0
        recs = [json.loads(l) for l in open(path)]
        for r in recs:
            r.pop("wall_ms")
        logs.append(recs)
    assert logs[0] == logs[1] and len(logs[0]) == 4


def test_bench_json(tmp_path, capsys):
    path = tmp_path / "b.ndjson"
    assert run("bench", "--count", 2000, "--workers", 2, "--views", 4, "--size", 24,
               "--batches", "1,2", "--json", path) == 0
    recs = [json.loads(l) for l in open(path)]
    assert {r["type"] for r in recs} == {"balance", "timing"}
