from __future__ import annotations

import json

import numpy as np
import pytest

from vlnce.graph_snap import parse_snapped
from vlnce.harness import fixtures
from vlnce.harness.cli import main
from vlnce.world import load_episodes


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    scene = fixtures.build_scene("cli", lattice=3, diagonal_edges=False, invalid={8})
    fixtures.add_shortest_path_trajectories(scene, np.random.default_rng(0), 6)
    scene.trajectories["cli_bad"] = [5, 8]
    scene.instructions = {t: [(1, 2, 3), (4, 5)] for t in scene.trajectories}
    fixtures.write_scene(scene, d)
    args = ["transfer", "--env", str(d / "env.txt"), "--graph", str(d / "graph.txt"),
            "--trajectories", str(d / "trajectories.txt"), "--instructions", str(d / "instructions.txt"),
            "--out", str(d / "episodes.jsonl"), "--report", str(d / "report.txt")]
    assert main(args) == 0
    return d


def env_args(d):
    return ["--env", str(d / "env.txt"), "--episodes", str(d / "episodes.jsonl")]


def test_transfer_outputs(scene_dir):
    eps = load_episodes(scene_dir / "episodes.jsonl")
    report = (scene_dir / "report.txt").read_text()
    assert "cli_bad INVALID_NODE" in report
    assert len(eps) == 2 * (report.count("NAVIGABLE"))


def test_run_eval_snap_round_trip(scene_dir, tmp_path):
    runs = tmp_path / "runs"
    assert main(["run", *env_args(scene_dir), "--policy", "oracle", "--out", str(runs)]) == 0
    table = tmp_path / "metrics.tsv"
    assert main(["eval", *env_args(scene_dir), "--trajectories", str(runs), "--out", str(table)]) == 0
    mean = table.read_text().splitlines()[-1].split("\t")
    assert mean[0] == "MEAN" and float(mean[5]) == 1.0  # SR
    snapped = tmp_path / "snapped.txt"
    assert main(["snap", "--graph", str(scene_dir / "graph.txt"), "--episodes", str(scene_dir / "episodes.jsonl"),
                 "--trajectories", str(runs), "--out", str(snapped), "--quality", str(tmp_path / "q.txt")]) == 0
    got = parse_snapped(snapped.read_text())
    for ep in load_episodes(scene_dir / "episodes.jsonl"):
        assert got[ep.id] == ep.node_ids


def test_eval_rejects_mismatched_environment(scene_dir, tmp_path, capsys):
    runs = tmp_path / "runs"
    main(["run", *env_args(scene_dir), "--policy", "random", "--out", str(runs)])
    other = tmp_path / "other.txt"
    other.write_text((scene_dir / "env.txt").read_text().replace(".", "#", 1))
    rc = main(["eval", "--env", str(other), "--episodes", str(scene_dir / "episodes.jsonl"),
               "--trajectories", str(runs), "--out", str(tmp_path / "m.tsv")])
    assert rc == 2
    assert "error" in json.loads(capsys.readouterr().err.splitlines()[-1])


def test_collect_weights_stats_render(scene_dir, tmp_path):
    out = tmp_path / "dagger.txt"
    assert main(["collect", *env_args(scene_dir), "--policy", "random", "--rounds", "2", "--per-round", "3",
                 "--out", str(out)]) == 0
    rows = out.read_text().splitlines()[1:]
    assert {r.split()[0] for r in rows} == {"0", "1"}
    w = tmp_path / "w.txt"
    assert main(["weights", *env_args(scene_dir), "--coef", "auto", "--out", str(w)]) == 0
    assert w.read_text().startswith("# inflection_frequency")
    s = tmp_path / "stats.txt"
    assert main(["stats", "--episodes", str(scene_dir / "episodes.jsonl"), "--out", str(s)]) == 0
    assert s.read_text().startswith("episodes ")
    for name in ("map.pgm", "map.txt"):
        assert main(["render", *env_args(scene_dir), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "map.pgm").read_bytes().startswith(b"P5")
    text = (tmp_path / "map.txt").read_text()
    assert "S" in text and "G" in text


def test_verify_reports_failing_leg(tmp_path, capsys):
    scene = fixtures.build_scene("split", lattice=3, split_column=0)
    scene.trajectories = {"ok": [3, 6], "cut": [0, 1, 2]}
    fixtures.write_scene(scene, tmp_path)
    out = tmp_path / "verify.txt"
    rc = main(["verify", "--env", str(tmp_path / "env.txt"), "--graph", str(tmp_path / "graph.txt"),
               "--trajectories", str(tmp_path / "trajectories.txt"), "--out", str(out)])
    assert rc == 0
    text = out.read_text()
    assert "ok NAVIGABLE" in text and "cut DISJOINT 0" in text
    rec = json.loads(capsys.readouterr().err.splitlines()[0])
    assert rec["traj_id"] == "cut"


def test_bad_input_exits_2(tmp_path, capsys):
    bad = tmp_path / "env.txt"
    bad.write_text("0.05 3 3\n...\n.x.\n...\n")
    rc = main(["stats", "--episodes", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")])
    assert rc == 2
    rc = main(["render", "--env", str(bad), "--out", str(tmp_path / "m.txt")])
    assert rc == 2
    rec = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert rec.get("line") == 3
