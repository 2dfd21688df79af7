import numpy as np
import pytest

from inspiration import io
from inspiration.core import STAGE_DEFAULTS
from inspiration.cli import PLOT_COLUMNS, run

ROOM = """# open 3x3 room
kind = gridworld
width = 3
height = 3
goal = 2,2
starts = 0,0; 1,0; 0,1
walls =
max_episode_steps = 12
"""

SMALL = ["--hidden", "32", "--clf-hidden", "16", "--max-steps", "3000"]


@pytest.fixture
def room(tmp_path):
    path = tmp_path / "room.cfg"
    path.write_text(ROOM)
    return path


def test_unknown_and_missing_flags_exit_1(capsys):
    assert run(["train-expert", "--env", "grid7", "--out", "x", "--bogus"]) == 1
    assert run(["record", "--n", "3"]) == 1
    assert run(["nonsense"]) == 1
    assert run([]) == 1
    assert "error" in capsys.readouterr().err


def test_bad_values_exit_1(tmp_path, capsys):
    assert run(["train-expert", "--env", "grid7", "--out", "x", "--gamma", "1.5"]) == 1
    assert run(["train-expert", "--env", "grid7", "--out", "x", "--reward", "rank"]) == 1
    assert run(["eval", "--params", str(tmp_path / "missing")]) == 1
    assert run(["record", "--params", "p", "--n", "0", "--out", "d"]) == 1


def test_runtime_failure_exit_2(tmp_path, monkeypatch):
    import inspiration.cli as cli

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "train_expert", boom)
    assert run(["train-expert", "--env", "grid4", "--out", str(tmp_path / "p")]) == 2


def test_gradcheck(capsys):
    assert run(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "max_relative_error=" in out and "# command = gradcheck" in out


def test_resolved_config_printed_with_stage_defaults(tmp_path, room, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("entropy_coef = 0.02\nmax_steps = 40\n")
    assert run(["train-expert", "--env", str(room), "--out", str(tmp_path / "p"), "--config", str(cfg), "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert f"# gamma = {STAGE_DEFAULTS['expert']['gamma']}" in out and "# entropy_coef = 0.02" in out
    assert "# seed = 3" in out and "# max_steps = 40" in out


def test_pipeline_and_reproducibility(tmp_path, room, capsys):
    def pipeline(tag):
        d = tmp_path / tag
        d.mkdir()
        f = {k: str(d / k) for k in ("e.params", "e.csv", "demos", "acts", "a.params", "a.csv", "ev.csv", "plot.csv")}
        assert run(["train-expert", "--env", str(room), "--out", f["e.params"], "--metrics", f["e.csv"], "--gamma", "0.9", *SMALL]) == 0
        assert run(["record", "--params", f["e.params"], "--n", "3", "--out", f["demos"], "--actions-out", f["acts"]]) == 0
        assert run(["train-agent", "--demos", f["demos"], "--out", f["a.params"], "--metrics", f["a.csv"], "--reward", "pref", *SMALL]) == 0
        assert run(["eval", "--params", f["a.params"], "--episodes", "10", "--metrics", f["ev.csv"]]) == 0
        assert run(["export-plotdata", "--metrics", f["e.csv"], f["a.csv"], "--labels", "expert", "agent", "--out", f["plot.csv"]]) == 0
        return d

    a, b = pipeline("a"), pipeline("b")
    for name in ("e.params", "e.csv", "demos", "acts", "a.params", "a.csv", "ev.csv", "plot.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert io.read_metrics(a / "ev.csv")[0].success_rate == 1.0
    header = (a / "plot.csv").read_text().splitlines()[0]
    assert header.split(",") == PLOT_COLUMNS


def test_cluster_actions(tmp_path, rng, capsys):
    acts = np.vstack([rng.normal(c, 0.05, size=(10, 2)) for c in np.linspace(-1, 1, 7)])
    io.save_actions(tmp_path / "acts", acts)
    argv = ["cluster-actions", "--demos-actions", str(tmp_path / "acts"), "--k", "7"]
    assert run(argv + ["--out", str(tmp_path / "c1"), "--metrics", str(tmp_path / "s1")]) == 0
    assert run(argv + ["--out", str(tmp_path / "c2"), "--metrics", str(tmp_path / "s2")]) == 0
    c = io.load_actions(tmp_path / "c1")
    assert c.shape == (7, 2)
    assert (tmp_path / "c1").read_bytes() == (tmp_path / "c2").read_bytes()
    assert (tmp_path / "s1").read_bytes() == (tmp_path / "s2").read_bytes()


def test_centroid_agent_needs_centroid_file(tmp_path, capsys):
    from inspiration.core import ExpertTrajectory
    from inspiration.envs import resolve_env

    io.save_demos(tmp_path / "d", [ExpertTrajectory((np.zeros(4), np.ones(4) * 0.1))], env=resolve_env("pointmass"))
    assert run(["train-agent", "--demos", str(tmp_path / "d"), "--actions", "centroids", "--out", str(tmp_path / "p")]) == 1
    assert run(["train-agent", "--demos", str(tmp_path / "d"), "--actions", "primitive", "--out", str(tmp_path / "p")]) == 1
