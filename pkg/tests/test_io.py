import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inspiration import approximator as ax
from inspiration import io
from inspiration.core import ExpertTrajectory, InvalidInputError, TrainConfig, primitive_actionset
from inspiration.envs import DEFAULT_MACROS, make_centroid_actionset, make_env, make_macro_actionset, resolve_env
from inspiration.trainer import MetricsRow


@given(st.floats(allow_nan=False, allow_infinity=False))
@settings(max_examples=500)
def test_real_round_trip_is_exact(x):
    assert float(io.fmt(x)) == x


def random_demos(rng, n=10, dim=3):
    return [ExpertTrajectory(tuple(rng.normal(size=dim) * 10.0 ** rng.integers(-8, 8) for _ in range(rng.integers(2, 12)))) for _ in range(n)]


def test_demos_round_trip(tmp_path, rng):
    demos = random_demos(rng)
    path = tmp_path / "d.txt"
    io.save_demos(path, demos, env_id="grid7", env=resolve_env("grid7"))
    back, info = io.load_demos_file(path)
    assert back == demos
    assert info["env"] == resolve_env("grid7") and info["obs_dim"] == 3


def test_demos_bytes_are_deterministic(tmp_path, rng):
    demos = random_demos(rng, 3)
    io.save_demos(tmp_path / "a", demos)
    io.save_demos(tmp_path / "b", demos)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_demos_parse_errors_name_the_line(tmp_path, rng):
    path = tmp_path / "d.txt"
    io.save_demos(path, random_demos(rng, 2, dim=2))
    lines = path.read_text().splitlines()
    body = lines.index("") + 2  # 1-based number of the first state line
    lines[body - 1] = lines[body - 1].split()[0]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(io.ParseError, match=f":{body}:"):
        io.load_demos(path)
    lines[body - 1] = "0.5 abc"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(io.ParseError, match=f":{body}:"):
        io.load_demos(path)


def test_demos_empty_body_and_bad_header(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text(f"{io.DEMO_MAGIC}\nenv x\nobs_dim 2\nstack_k 1\ntrajectories 1\n\n0 0\n")
    with pytest.raises(io.ParseError):
        io.load_demos(path)
    path.write_text(f"{io.DEMO_MAGIC}\nenv x\nobs_dim 2\n\n0 0\n1 1\n")
    with pytest.raises(io.ParseError, match="header lacks"):
        io.load_demos(path)
    path.write_text("hello\n")
    with pytest.raises(io.ParseError):
        io.load_demos(path)


@pytest.mark.parametrize("shared", [True, False])
def test_params_round_trip_and_forward(tmp_path, rng, shared):
    p = ax.init_params(4, 3, (8, 5), 4, shared=shared, clf_hidden=6)
    p.values[:] = rng.normal(size=p.values.size)
    path = tmp_path / "p.txt"
    io.save_params(path, p)
    q = io.load_params(path)
    assert q.layout == p.layout and np.array_equal(q.values, p.values)
    S = rng.normal(size=(6, 3))
    assert np.array_equal(ax.policy_value_batch(p, S)[0], ax.policy_value_batch(q, S)[0])
    assert np.array_equal(ax.classify_batch(p, S, S[::-1]), ax.classify_batch(q, S, S[::-1]))


def test_params_count_mismatch(tmp_path):
    p = ax.init_params(0, 2, (4,), 2, clf_hidden=2)
    path = tmp_path / "p.txt"
    io.save_params(path, p)
    path.write_text(path.read_text().rstrip("\n").rsplit("\n", 1)[0] + "\n")
    with pytest.raises(io.ParseError, match="expected"):
        io.load_params(path)
    text = path.read_text().replace("n_actions 2", "n_actions 3")
    path.write_text(text)
    with pytest.raises(io.ParseError, match="layout size"):
        io.load_params(path)


def test_layout_mismatch_at_use_time(tmp_path):
    p = ax.init_params(0, 2, (4,), 4)
    env = make_env("pointmass")
    with pytest.raises(InvalidInputError):
        io.check_compatible(p, env.obs_dim, env.action_dim)


@pytest.mark.parametrize("kind", ["primitive", "macro", "centroid", "continuous"])
def test_model_header_rebuilds_env(tmp_path, kind):
    if kind == "centroid":
        desc, acts = resolve_env("pointmass"), make_centroid_actionset([[0.1, 0.2], [-1.0, 0.5]])
    elif kind == "continuous":
        desc, acts = resolve_env("pointmass"), None
    else:
        desc = resolve_env("grid7")
        acts = make_macro_actionset(primitive_actionset(4), DEFAULT_MACROS) if kind == "macro" else primitive_actionset(4)
    p = ax.init_params(0, 2, (4,), 2)
    path = tmp_path / "p.txt"
    io.save_params(path, p, io.model_header(desc, acts))
    _, meta = io.load_params_file(path)
    desc2, env = io.env_from_header(meta)
    assert desc2 == desc
    if acts is None:
        assert env.actions is None
    else:
        assert env.actions == acts


def test_actions_round_trip(tmp_path, rng):
    a = rng.normal(size=(20, 2))
    io.save_actions(tmp_path / "a.txt", a)
    assert np.array_equal(io.load_actions(tmp_path / "a.txt"), a)


def as_array(rows):
    return np.array([[getattr(r, c) for c in MetricsRow.columns()] for r in rows], dtype=float)


def test_metrics_append_and_reopen(tmp_path):
    path = tmp_path / "m.csv"
    rows = [MetricsRow(total_steps=i * 10, policy_loss=0.1 * i, mean_reward=1 / 3) for i in range(3)]
    for r in rows:
        io.append_metrics(path, r)
    assert len(path.read_text().splitlines()) == 4
    with io.MetricsWriter(path) as w:
        w(MetricsRow(total_steps=99))
    lines = path.read_text().splitlines()
    assert len(lines) == 5 and lines.count(lines[0]) == 1
    back = io.read_metrics(path)
    np.testing.assert_array_equal(as_array(back[:3]), as_array(rows))
    assert np.isnan(back[3].policy_loss)


def test_config_parse_and_format():
    cfg = TrainConfig(gamma=0.95, hidden=(16, 8), reward_mode="soft", shared_trunk=False)
    parsed = io.parse_config(io.format_config(cfg))
    assert TrainConfig(**parsed) == cfg
    assert io.parse_config("# comment\ngamma = 0.5  # trailing\n") == {"gamma": 0.5}
    with pytest.raises(InvalidInputError):
        io.parse_config("gamma 0.5")
    with pytest.raises(InvalidInputError):
        io.parse_config("gama = 0.5")
    with pytest.raises(InvalidInputError):
        io.parse_config("max_steps = lots")
