import itertools

import numpy as np
import pytest

from inspiration import approximator as ax
from inspiration.core import ExpertTrajectory, InvalidInputError, RewardMode, TrainConfig
from inspiration.envs import GridConfig, GridWorld, ObservationView, make_env
from inspiration.trainer import (
    MetricsRow,
    RolloutBuffer,
    absorbing_value,
    compute_returns,
    evaluate,
    kmeans_actions,
    lloyd,
    record_demos,
    train_expert,
    train_inspiration,
)


def double_sum_returns(rewards, values, boot, gamma):
    n = len(rewards)
    R = [sum(gamma ** (j - t) * rewards[j] for j in range(t, n)) + gamma ** (n - t) * boot for t in range(n)]
    return np.array(R), np.array(R) - np.array(values)


def test_returns_match_double_sum(rng):
    for _ in range(200):
        n = int(rng.integers(1, 30))
        r, v = rng.normal(size=n), rng.normal(size=n)
        boot, gamma = float(rng.normal()), float(rng.choice([0.0, 0.5, 0.99]))
        R, A = compute_returns((r, v), boot, gamma)
        R2, A2 = double_sum_returns(r, v, boot, gamma)
        np.testing.assert_allclose(R, R2, rtol=0, atol=1e-12)
        np.testing.assert_allclose(A, A2, rtol=0, atol=1e-12)


def test_returns_from_buffer():
    buf = RolloutBuffer(3)
    for r in (1.0, 0.0, 2.0):
        buf.add(np.zeros(2), 0, np.zeros(4), 0.5, r, False)
    assert buf.full
    with pytest.raises(InvalidInputError):
        buf.add(np.zeros(2), 0, np.zeros(4), 0.5, 0.0, False)
    R, A = compute_returns(buf, 0.0, 0.5)
    assert R.tolist() == [1.5, 1.0, 2.0]
    assert A.tolist() == [1.0, 0.5, 1.5]


def test_absorbing_value_per_mode():
    assert absorbing_value(RewardMode.PREFERENTIAL, 4, 0.9) == pytest.approx(10.0)
    assert absorbing_value(RewardMode.BASIC, 4, 0.5) == pytest.approx(2.0)
    assert absorbing_value(RewardMode.SOFT_PREFERENTIAL, 4, 0.9) == pytest.approx(2.5)


def exhaustive_min_sse(x, k=2):
    best = np.inf
    for mask in itertools.product(range(k), repeat=len(x)):
        m = np.array(mask)
        if len(set(mask)) < k:
            continue
        best = min(best, sum(np.sum((x[m == j] - x[m == j].mean(0)) ** 2) for j in range(k)))
    return best


def test_lloyd_finds_exhaustive_optimum(rng):
    x = np.vstack([rng.normal(0, 0.3, (6, 2)), rng.normal(4, 0.3, (6, 2))])
    _, _, sse = lloyd(x, 2, seed=0)
    assert sse[-1] == pytest.approx(exhaustive_min_sse(x), rel=1e-12)


def test_lloyd_sse_non_increasing(rng):
    for seed in range(30):
        x = rng.normal(size=(int(rng.integers(8, 60)), 2))
        _, labels, sse = lloyd(x, int(rng.integers(1, 8)), seed=seed)
        assert all(b <= a + 1e-12 for a, b in zip(sse, sse[1:]))


def test_lloyd_handles_duplicates():
    x = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]] * 2)
    c, labels, _ = lloyd(x, 3, seed=0)
    assert np.all(np.isfinite(c)) and len(set(labels.tolist())) == 3


def test_kmeans_sorted_and_deterministic(rng):
    x = rng.normal(size=(40, 2))
    c = kmeans_actions(x, 5, seed=3)
    assert np.array_equal(c, kmeans_actions(x, 5, seed=3))
    assert [tuple(r) for r in c] == sorted(tuple(r) for r in c)
    with pytest.raises(InvalidInputError):
        kmeans_actions(x[:3], 5)


def small(**kw):
    base = dict(hidden=(32,), clf_hidden=16, max_steps=8000, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def room_expert():
    # open 3x3 room: small enough to train in a second or two
    env = GridWorld(GridConfig(3, 3, goal=(2, 2), starts=((0, 0), (1, 0), (0, 1)), walls=(), max_episode_steps=12))
    return env, train_expert(env, small(gamma=0.9, max_steps=3000)).params


def test_expert_learns_small_room(room_expert):
    env, p = room_expert
    assert evaluate(p, env, 5)[1] == 1.0


def test_record_demos_shape(room_expert):
    env, p = room_expert
    demos, acts = record_demos(p, env, 3, seed=1)
    assert len(demos) == 3
    assert env.success(demos[0].states[-1])
    assert len(acts) == sum(len(d) - 1 for d in demos)


def test_agent_learns_from_demos(room_expert):
    env, p = room_expert
    demos, _ = record_demos(p, env, 3)
    res = train_inspiration(env, demos, small(gamma=0.9, lr_schedule="linear", max_steps=3000))
    assert evaluate(res.params, env, 5)[1] == 1.0


def test_agent_never_reads_task_reward(room_expert, monkeypatch):
    env, p = room_expert
    demos, _ = record_demos(p, env, 2)
    seen = []
    real = ObservationView.step

    def spy(self, a):
        out = real(self, a)
        seen.append(type(out).__name__)
        return out

    monkeypatch.setattr(ObservationView, "step", spy)
    train_inspiration(env, demos, small(max_steps=200))
    assert seen and set(seen) == {"ObservedStep"}


def test_training_is_reproducible(room_expert):
    env, p = room_expert
    demos, _ = record_demos(p, env, 2)
    a = train_inspiration(env, demos, small(max_steps=600, reward_mode="soft"))
    b = train_inspiration(env, demos, small(max_steps=600, reward_mode="soft"))
    assert np.array_equal(a.params.values, b.params.values)
    assert [r.__dict__ for r in a.metrics] == [r.__dict__ for r in b.metrics]


def test_pref_reward_support_is_discrete(room_expert):
    env, p = room_expert
    demos, _ = record_demos(p, env, 2)
    rewards = []
    train_inspiration(env, demos, small(max_steps=400), on_metrics=lambda row, buf: rewards.extend(buf.rewards))
    assert rewards and set(rewards) <= {j / 4 for j in range(1, 5)}


def test_zero_bootstrap_option(room_expert):
    env, p = room_expert
    demos, _ = record_demos(p, env, 2)
    res = train_inspiration(env, demos, small(max_steps=300, terminal_bootstrap="zero"))
    assert len(res.metrics) > 0


def test_demo_dimension_mismatch():
    env = make_env("grid4")
    bad = [ExpertTrajectory((np.zeros(3), np.ones(3)))]
    with pytest.raises(InvalidInputError):
        train_inspiration(env, bad, small(max_steps=10))
    with pytest.raises(InvalidInputError):
        train_inspiration(env, [], small(max_steps=10))


def test_gaussian_expert_runs():
    env = make_env("pointmass")
    res = train_expert(env, small(max_steps=300))
    assert res.params.layout.policy == "gaussian"
    demos, acts = record_demos(res.params, env, 1)
    assert acts[0].shape == (2,) and np.all(np.abs(np.array(acts)) <= env.config.max_accel)


def test_metrics_columns():
    assert MetricsRow.columns()[0] == "total_steps"
    assert len(MetricsRow.columns()) == 8


def test_initial_classifier_loss_is_ln2(room_expert):
    env, p = room_expert
    demos, _ = record_demos(p, env, 2)
    res = train_inspiration(env, demos, small(max_steps=20))
    assert res.metrics[0].classifier_loss == pytest.approx(np.log(2.0), abs=0.01)


def test_soft_rewards_come_from_a_normalized_softmax(room_expert):
    env, p = room_expert
    demos, _ = record_demos(p, env, 2)
    seen = []

    def check(row, buf):
        for c, a, r in zip(buf.scores, buf.actions, buf.rewards):
            e = np.exp(c - c.max())
            seen.append(abs(np.sum(e / e.sum()) - 1.0))
            assert r == pytest.approx(e[a] / e.sum(), abs=1e-15)

    train_inspiration(env, demos, small(max_steps=200, reward_mode="soft"), on_metrics=check)
    assert seen and max(seen) < 1e-12


def test_value_tends_to_zero_without_reward():
    # the goal is sealed off, so every reward is zero
    env = GridWorld(GridConfig(3, 3, goal=(2, 2), starts=((0, 0),), walls=((1, 2), (2, 1)), max_episode_steps=10))
    p = ax.init_params(0, 2, (16,), 4)
    p.block("v.b")[...] = 1.0
    cells = np.array([env.encode(c) for c in env.free_cells() if c != (2, 2)])
    before = np.abs(ax.policy_value_batch(p, cells)[1]).max()
    res = train_expert(env, small(max_steps=3000, gamma=0.5), params=p)
    after = np.abs(ax.policy_value_batch(res.params, cells)[1]).max()
    assert after < 0.1 * before


@pytest.mark.parametrize("name", ["room", "pointmass"])
def test_recorded_states_replay_through_peek(name, room_expert):
    if name == "room":
        env, p = room_expert
    else:
        env = make_env("pointmass")
        p = train_expert(env, small(max_steps=200)).params
    demos, acts = record_demos(p, env, 2, seed=4)
    it = iter(acts)
    for d in demos:
        for s, s2 in zip(d.states[:-1], d.states[1:]):
            a = next(it)
            a = int(a[0]) if env.actions is not None else a
            assert np.array_equal(env.peek(s, a), s2)


def test_untrained_policy_near_random_walk():
    env = make_env("grid7")
    rng = np.random.default_rng(0)
    hits = 0
    for ep in range(400):
        env.reset(ep)
        while True:
            r = env.step(int(rng.integers(4)))
            if r.done:
                break
        hits += not r.truncated
    baseline = hits / 400
    p = ax.init_params(0, 2)
    assert abs(evaluate(p, env, 200, seed=1, greedy=False)[1] - baseline) < 0.05
    assert evaluate(p, env, 20, seed=1)[1] <= baseline + 0.05


def test_evaluate_is_deterministic(room_expert):
    env, p = room_expert
    assert evaluate(p, env, 10, seed=3, greedy=False) == evaluate(p, env, 10, seed=3, greedy=False)


def test_kmeans_with_k_distinct_points_returns_them():
    pts = np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]])
    x = np.repeat(pts, [4, 2, 3], axis=0)
    c = kmeans_actions(x, 3, seed=0)
    assert np.array_equal(c, pts[np.lexsort(pts.T[::-1])])
