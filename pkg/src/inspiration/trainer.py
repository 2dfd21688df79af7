"""Training loops: task-reward A2C for experts and the classifier-reward learner.

Also home to demonstration recording, k-means action discretization and
greedy evaluation.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import approximator as ax
from .core import (
    ActionSet,
    ExpertTrajectory,
    InvalidInputError,
    RewardMode,
    TrainConfig,
    stack_states,
)
from .envs import ObservationView
from .rewards import reward

log = logging.getLogger(__name__)


@dataclass
class RolloutBuffer:
    """One mini-trajectory of at most ``capacity`` steps."""

    capacity: int
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    next_states: list = field(default_factory=list)

    def add(self, s, a, score_vec, v, r, done, s_next=None):
        if len(self) >= self.capacity:
            raise InvalidInputError("rollout buffer is full")
        self.states.append(s)
        self.actions.append(a)
        self.scores.append(score_vec)
        self.values.append(v)
        self.rewards.append(r)
        self.dones.append(done)
        self.next_states.append(s_next)

    def __len__(self):
        return len(self.rewards)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity


@dataclass(frozen=True)
class MetricsRow:
    total_steps: int
    episode_return: float = math.nan
    policy_loss: float = math.nan
    value_loss: float = math.nan
    classifier_loss: float = math.nan
    mean_reward: float = math.nan
    reward_variance: float = math.nan
    success_rate: float = math.nan

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class TrainResult(NamedTuple):
    params: ax.ModelParams
    metrics: list


def compute_returns(buf, bootstrap_v: float, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Discounted returns seeded with ``bootstrap_v`` and advantages R_t - v_t."""
    rewards = buf.rewards if hasattr(buf, "rewards") else buf[0]
    values = buf.values if hasattr(buf, "values") else buf[1]
    n = len(rewards)
    returns = np.empty(n)
    acc = float(bootstrap_v)
    for t in reversed(range(n)):
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns, returns - np.asarray(values, dtype=np.float64)


# -- action selection ------------------------------------------------------------


def _sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> int:
    probs = ax.softmax(logits)
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(probs) - 1))


def select_action(p: ax.ModelParams, s: np.ndarray, rng=None, greedy=False):
    head, v = ax.policy_value_forward(p, s)
    if p.layout.policy == "gaussian":
        if greedy:
            return head, v
        std = np.exp(p.block("pi.log_std"))
        return head + std * rng.standard_normal(head.shape), v
    if greedy:
        return int(np.argmax(head)), v
    return _sample_categorical(head, rng), v


def _new_params(cfg: TrainConfig, obs_dim: int, n_actions: int, policy="categorical"):
    return ax.init_params(
        cfg.seed, obs_dim, cfg.hidden, n_actions, cfg.shared_trunk, cfg.clf_hidden, policy
    )


def _n_policy_outputs(env) -> tuple[int, str]:
    if getattr(env, "continuous", False) and env.actions is None:
        return env.action_dim, "gaussian"
    return len(env.actions), "categorical"


def _variance(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean((x - x.mean()) ** 2)) if x.size else math.nan


# -- expert ------------------------------------------------------------------------


def train_expert(env, cfg: TrainConfig, on_metrics: Callable | None = None, params=None) -> TrainResult:
    """Vanilla n-step advantage actor-critic on the environment's task reward."""
    rng = np.random.default_rng(cfg.seed)
    n_out, kind = _n_policy_outputs(env)
    p = params if params is not None else _new_params(cfg, env.obs_dim * cfg.stack_k, n_out, kind)
    g = ax.GradAccumulator(p)
    metrics = []
    total = 0
    raw = env.reset(int(rng.integers(2**31)))
    hist = [raw]
    while total < cfg.max_steps:
        states, actions, rewards, values = [], [], [], []
        done = truncated = False
        while len(rewards) < cfg.rollout_len and total < cfg.max_steps:
            s = stack_states(hist, cfg.stack_k)
            a, v = select_action(p, s, rng)
            r = env.step(a)
            states.append(s)
            actions.append(a)
            values.append(v)
            rewards.append(r.reward)
            total += 1
            hist = (hist + [r.state])[-cfg.stack_k :]
            done, truncated = r.done, r.truncated
            if done:
                break
        if done and not truncated:
            boot = 0.0
        else:
            boot = ax.policy_value_forward(p, stack_states(hist, cfg.stack_k))[1]
        R, A = compute_returns((rewards, values), boot, cfg.gamma)
        S = np.array(states)
        acts = np.array(actions)
        ax.accumulate_policy_grad(p, g, S, acts, A, cfg.entropy_coef)
        ax.accumulate_value_grad(p, g, S, R)
        row = MetricsRow(
            total_steps=total,
            policy_loss=float(-np.mean(A * _log_prob(p, S, acts))),
            value_loss=float(np.mean(0.5 * A**2)),
            mean_reward=float(np.mean(rewards)),
            reward_variance=_variance(rewards),
        )
        ax.apply_grads(p, g, cfg.lr_at(total - len(rewards)), cfg.max_grad_norm)
        row = _maybe_evaluate(row, p, env, cfg, total, len(rewards))
        metrics.append(row)
        if on_metrics:
            on_metrics(row)
        if done:
            raw = env.reset(int(rng.integers(2**31)))
            hist = [raw]
    return TrainResult(p, metrics)


def _log_prob(p, S, acts) -> np.ndarray:
    head, _ = ax.policy_value_batch(p, S)
    if p.layout.policy == "gaussian":
        return ax.gaussian_log_prob(head, p.block("pi.log_std"), acts)
    probs = ax.softmax(head)
    return np.log(np.maximum(probs[np.arange(len(acts)), acts], 1e-300))


def _maybe_evaluate(row, p, env, cfg, total, n_new):
    if cfg.eval_interval <= 0:
        return row
    if total // cfg.eval_interval == (total - n_new) // cfg.eval_interval and total < cfg.max_steps:
        return row
    # separate copy: the live episode must not be disturbed
    ret, succ = evaluate(p, copy.deepcopy(env), cfg.eval_episodes, seed=cfg.seed + 1_000_003, stack_k=cfg.stack_k)
    return MetricsRow(**{**row.__dict__, "episode_return": ret, "success_rate": succ})


# -- demonstrations ------------------------------------------------------------------


def record_demos(p: ax.ModelParams, env, n: int, seed: int = 0, stack_k: int = 1):
    """Roll out ``n`` greedy episodes.

    Returns state-only trajectories (raw observations) and, separately, the
    executed action log, which is only meant for action clustering.
    """
    if n < 1:
        raise InvalidInputError("n must be positive")
    rng = np.random.default_rng(seed)
    trajs, action_log = [], []
    for _ in range(n):
        s = env.reset(int(rng.integers(2**31)))
        hist, states = [s], [s]
        done = False
        while not done:
            a, _ = select_action(p, stack_states(hist, stack_k), greedy=True)
            r = env.step(a)
            if p.layout.policy == "gaussian":
                a = np.clip(a, -env.config.max_accel, env.config.max_accel)
            action_log.append(np.array(a, dtype=np.float64, ndmin=1))
            states.append(r.state)
            hist = (hist + [r.state])[-stack_k:]
            done = r.done
        trajs.append(ExpertTrajectory(tuple(states)))
    return trajs, action_log


# -- k-means ------------------------------------------------------------------------


def _sq_dists(x, c):
    return np.sum((x[:, None, :] - c[None, :, :]) ** 2, axis=2)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[int(rng.integers(len(x)))]]
    for _ in range(1, k):
        d = np.min(_sq_dists(x, np.array(centers)), axis=1)
        total = d.sum()
        if total <= 0:
            idx = int(rng.integers(len(x)))
        else:
            idx = int(np.searchsorted(np.cumsum(d), rng.random() * total, side="right"))
            idx = min(idx, len(x) - 1)
        centers.append(x[idx])
    return np.array(centers, dtype=np.float64)


def lloyd(x, k: int, seed: int = 0, max_iter: int = 100):
    """Lloyd's algorithm from k-means++ seeds.

    Returns ``(centroids, labels, sse_history)`` with one SSE entry per
    iteration. Centroids are in internal order (not sorted).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1 or len(x) < k:
        raise InvalidInputError(f"need at least k={k} points, got {len(x)}")
    rng = np.random.default_rng(seed)
    c = kmeans_pp_init(x, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        d = _sq_dists(x, c)
        new = np.argmin(d, axis=1)  # first minimum: lowest index wins ties
        for j in range(k):
            if not np.any(new == j):
                # farthest point whose own cluster survives losing it
                counts = np.bincount(new, minlength=k)
                own = np.where(counts[new] > 1, d[np.arange(len(x)), new], -1.0)
                far = int(np.argmax(own))
                c[j] = x[far]
                new[far] = j
        for j in range(k):
            c[j] = x[new == j].mean(axis=0)
        history.append(float(np.sum((x - c[new]) ** 2)))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    return c, new, history


def kmeans_actions(actions, k: int, seed: int = 0) -> np.ndarray:
    """Cluster continuous actions into ``k`` centroids, sorted lexicographically."""
    c, _, _ = lloyd(actions, k, seed)
    order = np.lexsort(c.T[::-1])
    return c[order]


# -- inspiration learner --------------------------------------------------------------


def _expert_pool(demos: Sequence[ExpertTrajectory], k: int, obs_dim: int):
    s, s2 = [], []
    for d in demos:
        if d.obs_dim != obs_dim:
            raise InvalidInputError(
                f"demonstration states have length {d.obs_dim}, environment emits {obs_dim}"
            )
        for t in d.transitions(k):
            s.append(t.s)
            s2.append(t.s_next)
    return np.array(s), np.array(s2)


def absorbing_value(mode: RewardMode, n_actions: int, gamma: float) -> float:
    """Return of remaining forever in the absorbing state past a terminal state.

    Demonstrations end in terminal states, so the absorbing continuation is
    scored as perfectly expert-like (c = 1) and every action ties.
    """
    return reward(mode, np.ones(n_actions), 0) / (1.0 - gamma)


def train_inspiration(
    env, demos: Sequence[ExpertTrajectory], cfg: TrainConfig, on_metrics: Callable | None = None
) -> TrainResult:
    """Learn from state-only demonstrations with classifier-derived rewards.

    The loop only sees a reward-free view of ``env``.
    """
    if not demos:
        raise InvalidInputError("need at least one demonstration")
    view = env if isinstance(env, ObservationView) else ObservationView(env)
    return _inspiration_loop(view, list(demos), cfg, on_metrics)


def _inspiration_loop(view: ObservationView, demos, cfg: TrainConfig, on_metrics) -> TrainResult:
    k = cfg.stack_k
    absorbing = cfg.terminal_bootstrap == "absorbing"
    exp_s, exp_s2 = _expert_pool(demos, k, view.obs_dim)
    rng = np.random.default_rng(cfg.seed)
    n_act = len(view.actions)
    p = _new_params(cfg, view.obs_dim * k, n_act)
    g = ax.GradAccumulator(p)
    metrics = []
    total = 0
    hist = [view.reset(int(rng.integers(2**31)))]
    while total < cfg.max_steps:
        buf = RolloutBuffer(cfg.rollout_len)
        done = truncated = False
        while not buf.full and total < cfg.max_steps:
            s = stack_states(hist, k)
            nxt = np.array([stack_states(hist + [view.peek(hist[-1], b)], k) for b in view.actions])
            head, v, c = ax.step_outputs(p, s, nxt)
            a = _sample_categorical(head, rng)
            step = view.step(a)
            total += 1
            hist = (hist + [step.state])[-k:]
            buf.add(s, a, c, v, reward(cfg.reward_mode, c, a), step.done, stack_states(hist, k))
            done, truncated = step.done, step.truncated
            if done:
                break
        s_last = stack_states(hist, k)
        if done and not truncated:
            boot = absorbing_value(cfg.reward_mode, n_act, cfg.gamma) if absorbing else 0.0
        else:
            boot = ax.policy_value_forward(p, s_last)[1]
        R, A = compute_returns(buf, boot, cfg.gamma)
        S = np.array(buf.states)
        acts = np.array(buf.actions)
        ag_s, ag_s2 = S, np.array(buf.next_states)
        idx = rng.integers(len(exp_s), size=len(ag_s))
        ex_s, ex_s2 = exp_s[idx], exp_s2[idx]
        clf_loss = ax.classifier_loss(
            p,
            np.vstack([ag_s, ex_s]),
            np.vstack([ag_s2, ex_s2]),
            np.r_[np.zeros(len(ag_s)), np.ones(len(ex_s))],
        )
        if not metrics and abs(clf_loss - math.log(2.0)) > 0.05:
            log.warning("initial classifier loss %.4f is far from ln 2; is c near 0.5 at init?", clf_loss)
        ax.accumulate_policy_grad(p, g, S, acts, A, cfg.entropy_coef)
        ax.accumulate_value_grad(p, g, S, R)
        ax.accumulate_classifier_grad(p, g, (ag_s, ag_s2), 0.0)
        ax.accumulate_classifier_grad(p, g, (ex_s, ex_s2), 1.0)
        row = MetricsRow(
            total_steps=total,
            policy_loss=float(-np.mean(A * _log_prob(p, S, acts))),
            value_loss=float(np.mean(0.5 * A**2)),
            classifier_loss=clf_loss,
            mean_reward=float(np.mean(buf.rewards)),
            reward_variance=_variance(buf.rewards),
        )
        ax.apply_grads(p, g, cfg.lr_at(total - len(buf)), cfg.max_grad_norm)
        if cfg.eval_interval > 0:
            row = _maybe_evaluate(row, p, view._env, cfg, total, len(buf))
        metrics.append(row)
        if on_metrics:
            on_metrics(row, buf)
        if done:
            hist = [view.reset(int(rng.integers(2**31)))]
    return TrainResult(p, metrics)


# -- evaluation ------------------------------------------------------------------------


def evaluate(p: ax.ModelParams, env, episodes: int, seed: int = 0, stack_k: int = 1, greedy: bool = True):
    """Mean task return and success rate over ``episodes`` rollouts.

    Greedy by default; ``greedy=False`` samples from the policy instead.
    """
    if episodes < 1:
        raise InvalidInputError("episodes must be positive")
    rng = np.random.default_rng(seed)
    returns, wins = [], 0
    for _ in range(episodes):
        hist = [env.reset(int(rng.integers(2**31)))]
        total, done = 0.0, False
        while not done:
            a, _ = select_action(p, stack_states(hist, stack_k), rng, greedy=greedy)
            r = env.step(a)
            total += r.reward
            hist = (hist + [r.state])[-stack_k:]
            done = r.done
        wins += int(not r.truncated)
        returns.append(total)
    return float(np.mean(returns)), wins / episodes
