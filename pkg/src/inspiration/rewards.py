"""Per-action classifier scores and the three reward transforms built on them."""

from __future__ import annotations

import numpy as np

from .approximator import ModelParams, classify_batch
from .core import ActionSet, InvalidInputError, RewardMode, stack_states


def check_scores(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise InvalidInputError("score vector must be a nonempty 1-D sequence")
    return c


def _check_action(c: np.ndarray, a) -> int:
    a = int(a)
    if not 0 <= a < c.size:
        raise InvalidInputError(f"action {a} out of range for {c.size} actions")
    return a


def score_all_actions(
    p: ModelParams, env, s, acts: ActionSet | None = None, history=None, k: int = 1
) -> np.ndarray:
    """Classifier score of the transition each action would cause from ``s``.

    ``s`` is the raw current observation. With frame stacking, pass the raw
    ``history`` ending in ``s``; both sides of every transition are stacked
    the same way.
    """
    acts = acts if acts is not None else env.actions
    nxt = [env.peek(s, a) for a in acts]
    if history is None:
        history = [s]
    cur = stack_states(history, k)
    tail = list(history[-k:])
    nxt_stacked = np.array([stack_states(tail + [x], k) for x in nxt])
    cur_b = np.broadcast_to(cur, nxt_stacked.shape)
    return classify_batch(p, cur_b, nxt_stacked)


def basic_reward(c, a) -> float:
    c = check_scores(c)
    return float(c[_check_action(c, a)])


def pref_reward(c, a) -> float:
    """Fraction of actions whose score does not exceed that of ``a``."""
    c = check_scores(c)
    a = _check_action(c, a)
    return int(np.count_nonzero(c <= c[a])) / c.size


def soft_pref_reward(c, a) -> float:
    c = check_scores(c)
    a = _check_action(c, a)
    e = np.exp(c - c.max())
    return float(e[a] / e.sum())


_TRANSFORMS = {
    RewardMode.BASIC: basic_reward,
    RewardMode.PREFERENTIAL: pref_reward,
    RewardMode.SOFT_PREFERENTIAL: soft_pref_reward,
}


def reward(mode, c, a) -> float:
    return _TRANSFORMS[RewardMode(mode)](c, a)
