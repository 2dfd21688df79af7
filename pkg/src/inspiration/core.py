"""Domain types shared across the package.

States are plain float64 numpy vectors. Everything else is an immutable
value type so it can be copied freely between evaluation workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


def as_state(values, dim: int | None = None) -> np.ndarray:
    """Coerce ``values`` into a finite 1-D float64 state vector."""
    s = np.asarray(values, dtype=np.float64)
    if s.ndim != 1:
        raise InvalidInputError(f"state must be 1-D, got shape {s.shape}")
    if dim is not None and s.shape[0] != dim:
        raise InvalidInputError(f"state has length {s.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("state contains non-finite entries")
    return s


def stack_states(history: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Concatenate the last ``k`` observations of ``history``.

    Short histories are left-padded by repeating the earliest observation,
    so the result always has length ``obs_dim * k``.
    """
    if k < 1:
        raise InvalidInputError("k must be positive")
    if len(history) == 0:
        raise InvalidInputError("history must be nonempty")
    dim = len(history[0])
    if any(len(h) != dim for h in history):
        raise InvalidInputError("history entries differ in dimension")
    if k == 1:
        return as_state(history[-1])
    frames = list(history[-k:])
    if len(frames) < k:
        frames = [frames[0]] * (k - len(frames)) + frames
    return as_state(np.concatenate(frames))


# -- actions -----------------------------------------------------------------


@dataclass(frozen=True)
class Primitive:
    id: int


@dataclass(frozen=True)
class Macro:
    id: int
    steps: tuple[int, ...]

    def __post_init__(self):
        if len(self.steps) == 0:
            raise InvalidInputError("macro must contain at least one primitive")
        object.__setattr__(self, "steps", tuple(int(x) for x in self.steps))


@dataclass(frozen=True)
class Centroid:
    id: int
    vector: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "vector", tuple(float(x) for x in self.vector))


ActionSpec = Union[Primitive, Macro, Centroid]


@dataclass(frozen=True)
class ActionSet:
    """A homogeneous, densely numbered action vocabulary."""

    actions: tuple[ActionSpec, ...]

    def __post_init__(self):
        acts = tuple(self.actions)
        object.__setattr__(self, "actions", acts)
        if not acts:
            raise InvalidInputError("action set must be nonempty")
        if sorted(a.id for a in acts) != list(range(len(acts))):
            raise InvalidInputError("action ids must be 0..n-1 without duplicates")
        if len({type(a) for a in acts}) != 1:
            raise InvalidInputError("action set mixes action kinds")
        if isinstance(acts[0], Centroid) and len({len(a.vector) for a in acts}) != 1:
            raise InvalidInputError("centroids differ in dimension")
        object.__setattr__(self, "actions", tuple(sorted(acts, key=lambda a: a.id)))

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, i: int) -> ActionSpec:
        if not 0 <= i < len(self.actions):
            raise InvalidInputError(f"unknown action id {i}")
        return self.actions[i]

    def __iter__(self):
        return iter(self.actions)

    @property
    def kind(self) -> str:
        return {Primitive: "primitive", Macro: "macro", Centroid: "centroid"}[type(self.actions[0])]


def primitive_actionset(n: int) -> ActionSet:
    return ActionSet(tuple(Primitive(i) for i in range(n)))


# -- transitions and demonstrations ------------------------------------------


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    s_next: np.ndarray

    def __post_init__(self):
        s, s_next = as_state(self.s), as_state(self.s_next)
        if s.shape != s_next.shape:
            raise InvalidInputError("transition endpoints differ in dimension")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "s_next", s_next)


@dataclass(frozen=True, eq=False)
class ExpertTrajectory:
    """State-only demonstration: visited states in order, nothing else."""

    states: tuple[np.ndarray, ...]

    def __post_init__(self):
        states = tuple(as_state(s) for s in self.states)
        if len(states) < 2:
            raise InvalidInputError("a trajectory needs at least two states")
        if len({s.shape[0] for s in states}) != 1:
            raise InvalidInputError("trajectory states differ in dimension")
        for s in states:
            s.setflags(write=False)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return len(self.states)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExpertTrajectory) or len(self) != len(other):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.states, other.states))

    @property
    def obs_dim(self) -> int:
        return self.states[0].shape[0]

    def transitions(self, k: int = 1) -> list[Transition]:
        """Consecutive (stacked) state pairs along the trajectory."""
        stacked = [stack_states(self.states[: i + 1], k) for i in range(len(self.states))]
        return [Transition(a, b) for a, b in zip(stacked[:-1], stacked[1:])]


# -- configuration -----------------------------------------------------------


class RewardMode(str, enum.Enum):
    BASIC = "basic"
    PREFERENTIAL = "pref"
    SOFT_PREFERENTIAL = "soft"


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    rollout_len: int = 20
    stack_k: int = 1
    learning_rate: float = 0.1
    entropy_coef: float = 0.01
    reward_mode: RewardMode = RewardMode.PREFERENTIAL
    shared_trunk: bool = True
    max_steps: int = 200_000
    seed: int = 0
    n_demos: int = 10
    hidden: tuple[int, ...] = (64, 64)
    clf_hidden: int = 32
    terminal_bootstrap: str = "absorbing"
    max_grad_norm: float = 1.0
    lr_schedule: str = "linear"
    eval_interval: int = 0
    eval_episodes: int = 20

    def __post_init__(self):
        object.__setattr__(self, "reward_mode", RewardMode(self.reward_mode))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidInputError("gamma must lie in [0, 1)")
        if self.rollout_len < 1:
            raise InvalidInputError("rollout_len must be >= 1")
        if self.stack_k < 1:
            raise InvalidInputError("stack_k must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.entropy_coef < 0:
            raise InvalidInputError("entropy_coef must be nonnegative")
        if self.max_steps < 1 or self.n_demos < 1:
            raise InvalidInputError("max_steps and n_demos must be positive")
        if self.terminal_bootstrap not in ("absorbing", "zero"):
            raise InvalidInputError("terminal_bootstrap must be 'absorbing' or 'zero'")
        if self.lr_schedule not in ("constant", "linear"):
            raise InvalidInputError("lr_schedule must be 'constant' or 'linear'")

    def lr_at(self, steps_done: int) -> float:
        """Step size for an update whose rollout began after ``steps_done`` env steps."""
        if self.lr_schedule == "constant":
            return self.learning_rate
        return self.learning_rate * max(1.0 - steps_done / self.max_steps, 0.0)


# Per-stage defaults. With gamma = 0.99 the expert's value surface is flat
# enough that greedy play can stall in wall corners until late in training.
# The imitation learner gets dense, bounded rewards and converges in fewer
# steps; a shorter horizon than 0.95 left macro agents short of the goal.
STAGE_DEFAULTS = {
    "expert": dict(gamma=0.95, max_steps=100_000),
    "agent": dict(gamma=0.95, max_steps=60_000),
}


def stage_config(stage: str, **overrides) -> TrainConfig:
    if stage not in STAGE_DEFAULTS:
        raise InvalidInputError(f"unknown stage {stage!r}")
    return TrainConfig(**{**STAGE_DEFAULTS[stage], **overrides})
