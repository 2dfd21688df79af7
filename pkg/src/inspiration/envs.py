"""Deterministic desk-scale environments with a side-effect-free transition oracle.

Both environments expose ``reset(seed)``, ``step(action)`` and
``peek(state, action)``. ``peek`` answers "where would this action take me
from that state" without touching the live episode, which is what lets the
learner score every action, not just the one it took.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    ActionSet,
    ActionSpec,
    Centroid,
    InvalidInputError,
    Macro,
    Primitive,
    as_state,
    primitive_actionset,
)

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}


class StepResult(NamedTuple):
    state: np.ndarray
    done: bool
    reward: float
    truncated: bool = False


class ObservedStep(NamedTuple):
    state: np.ndarray
    done: bool
    truncated: bool


# -- grid world ----------------------------------------------------------------


@dataclass(frozen=True)
class GridConfig:
    width: int
    height: int
    goal: tuple[int, int]
    starts: tuple[tuple[int, int], ...] = ((0, 0),)
    walls: frozenset = frozenset()
    max_episode_steps: int = 50

    def __post_init__(self):
        object.__setattr__(self, "goal", tuple(self.goal))
        object.__setattr__(self, "starts", tuple(tuple(s) for s in self.starts))
        object.__setattr__(self, "walls", frozenset(tuple(w) for w in self.walls))
        if self.width < 1 or self.height < 1 or self.max_episode_steps < 1:
            raise InvalidInputError("grid dimensions and episode cap must be positive")
        cells = set(self.starts) | {self.goal}
        if any(not (0 <= x < self.width and 0 <= y < self.height) for x, y in cells):
            raise InvalidInputError("start/goal outside the grid")
        if self.goal in self.starts:
            raise InvalidInputError("start and goal must differ")
        if cells & self.walls:
            raise InvalidInputError("start/goal placed on a wall")


class GridWorld:
    """Deterministic grid; observations are (x, y) scaled into [0, 1]."""

    kind = "gridworld"
    continuous = False
    obs_dim = 2

    def __init__(self, config: GridConfig, actions: ActionSet | None = None):
        self.config = config
        self.actions = actions if actions is not None else primitive_actionset(4)
        if self.actions.kind == "centroid":
            raise InvalidInputError("grid world takes primitive or macro actions")
        for a in self.actions:
            steps = a.steps if isinstance(a, Macro) else (a.id,)
            if any(s not in MOVES for s in steps):
                raise InvalidInputError(f"action {a} uses an unknown primitive")
        self.pos: tuple[int, int] | None = None
        self.t = 0
        self.done = True

    def with_actions(self, actions: ActionSet) -> "GridWorld":
        return GridWorld(self.config, actions)

    def encode(self, cell) -> np.ndarray:
        c = self.config
        return np.array(
            [cell[0] / max(c.width - 1, 1), cell[1] / max(c.height - 1, 1)], dtype=np.float64
        )

    def decode(self, s) -> tuple[int, int]:
        c = self.config
        s = as_state(s, self.obs_dim)
        x = s[0] * max(c.width - 1, 1)
        y = s[1] * max(c.height - 1, 1)
        cell = (int(round(x)), int(round(y)))
        if abs(x - cell[0]) > 1e-6 or abs(y - cell[1]) > 1e-6:
            raise InvalidInputError(f"state {s} is not a grid cell")
        if not (0 <= cell[0] < c.width and 0 <= cell[1] < c.height) or cell in c.walls:
            raise InvalidInputError(f"state {s} is not a free cell")
        return cell

    def free_cells(self) -> list[tuple[int, int]]:
        c = self.config
        return [
            (x, y) for x in range(c.width) for y in range(c.height) if (x, y) not in c.walls
        ]

    def _move(self, cell, prim):
        dx, dy = MOVES[prim]
        nxt = (cell[0] + dx, cell[1] + dy)
        c = self.config
        if not (0 <= nxt[0] < c.width and 0 <= nxt[1] < c.height) or nxt in c.walls:
            return cell
        return nxt

    def _execute(self, cell, a: ActionSpec):
        steps = a.steps if isinstance(a, Macro) else (a.id,)
        for prim in steps:
            cell = self._move(cell, prim)
            if cell == self.config.goal:
                break
        return cell

    def _lookup(self, a) -> ActionSpec:
        if isinstance(a, (int, np.integer)):
            return self.actions[int(a)]
        if a not in self.actions.actions:
            raise InvalidInputError(f"action {a} is not in this environment's action set")
        return a

    def reset(self, seed: int = 0) -> np.ndarray:
        starts = self.config.starts
        rng = np.random.default_rng(seed)
        self.pos = starts[int(rng.integers(len(starts)))]
        self.t = 0
        self.done = False
        return self.encode(self.pos)

    def step(self, a) -> StepResult:
        if self.done:
            raise InvalidInputError("step called on a finished episode; call reset")
        spec = self._lookup(a)
        self.pos = self._execute(self.pos, spec)
        self.t += 1
        at_goal = self.pos == self.config.goal
        truncated = not at_goal and self.t >= self.config.max_episode_steps
        self.done = at_goal or truncated
        return StepResult(self.encode(self.pos), self.done, 1.0 if at_goal else 0.0, truncated)

    def peek(self, s, a) -> np.ndarray:
        return self.encode(self._execute(self.decode(s), self._lookup(a)))

    def success(self, s) -> bool:
        return self.decode(s) == self.config.goal


# -- point mass ----------------------------------------------------------------


@dataclass(frozen=True)
class PointMassConfig:
    start: tuple[float, float] = (-0.7, -0.7)
    start_jitter: float = 0.0
    goal: tuple[float, float] = (0.6, 0.6)
    goal_radius: float = 0.3
    dt: float = 0.2
    drag: float = 0.1
    max_accel: float = 1.0
    bound: float = 1.0
    max_episode_steps: int = 60
    action_penalty: float = 0.01

    def __post_init__(self):
        if self.dt <= 0 or not 0 <= self.drag < 1 or self.max_episode_steps < 1:
            raise InvalidInputError("invalid point-mass parameters")


class PointMass:
    """2-D point mass with drag; observation is (px, py, vx, vy).

    Dynamics: pos' = pos + dt*vel, vel' = (1-drag)*vel + dt*a, then the
    position is clamped to the arena and clamped velocity components zeroed.
    """

    kind = "pointmass"
    obs_dim = 4
    action_dim = 2

    def __init__(self, config: PointMassConfig, actions: ActionSet | None = None):
        self.config = config
        if actions is not None and actions.kind != "centroid":
            raise InvalidInputError("point mass takes continuous or centroid actions")
        if actions is not None and len(actions[0].vector) != self.action_dim:
            raise InvalidInputError("centroid dimension does not match the action space")
        self.actions = actions
        self.state: np.ndarray | None = None
        self.t = 0
        self.done = True

    @property
    def continuous(self) -> bool:
        return self.actions is None

    def with_actions(self, actions: ActionSet | None) -> "PointMass":
        return PointMass(self.config, actions)

    def _vector(self, a) -> np.ndarray:
        if isinstance(a, (int, np.integer)) and self.actions is not None:
            a = self.actions[int(a)]
        if isinstance(a, Centroid):
            if self.actions is not None and a not in self.actions.actions:
                raise InvalidInputError(f"action {a} is not in this environment's action set")
            a = a.vector
        elif isinstance(a, (Primitive, Macro, int, np.integer)):
            raise InvalidInputError(f"point mass cannot execute {a!r}")
        v = np.asarray(a, dtype=np.float64)
        if v.shape != (self.action_dim,) or not np.all(np.isfinite(v)):
            raise InvalidInputError(f"bad continuous action {a!r}")
        m = self.config.max_accel
        return np.clip(v, -m, m)

    def dynamics(self, s: np.ndarray, acc: np.ndarray) -> np.ndarray:
        c = self.config
        pos, vel = s[:2], s[2:]
        new_pos = pos + c.dt * vel
        new_vel = (1.0 - c.drag) * vel + c.dt * acc
        clamped = np.clip(new_pos, -c.bound, c.bound)
        new_vel = np.where(clamped != new_pos, 0.0, new_vel)
        return np.concatenate([clamped, new_vel])

    def in_goal(self, s) -> bool:
        c = self.config
        d = np.asarray(s[:2]) - np.asarray(c.goal)
        return bool(np.dot(d, d) <= c.goal_radius**2)

    success = in_goal

    def reset(self, seed: int = 0) -> np.ndarray:
        c = self.config
        pos = np.array(c.start, dtype=np.float64)
        if c.start_jitter > 0:
            rng = np.random.default_rng(seed)
            pos = pos + rng.uniform(-c.start_jitter, c.start_jitter, size=2)
        self.state = np.concatenate([pos, np.zeros(2)])
        self.t = 0
        self.done = False
        return self.state.copy()

    def step(self, a) -> StepResult:
        if self.done:
            raise InvalidInputError("step called on a finished episode; call reset")
        acc = self._vector(a)
        self.state = self.dynamics(self.state, acc)
        self.t += 1
        hit = self.in_goal(self.state)
        truncated = not hit and self.t >= self.config.max_episode_steps
        self.done = hit or truncated
        r = 1.0 if hit else -self.config.action_penalty * float(np.dot(acc, acc))
        return StepResult(self.state.copy(), self.done, r, truncated)

    def peek(self, s, a) -> np.ndarray:
        s = as_state(s, self.obs_dim)
        b = self.config.bound
        if np.any(np.abs(s[:2]) > b):
            raise InvalidInputError(f"state {s} lies outside the arena")
        return self.dynamics(s, self._vector(a))


# -- reward-free view ----------------------------------------------------------


class ObservationView:
    """Wraps an environment and hides its task reward.

    The imitation learner only ever holds one of these, so it cannot read
    the reward channel even by accident.
    """

    def __init__(self, env):
        self._env = env
        self.actions = env.actions
        self.obs_dim = env.obs_dim
        self.kind = env.kind

    def reset(self, seed: int = 0) -> np.ndarray:
        return self._env.reset(seed)

    def step(self, a) -> ObservedStep:
        r = self._env.step(a)
        return ObservedStep(r.state, r.done, r.truncated)

    def peek(self, s, a) -> np.ndarray:
        return self._env.peek(s, a)


# -- action sets ---------------------------------------------------------------


def make_macro_actionset(base: ActionSet, macros: Sequence[Sequence[int]]) -> ActionSet:
    valid = {a.id for a in base if isinstance(a, Primitive)}
    if len(valid) != len(base):
        raise InvalidInputError("base action set must contain primitives only")
    out = []
    for i, steps in enumerate(macros):
        steps = tuple(int(x) for x in steps)
        if not steps:
            raise InvalidInputError(f"macro {i} is empty")
        if any(x not in valid for x in steps):
            raise InvalidInputError(f"macro {i} uses a primitive outside the base set")
        out.append(Macro(i, steps))
    return ActionSet(tuple(out))


def make_centroid_actionset(centroids) -> ActionSet:
    cs = [tuple(float(x) for x in c) for c in centroids]
    if not cs:
        raise InvalidInputError("need at least one centroid")
    if len({len(c) for c in cs}) != 1:
        raise InvalidInputError("centroids differ in dimension")
    return ActionSet(tuple(Centroid(i, c) for i, c in enumerate(cs)))


# -- presets and text configs ---------------------------------------------------

# two-cell skills built from the four primitives
DEFAULT_MACROS = ((UP, UP), (RIGHT, RIGHT), (UP, RIGHT), (RIGHT, UP), (DOWN, DOWN), (LEFT, LEFT))

PRESETS = {
    "grid7": dict(
        kind="gridworld",
        width=7,
        height=7,
        goal=(6, 6),
        starts=((0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1)),
        walls=((3, 2), (3, 3), (3, 4)),
        max_episode_steps=40,
    ),
    "grid4": dict(
        kind="gridworld",
        width=4,
        height=4,
        goal=(3, 3),
        starts=((0, 0),),
        walls=((1, 1), (2, 1)),
        max_episode_steps=20,
    ),
    "pointmass": dict(kind="pointmass", start_jitter=0.15),
}


def _cells(text: str):
    text = text.strip()
    if not text:
        return ()
    return tuple(tuple(int(v) for v in part.split(",")) for part in text.split(";"))


def _floats(text: str):
    return tuple(float(v) for v in text.split(","))


def parse_env_config(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into an env description."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"line {lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        try:
            if key in ("starts", "walls", "macros"):
                out[key] = _cells(value)
            elif key in ("goal", "start"):
                out[key] = _floats(value) if out.get("kind") == "pointmass" else tuple(int(v) for v in value.split(","))
            elif key in ("width", "height", "max_episode_steps"):
                out[key] = int(value)
            elif key == "kind":
                out[key] = value
            else:
                out[key] = float(value)
        except ValueError as exc:
            raise InvalidInputError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    if out.get("kind") not in ("gridworld", "pointmass"):
        raise InvalidInputError("env config must set kind = gridworld | pointmass")
    if "start" in out and out["kind"] == "gridworld":
        out["starts"] = (out.pop("start"),)
    return out


def format_env_config(desc: dict) -> str:
    lines = [f"kind = {desc['kind']}"]
    for key, value in desc.items():
        if key == "kind":
            continue
        if key in ("starts", "walls", "macros"):
            value = "; ".join(",".join(str(v) for v in c) for c in value)
        elif isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def resolve_env(name_or_desc) -> dict:
    if isinstance(name_or_desc, dict):
        return dict(name_or_desc)
    if name_or_desc in PRESETS:
        return dict(PRESETS[name_or_desc])
    raise InvalidInputError(f"unknown environment {name_or_desc!r}; presets: {sorted(PRESETS)}")


def make_env(name_or_desc, actions: ActionSet | None = None):
    desc = resolve_env(name_or_desc)
    kind = desc.pop("kind")
    desc.pop("macros", None)
    if kind == "gridworld":
        return GridWorld(GridConfig(**desc), actions)
    if kind == "pointmass":
        for key in ("start", "goal"):
            if key in desc:
                desc[key] = tuple(desc[key])
        return PointMass(PointMassConfig(**desc), actions)
    raise InvalidInputError(f"unknown environment kind {kind!r}")


def env_macros(name_or_desc):
    return tuple(resolve_env(name_or_desc).get("macros", DEFAULT_MACROS))
