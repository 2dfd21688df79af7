"""Imitation between agents with different action spaces.

The learner never sees expert actions or task rewards. A classifier scores
state transitions as expert-like, and the scores of all candidate actions
are turned into a reward for an advantage actor-critic.
"""

from .approximator import GradAccumulator, Layout, ModelParams, apply_grads, grad_check, init_params
from .core import (
    ActionSet,
    Centroid,
    ExpertTrajectory,
    InvalidInputError,
    Macro,
    Primitive,
    RewardMode,
    TrainConfig,
    Transition,
    primitive_actionset,
    stack_states,
)
from .envs import GridWorld, ObservationView, PointMass, make_env
from .rewards import basic_reward, pref_reward, reward, score_all_actions, soft_pref_reward
from .trainer import (
    MetricsRow,
    RolloutBuffer,
    TrainResult,
    compute_returns,
    evaluate,
    kmeans_actions,
    lloyd,
    record_demos,
    train_expert,
    train_inspiration,
)

__all__ = [name for name in dir() if not name.startswith("_")]
