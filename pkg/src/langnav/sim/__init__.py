"""Deterministic 2-D worlds, sensing, motion, expert oracle, and the
closed-loop episode executor."""

from .episode import (
    Coverage,
    EpisodeTrace,
    GoalSpec,
    derive_goal,
    frontier_actions,
    make_rollout,
    run_episode,
)
from .expert import DistanceField, expert_action
from .motion import move, path_length, plan_path, walk_along
from .sensing import SensorModel, line_of_sight, sense
from .world import (
    Environment,
    RegionSpec,
    SimObject,
    TEMPLATES,
    generate_environment,
    resolve_template,
)

__all__ = [
    "Coverage",
    "DistanceField",
    "Environment",
    "EpisodeTrace",
    "GoalSpec",
    "RegionSpec",
    "SensorModel",
    "SimObject",
    "TEMPLATES",
    "derive_goal",
    "expert_action",
    "frontier_actions",
    "generate_environment",
    "line_of_sight",
    "make_rollout",
    "move",
    "path_length",
    "plan_path",
    "resolve_template",
    "run_episode",
    "sense",
    "walk_along",
]
