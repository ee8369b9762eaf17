"""Learned global path planning on occupancy grids.

Dataset synthesis with exact shortest-path expert labels, a small
differentiable compute core, four trainable planner networks, greedy
rollout planning, and evaluation tooling.
"""

__version__ = "0.1.0"

from .gridworld import (
    ACTION_DELTAS,
    N_ACTIONS,
    UNLABELED,
    UNREACHABLE,
    ActionLabels,
    DistanceField,
    GenerationError,
    GridMap,
    MdpSpec,
    build_dataset,
    expert_distances,
    generate_map,
    optimal_actions,
)

__all__ = [
    "ACTION_DELTAS",
    "N_ACTIONS",
    "UNLABELED",
    "UNREACHABLE",
    "ActionLabels",
    "DistanceField",
    "GenerationError",
    "GridMap",
    "MdpSpec",
    "build_dataset",
    "expert_distances",
    "generate_map",
    "optimal_actions",
    "__version__",
]
