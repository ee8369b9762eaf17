"""Occupancy-grid worlds, their movement model, and exact expert labels.

A rover lives on an H x W grid of free (0) and obstacle (1) cells and may
move to any of its 8 neighbours, one cell per step. The expert labeler runs
a breadth-first search outward from the goal over free cells, so for every
reachable cell we know the exact number of steps to the goal and the full
set of first moves that realize it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

N_ACTIONS = 8

# Action id -> (row delta, col delta). Rows grow southward, columns eastward.
# 0 east, 1 south, 2 west, 3 north, 4 southeast, 5 northeast, 6 southwest,
# 7 northwest.
ACTION_DELTAS = np.array(
    [
        (0, 1),
        (1, 0),
        (0, -1),
        (-1, 0),
        (1, 1),
        (-1, 1),
        (1, -1),
        (-1, -1),
    ],
    dtype=np.int64,
)

OPPOSITE_ACTION = np.array([2, 3, 0, 1, 7, 6, 5, 4], dtype=np.int64)

UNREACHABLE = 0xFFFF  # distance sentinel, fits the on-disk uint16 encoding
UNLABELED = 255  # label sentinel for goal / obstacle / unreachable cells

MAX_GENERATION_RETRIES = 100


class GenerationError(RuntimeError):
    """Raised when random generation cannot satisfy its invariants."""


@dataclass(frozen=True)
class GridMap:
    """Occupancy grid plus goal cell.

    cells is an H x W uint8 array, 0 free and 1 obstacle. goal is (row, col)
    and must be a free cell.
    """

    cells: np.ndarray
    goal: tuple[int, int]

    def __post_init__(self):
        cells = np.ascontiguousarray(np.asarray(self.cells, dtype=np.uint8))
        object.__setattr__(self, "cells", cells)
        if cells.ndim != 2:
            raise ValueError(f"cells must be 2-D, got shape {cells.shape}")
        g1, g2 = self.goal
        h, w = cells.shape
        if not (0 <= g1 < h and 0 <= g2 < w):
            raise ValueError(f"goal {self.goal} outside {h}x{w} grid")
        if cells[g1, g2] != 0:
            raise ValueError(f"goal {self.goal} is an obstacle cell")

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.cells.shape[0] and 0 <= c < self.cells.shape[1]

    def is_free(self, r: int, c: int) -> bool:
        return self.in_bounds(r, c) and self.cells[r, c] == 0


@dataclass(frozen=True)
class MdpSpec:
    """Reward and discount parameters of the navigation decision process.

    Only the tabular value-iteration oracle consumes these numbers; the
    imitation-learned planners never see them. Any reward_goal > 0 with
    reward_step < 0 produces the same optimal policy.
    """

    reward_goal: float = 10.0
    reward_step: float = -1.0
    discount: float = 0.99

    def __post_init__(self):
        if self.reward_goal <= 0:
            raise ValueError("reward_goal must be positive")
        if self.reward_step >= 0:
            raise ValueError("reward_step must be negative")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")


@dataclass(frozen=True)
class DistanceField:
    """Per-cell shortest step counts to the goal, UNREACHABLE where none."""

    dist: np.ndarray  # H x W int32

    def reachable(self) -> np.ndarray:
        return self.dist != UNREACHABLE


@dataclass(frozen=True)
class ActionLabels:
    """Expert supervision: per-cell optimal action sets and a single label.

    optimal_set is an H x W uint8 bitmask (bit a set when action a is a
    first move on some shortest path). label is the minimum action id of
    the set, or UNLABELED at goal, obstacle, and unreachable cells.
    """

    optimal_set: np.ndarray
    label: np.ndarray

    def labeled_cells(self) -> np.ndarray:
        """Return an (n, 2) array of (row, col) for all labeled cells."""
        return np.argwhere(self.label != UNLABELED)


def generate_map(seed: int, height: int, width: int, density: float) -> GridMap:
    """Sample a random occupancy grid with a reachable free goal.

    Each non-goal cell is an obstacle with probability density. The goal is
    drawn uniformly over free cells. Maps where no free non-goal cell can
    reach the goal are rejected and resampled, up to MAX_GENERATION_RETRIES
    attempts on sub-seeds derived from seed.
    """
    if height < 4 or width < 4:
        raise ValueError("grid must be at least 4x4")
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    for attempt in range(MAX_GENERATION_RETRIES):
        rng = np.random.default_rng([seed, attempt])
        cells = (rng.random((height, width)) < density).astype(np.uint8)
        free = np.argwhere(cells == 0)
        if len(free) < 2:
            continue
        goal = tuple(int(v) for v in free[rng.integers(len(free))])
        cells[goal] = 0
        gmap = GridMap(cells=cells, goal=goal)
        dist = _bfs_distances(gmap)
        # at least one free non-goal cell must reach the goal
        reach = (dist != UNREACHABLE).sum()
        if reach >= 2:
            return gmap
    raise GenerationError(
        f"no reachable map after {MAX_GENERATION_RETRIES} attempts "
        f"(seed={seed}, density={density})"
    )


def _bfs_distances(gmap: GridMap) -> np.ndarray:
    h, w = gmap.cells.shape
    dist = np.full((h, w), UNREACHABLE, dtype=np.int32)
    g1, g2 = gmap.goal
    dist[g1, g2] = 0
    queue = deque([(g1, g2)])
    cells = gmap.cells
    deltas = ACTION_DELTAS
    while queue:
        r, c = queue.popleft()
        d = dist[r, c] + 1
        for k in range(N_ACTIONS):
            nr, nc = r + deltas[k, 0], c + deltas[k, 1]
            if 0 <= nr < h and 0 <= nc < w and cells[nr, nc] == 0:
                if dist[nr, nc] > d:
                    dist[nr, nc] = d
                    queue.append((nr, nc))
    return dist


def expert_distances(gmap: GridMap) -> DistanceField:
    """Breadth-first shortest step counts from every free cell to the goal.

    All 8 moves cost one step. A diagonal move only requires its destination
    cell to be free, so corners may be cut; the planner rollout applies the
    identical rule. Obstacle cells are UNREACHABLE.
    """
    return DistanceField(dist=_bfs_distances(gmap))


def optimal_actions(gmap: GridMap, dfield: DistanceField) -> ActionLabels:
    """Derive per-cell optimal action sets from a distance field.

    Action a is optimal at s when it moves to a free cell one step closer
    to the goal. The stored scalar label is the minimum optimal action id,
    which makes labels deterministic; evaluation may still credit any
    member of the set.
    """
    dist = dfield.dist
    h, w = dist.shape
    optimal_set = np.zeros((h, w), dtype=np.uint8)
    free = gmap.cells == 0
    reach = (dist != UNREACHABLE) & free
    for a in range(N_ACTIONS):
        dr, dc = ACTION_DELTAS[a]
        shifted = np.full((h, w), UNREACHABLE, dtype=np.int64)
        rs = slice(max(0, -dr), min(h, h - dr))
        cs = slice(max(0, -dc), min(w, w - dc))
        rd = slice(max(0, dr), min(h, h + dr))
        cd = slice(max(0, dc), min(w, w + dc))
        shifted[rs, cs] = dist[rd, cd]
        ok = reach & (shifted == dist - 1)
        optimal_set |= (ok.astype(np.uint8)) << a
    g1, g2 = gmap.goal
    optimal_set[g1, g2] = 0
    label = np.full((h, w), UNLABELED, dtype=np.uint8)
    has = optimal_set != 0
    # minimum set bit = deterministic tie-break
    low_bit = optimal_set[has].astype(np.int64)
    low_bit = low_bit & -low_bit
    label[has] = np.round(np.log2(low_bit)).astype(np.uint8)
    return ActionLabels(optimal_set=optimal_set, label=label)


@dataclass
class Dataset:
    """Expert-labeled maps with a disjoint train/test split.

    entries holds one (map_index, row, col, label) row per labeled cell of
    every kept map. Maps whose label set came up empty are dropped and
    counted in dropped_maps.
    """

    maps: list
    labels: list
    distances: list
    train_ids: list[int] = field(default_factory=list)
    test_ids: list[int] = field(default_factory=list)
    entries: np.ndarray = None  # (n, 4) int64: map_index, row, col, label
    dropped_maps: int = 0

    def entries_for(self, ids: list[int]) -> np.ndarray:
        mask = np.isin(self.entries[:, 0], np.asarray(ids, dtype=np.int64))
        return self.entries[mask]

    def split_entries(self, split: str) -> np.ndarray:
        if split == "train":
            return self.entries_for(self.train_ids)
        if split == "test":
            return self.entries_for(self.test_ids)
        raise ValueError(f"unknown split {split!r}")


def build_dataset(maps: list[GridMap], seed: int, test_fraction: float = 1.0 / 7.0,
                  labels: list[ActionLabels] | None = None,
                  distances: list[DistanceField] | None = None) -> Dataset:
    """Label maps and assign a map-level train/test split.

    The split is over whole maps so the two sides never share an
    environment. Labels and distances may be passed in when already
    computed; otherwise they are derived here.
    """
    if not maps:
        raise ValueError("maps must be nonempty")
    if distances is None:
        distances = [expert_distances(m) for m in maps]
    if labels is None:
        labels = [optimal_actions(m, d) for m, d in zip(maps, distances)]
    rows = []
    kept = []
    dropped = 0
    for i, lab in enumerate(labels):
        cells = lab.labeled_cells()
        if len(cells) == 0:
            dropped += 1
            continue
        kept.append(i)
        lv = lab.label[cells[:, 0], cells[:, 1]].astype(np.int64)
        rows.append(
            np.column_stack([np.full(len(cells), i, dtype=np.int64), cells, lv])
        )
    if not rows:
        raise ValueError("no labeled cells in any map")
    entries = np.concatenate(rows, axis=0)
    rng = np.random.default_rng([seed, 0x5B11])
    order = rng.permutation(len(kept))
    n_test = max(1, round(len(kept) * test_fraction)) if len(kept) > 1 else 0
    shuffled = [kept[i] for i in order]
    test_ids = sorted(shuffled[:n_test])
    train_ids = sorted(shuffled[n_test:])
    return Dataset(
        maps=list(maps),
        labels=list(labels),
        distances=list(distances),
        train_ids=train_ids,
        test_ids=test_ids,
        entries=entries,
        dropped_maps=dropped,
    )
