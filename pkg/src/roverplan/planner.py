"""Greedy rollout of a scored policy over a stored map.

The policy contract is one method, scores(record) -> (8, H, W), softmax or
not; rollout just follows per-cell argmax (ties to the lowest action id).
Since the policy is deterministic and the map static, revisiting any cell
proves an infinite loop, which terminates the walk early and is reported
separately from budget exhaustion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import MapRecord, input_channels
from .gridworld import ACTION_DELTAS, N_ACTIONS, UNLABELED
from .models import Model

REACHED = "REACHED"
COLLISION = "COLLISION"
OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
LOOP = "LOOP"
BUDGET_EXCEEDED = "BUDGET_EXCEEDED"

OUTCOMES = (REACHED, COLLISION, OUT_OF_BOUNDS, LOOP, BUDGET_EXCEEDED)


def step_budget(height: int, width: int) -> int:
    # generously above the Chebyshev diameter, still linear in map size
    return 4 * (height + width)


@dataclass
class Trajectory:
    cells: list[tuple[int, int]]
    actions: list[int]
    outcome: str

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def safe(self) -> bool:
        return self.outcome == REACHED

    def to_dict(self, map_id=None, goal=None) -> dict:
        body = {
            "outcome": self.outcome,
            "steps": self.steps,
            "start": list(self.cells[0]),
            "cells": [list(c) for c in self.cells],
            "actions": [int(a) for a in self.actions],
        }
        if map_id is not None:
            body["map_id"] = int(map_id)
        if goal is not None:
            body["goal"] = list(goal)
        return body


def adjudicate(traj: Trajectory) -> bool:
    """A path is safe when it reaches the goal without leaving free cells."""
    return traj.outcome == REACHED


class ModelPolicy:
    """Adapter: a trained (or untrained) network as a rollout policy."""

    def __init__(self, model: Model):
        self.model = model

    def scores(self, record: MapRecord) -> np.ndarray:
        return self.model.forward_qmap(input_channels(record))

    def scores_batch(self, records: list[MapRecord]) -> np.ndarray:
        xs = np.stack([input_channels(r) for r in records])
        return self.model.forward_qmap_batch(xs)


class OraclePolicy:
    """Expert labels replayed as a policy; exercises the rollout machinery
    with learning taken out of the loop."""

    def scores(self, record: MapRecord) -> np.ndarray:
        h, w = record.gmap.cells.shape
        out = np.full((N_ACTIONS, h, w), 1.0 / N_ACTIONS, dtype=np.float32)
        lab = record.labels.label
        rr, cc = np.nonzero(lab != UNLABELED)
        out[:, rr, cc] = 0.0
        out[lab[rr, cc], rr, cc] = 1.0
        return out

    def scores_batch(self, records):
        return np.stack([self.scores(r) for r in records])


class FixedActionPolicy:
    """Always answers the same move; a guaranteed-failure stub."""

    def __init__(self, action: int):
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action {action} out of range")
        self.action = action

    def scores(self, record: MapRecord) -> np.ndarray:
        h, w = record.gmap.cells.shape
        out = np.zeros((N_ACTIONS, h, w), dtype=np.float32)
        out[self.action] = 1.0
        return out

    def scores_batch(self, records):
        return np.stack([self.scores(r) for r in records])


class UniformRandomPolicy:
    """Fresh random scores per call, deterministic over a run."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._calls = 0

    def scores(self, record: MapRecord) -> np.ndarray:
        h, w = record.gmap.cells.shape
        rng = np.random.default_rng([self.seed, 0xD1CE, self._calls])
        self._calls += 1
        return rng.random((N_ACTIONS, h, w)).astype(np.float32)

    def scores_batch(self, records):
        return np.stack([self.scores(r) for r in records])


class ConstantPolicy:
    """Identical scores everywhere; degenerate on purpose."""

    def __init__(self, value: float = 0.125):
        self.value = float(value)

    def scores(self, record: MapRecord) -> np.ndarray:
        h, w = record.gmap.cells.shape
        return np.full((N_ACTIONS, h, w), self.value, dtype=np.float32)

    def scores_batch(self, records):
        return np.stack([self.scores(r) for r in records])


def as_policy(obj):
    if isinstance(obj, Model):
        return ModelPolicy(obj)
    if hasattr(obj, "scores"):
        return obj
    raise TypeError(f"cannot use {type(obj).__name__} as a policy")


def rollout(qmap: np.ndarray, record: MapRecord, start: tuple[int, int]) -> Trajectory:
    """Walk the argmax policy from start until a terminal event."""
    gmap = record.gmap
    h, w = gmap.cells.shape
    r, c = int(start[0]), int(start[1])
    if not (0 <= r < h and 0 <= c < w):
        raise ValueError(f"start {start} outside {h}x{w} grid")
    if gmap.cells[r, c]:
        raise ValueError(f"start {start} is an obstacle cell")
    cells = [(r, c)]
    actions: list[int] = []
    if (r, c) == gmap.goal:
        return Trajectory(cells=cells, actions=actions, outcome=REACHED)
    visited = {(r, c)}
    budget = step_budget(h, w)
    while len(actions) < budget:
        a = int(np.argmax(qmap[:, r, c]))
        nr = r + int(ACTION_DELTAS[a, 0])
        nc = c + int(ACTION_DELTAS[a, 1])
        if not (0 <= nr < h and 0 <= nc < w):
            return Trajectory(cells=cells, actions=actions, outcome=OUT_OF_BOUNDS)
        actions.append(a)
        cells.append((nr, nc))
        if gmap.cells[nr, nc]:
            return Trajectory(cells=cells, actions=actions, outcome=COLLISION)
        if (nr, nc) == gmap.goal:
            return Trajectory(cells=cells, actions=actions, outcome=REACHED)
        if (nr, nc) in visited:
            return Trajectory(cells=cells, actions=actions, outcome=LOOP)
        visited.add((nr, nc))
        r, c = nr, nc
    return Trajectory(cells=cells, actions=actions, outcome=BUDGET_EXCEEDED)


def plan(policy, record: MapRecord, start: tuple[int, int]) -> Trajectory:
    """Score the map once and roll out from one start."""
    policy = as_policy(policy)
    return rollout(policy.scores(record), record, start)


def plan_multi(policy, record: MapRecord, starts) -> list[Trajectory]:
    """Plan for all starts off a single scoring pass.

    All rovers share the map and goal, so the score table is computed once
    and every rollout is pure lookup.
    """
    policy = as_policy(policy)
    starts = list(starts)
    if not starts:
        return []
    qmap = policy.scores(record)
    return [rollout(qmap, record, s) for s in starts]
