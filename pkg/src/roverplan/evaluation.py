"""Planning metrics: action accuracy, rollout success rate, image exports.

Accuracy has two modes. strict counts a prediction only when it equals the
stored tie-broken label; set counts any action that is provably co-optimal
(member of the cell's optimal set). set is the headline number since a
co-optimal prediction is not a planning mistake; strict is reported too.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import MapRecord, StoredDataset
from .gridworld import UNLABELED
from .planner import adjudicate, as_policy, rollout
from .pnm import write_pgm, write_ppm

log = logging.getLogger(__name__)

EVAL_BATCH_MAPS = 64


def worker_count() -> int:
    try:
        n = int(os.environ.get("ROVER_THREADS", "1"))
    except ValueError:
        return 1
    return max(1, n)


def _scores_for(policy, records: list[MapRecord], chunk: int = EVAL_BATCH_MAPS):
    """Yield (record, scores) pairs, batching when the policy supports it."""
    if hasattr(policy, "scores_batch"):
        for lo in range(0, len(records), chunk):
            part = records[lo : lo + chunk]
            scored = policy.scores_batch(part)
            for rec, sc in zip(part, scored):
                yield rec, sc
    else:
        for rec in records:
            yield rec, policy.scores(rec)


def action_accuracy(policy, stored: StoredDataset, ids: list[int],
                    mode: str = "set") -> float:
    """Fraction of labeled cells whose argmax prediction is optimal."""
    if mode not in ("strict", "set"):
        raise ValueError(f"mode must be 'strict' or 'set', got {mode!r}")
    if not ids:
        raise ValueError("empty evaluation split")
    policy = as_policy(policy)
    records = [stored.records[i] for i in ids]
    hits = 0
    total = 0
    for rec, scores in _scores_for(policy, records):
        pred = scores.argmax(axis=0)
        labeled = rec.labels.label != UNLABELED
        total += int(labeled.sum())
        if mode == "strict":
            hits += int((pred[labeled] == rec.labels.label[labeled]).sum())
        else:
            bit = (rec.labels.optimal_set[labeled] >> pred[labeled]) & 1
            hits += int(bit.sum())
    return hits / total


def sample_starts(record: MapRecord, count: int, seed: int, map_id: int) -> np.ndarray:
    """Seeded draw of labeled start cells, without replacement."""
    cells = record.labels.labeled_cells()
    if len(cells) <= count:
        return cells
    rng = np.random.default_rng([seed, 0x57A7, map_id])
    return cells[rng.choice(len(cells), count, replace=False)]


def success_rate(policy, stored: StoredDataset, ids: list[int],
                 starts_per_map: int = 16, seed: int = 0) -> float:
    """Fraction of rollouts that reach the goal, over sampled starts."""
    if not ids:
        raise ValueError("empty evaluation split")
    policy = as_policy(policy)
    records = [stored.records[i] for i in ids]
    scores_by_pos = [s for _, s in _scores_for(policy, records)]

    def eval_map(i):
        rec = records[i]
        qmap = scores_by_pos[i]
        starts = sample_starts(rec, starts_per_map, seed, ids[i])
        good = sum(
            adjudicate(rollout(qmap, rec, (int(r), int(c)))) for r, c in starts
        )
        return good, len(starts)
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(eval_map, range(len(ids))))
    else:
        results = [eval_map(i) for i in range(len(ids))]
    good = sum(g for g, _ in results)
    total = sum(n for _, n in results)
    return good / total


@dataclass
class MetricsReport:
    arch: str
    seed: int
    acc_train_set: float
    acc_train_strict: float
    acc_test_set: float
    acc_test_strict: float
    sr_train: float
    sr_test: float
    epoch_seconds: list[float] = field(default_factory=list)

    def timing_summary(self) -> dict:
        if not self.epoch_seconds:
            return {"epochs": 0}
        arr = np.asarray(self.epoch_seconds)
        return {
            "epochs": int(arr.size),
            "median": float(np.median(arr)),
            "mean": float(arr.mean()),
            "min": float(arr.min()),
            "max": float(arr.max()),
        }

    def to_dict(self) -> dict:
        body = asdict(self)
        body["epoch_seconds"] = [round(s, 6) for s in self.epoch_seconds]
        body["timing"] = self.timing_summary()
        return body

    def tsv_lines(self) -> list[str]:
        rows = [
            ("acc_train_set", self.acc_train_set),
            ("acc_train_strict", self.acc_train_strict),
            ("acc_test_set", self.acc_test_set),
            ("acc_test_strict", self.acc_test_strict),
            ("sr_train", self.sr_train),
            ("sr_test", self.sr_test),
        ]
        return [f"{self.arch}\t{self.seed}\t{k}\t{v:.6f}" for k, v in rows]


def evaluate(policy, stored: StoredDataset, arch: str, seed: int = 0,
             starts_per_map: int = 16,
             epoch_seconds: list[float] | None = None) -> MetricsReport:
    """Full metric sweep over both splits."""
    return MetricsReport(
        arch=arch,
        seed=seed,
        acc_train_set=action_accuracy(policy, stored, stored.train_ids, "set"),
        acc_train_strict=action_accuracy(policy, stored, stored.train_ids, "strict"),
        acc_test_set=action_accuracy(policy, stored, stored.test_ids, "set"),
        acc_test_strict=action_accuracy(policy, stored, stored.test_ids, "strict"),
        sr_train=success_rate(policy, stored, stored.train_ids,
                              starts_per_map, seed),
        sr_test=success_rate(policy, stored, stored.test_ids,
                             starts_per_map, seed),
        epoch_seconds=list(epoch_seconds or []),
    )


def value_map_image(scores: np.ndarray, mark_obstacles: np.ndarray | None = None):
    """Normalize per-cell values max_a scores to a grayscale image.

    Returns (uint8 image, degenerate flag). A flat value field maps to
    all-128 with a warning instead of dividing by zero.
    """
    v = scores.max(axis=0).astype(np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-12:
        log.warning("value map is constant (%.6g); writing all-128 image", hi)
        img = np.full(v.shape, 128, dtype=np.uint8)
        degenerate = True
    else:
        img = np.round((v - lo) / (hi - lo) * 255.0).astype(np.uint8)
        degenerate = False
    if mark_obstacles is not None:
        img = img.copy()
        img[mark_obstacles.astype(bool)] = 0
    return img, degenerate


def export_value_map(policy, record: MapRecord, path,
                     mark_obstacles: bool = False) -> bool:
    """Write the estimated value surface as a P5 graymap; True if flat."""
    policy = as_policy(policy)
    scores = policy.scores(record)
    img, degenerate = value_map_image(
        scores, record.gmap.cells if mark_obstacles else None
    )
    write_pgm(path, img)
    return degenerate


def base_image(record: MapRecord) -> np.ndarray:
    """Grayscale backdrop: rendered scene if present, else the occupancy."""
    if record.image is not None:
        return np.round(np.asarray(record.image, np.float64) * 255).astype(np.uint8)
    return np.where(record.gmap.cells == 0, 255, 0).astype(np.uint8)


def trajectory_overlay(record: MapRecord, trajectories) -> np.ndarray:
    """RGB overlay: red path interiors, green starts, blue final cells."""
    gray = base_image(record)
    rgb = np.stack([gray, gray, gray], axis=-1)
    h, w = gray.shape
    for traj in trajectories:
        for r, c in traj.cells:
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError(f"trajectory cell {(r, c)} outside {h}x{w} image")
        for r, c in traj.cells[1:-1]:
            rgb[r, c] = (255, 0, 0)
        sr, sc = traj.cells[0]
        rgb[sr, sc] = (0, 255, 0)
        if len(traj.cells) > 1:
            er, ec = traj.cells[-1]
            rgb[er, ec] = (0, 0, 255)
    return rgb


def export_trajectory_overlay(record: MapRecord, trajectories, path) -> None:
    write_ppm(path, trajectory_overlay(record, trajectories))
