"""Imitation-learning trainer: seeded epochs of SGD over map batches.

A batch is a set of maps. Each map's input planes pass through the network
once and the head is evaluated at all of that map's selected positions, so
an epoch still touches every training sample exactly once while keeping the
per-sample cost of the shared trunk amortized.

Every epoch draws its shuffle from a generator seeded by (seed, epoch), so
resuming from a checkpoint at epoch e reproduces the exact remaining epochs.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .dataio import StoredDataset, input_channels
from .models import Model
from .netcore import backward, loss_value, sgd_step, xent_l2_loss


class TrainingAbort(RuntimeError):
    """Raised when the loss turns non-finite."""


@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 100
    batch_size: int = 8           # maps per SGD step
    learning_rate: float = 0.1
    l2_lambda: float = 1e-4
    seed: int = 0
    l2_mode: str = "squared"
    samples_per_map: int = 0      # 0 = every labeled cell

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.l2_mode not in ("squared", "norm"):
            raise ValueError(f"bad l2_mode {self.l2_mode!r}")


@dataclass
class EpochReport:
    epoch: int
    loss: float
    accuracy: float       # strict: argmax equals the stored tie-broken label
    seconds: float
    grad_norm: float

    def log_line(self) -> str:
        return (f"{self.epoch}\t{self.loss:.6f}\t{self.accuracy:.6f}"
                f"\t{self.seconds:.3f}\t{self.grad_norm:.6f}")


LOG_HEADER = "epoch\tloss\tacc\tseconds\tgrad_norm"


@dataclass
class TrainData:
    """Materialized training tensors: one input stack plus position lists."""

    inputs: np.ndarray            # (M, C, H, W) float32
    positions: list[np.ndarray]   # per map: (n_i, 3) rows (row, col, label)

    @property
    def n_maps(self) -> int:
        return len(self.positions)

    @property
    def n_samples(self) -> int:
        return sum(len(p) for p in self.positions)


def prepare_train_data(stored: StoredDataset, ids: list[int],
                       samples_per_map: int = 0, seed: int = 0) -> TrainData:
    """Stack input planes and collect (row, col, label) lists per map.

    samples_per_map > 0 subsamples that many labeled cells per map without
    replacement, seeded per map id.
    """
    inputs = []
    positions = []
    for mid in ids:
        rec = stored.records[mid]
        cells = rec.labels.labeled_cells()
        if len(cells) == 0:
            continue
        if samples_per_map and samples_per_map < len(cells):
            rng = np.random.default_rng([seed, 0x5A3B, mid])
            cells = cells[rng.choice(len(cells), samples_per_map, replace=False)]
        labs = rec.labels.label[cells[:, 0], cells[:, 1]].astype(np.int64)
        positions.append(np.column_stack([cells, labs]).astype(np.int64))
        inputs.append(input_channels(rec))
    if not inputs:
        raise ValueError("no labeled samples in the selected maps")
    return TrainData(inputs=np.stack(inputs), positions=positions)


def batch_arrays(data: TrainData, map_order: np.ndarray):
    """Concatenate position lists for the given maps into flat index arrays."""
    mi, rows, cols, labels = [], [], [], []
    for j, m in enumerate(map_order):
        pos = data.positions[m]
        mi.append(np.full(len(pos), j, dtype=np.int64))
        rows.append(pos[:, 0])
        cols.append(pos[:, 1])
        labels.append(pos[:, 2])
    return (np.concatenate(mi), np.concatenate(rows), np.concatenate(cols),
            np.concatenate(labels))


def loss_batch(model: Model, inputs: np.ndarray, map_idx, rows, cols, labels,
               hyper: Hyperparams):
    """Forward + loss + backward for one batch; returns (loss, n_correct).

    The returned loss is the 64-bit loss_value, so epoch aggregates do not
    wobble with the shuffle grouping; gradients come from the graph node.
    """
    model.params.zero_grad()
    probs = model.forward_positions(inputs, map_idx, rows, cols)
    loss = xent_l2_loss(probs, labels, model.params, hyper.l2_lambda,
                        hyper.l2_mode)
    backward(loss)
    pred = probs.data.argmax(axis=1)
    reported = loss_value(probs.data, labels, model.params, hyper.l2_lambda,
                          hyper.l2_mode)
    return reported, int((pred == np.asarray(labels)).sum())


def train(model: Model, data: TrainData, hyper: Hyperparams,
          out_dir: str | None = None, start_epoch: int = 0,
          checkpoint_every: int = 0,
          on_epoch=None) -> list[EpochReport]:
    """Run SGD epochs; optionally write logs and checkpoints under out_dir.

    Raises TrainingAbort with a diagnostic snapshot if the loss goes
    non-finite. Deterministic for a fixed (seed, start_epoch, data).
    """
    reports: list[EpochReport] = []
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.tsv")
        if start_epoch == 0 or not os.path.exists(log_path):
            with open(log_path, "w", encoding="utf-8") as f:
                f.write(LOG_HEADER + "\n")
    n_samples = data.n_samples
    for epoch in range(start_epoch, hyper.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([hyper.seed, 0x3C0, epoch])
        order = rng.permutation(data.n_maps)
        total_loss = 0.0
        total_correct = 0
        total_seen = 0
        norms = []
        for lo in range(0, len(order), hyper.batch_size):
            sel = order[lo : lo + hyper.batch_size]
            mi, rows, cols, labels = batch_arrays(data, sel)
            bl, bc = loss_batch(model, data.inputs[sel], mi, rows, cols,
                                labels, hyper)
            if not np.isfinite(bl):
                raise TrainingAbort(
                    f"non-finite loss at epoch {epoch}, batch {lo // hyper.batch_size}: "
                    f"loss={bl}, grad_norm={model.params.grad_norm():.3e}"
                )
            norms.append(model.params.grad_norm())
            sgd_step(model.params, hyper.learning_rate)
            total_loss += bl * len(labels)
            total_correct += bc
            total_seen += len(labels)
        assert total_seen == n_samples
        report = EpochReport(
            epoch=epoch,
            loss=total_loss / n_samples,
            accuracy=total_correct / n_samples,
            seconds=time.perf_counter() - t0,
            grad_norm=float(np.mean(norms)),
        )
        reports.append(report)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as f:
                f.write(report.log_line() + "\n")
        if out_dir is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            model.save(os.path.join(out_dir, f"epoch_{epoch + 1:04d}.ckpt"))
        if on_epoch is not None:
            on_epoch(report)
    if out_dir is not None:
        model.save(os.path.join(out_dir, "model.ckpt"))
    return reports


def write_run_config(out_dir: str, payload: dict) -> None:
    """Echo the resolved run configuration to run.json."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def hyper_to_dict(h: Hyperparams) -> dict:
    return asdict(h)
