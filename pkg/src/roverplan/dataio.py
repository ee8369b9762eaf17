"""On-disk dataset format: per-map binary records plus a JSON manifest.

Record layout (little endian throughout):

    magic      8 bytes, b"GWMAP01\\n" or b"GWMAP02\\n"
    H, W       two u32
    occupancy  H*W bytes, row-major, 0 free / 1 obstacle
    goal       two u32 (row, col)
    labels     H*W bytes, action ids 0..7, 255 unlabeled
    distances  H*W u16, steps to goal, 0xFFFF unreachable

GWMAP02 appends two H*W blocks of f32: the rendered image, then the edge
channel. The manifest is a file named `manifest` holding JSON: format and
package versions, counts, generation parameters, reward values, and the
train/test split as record id lists.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import __version__
from .gridworld import (
    ActionLabels,
    Dataset,
    DistanceField,
    GridMap,
    MdpSpec,
    optimal_actions,
)
from .terrain import TerrainScene

MAGIC_GRID = b"GWMAP01\n"
MAGIC_SCENE = b"GWMAP02\n"
MANIFEST_NAME = "manifest"


@dataclass(frozen=True)
class MapRecord:
    """One decoded record: map, expert labels, and optional image channels."""

    gmap: GridMap
    labels: ActionLabels
    distances: DistanceField
    image: np.ndarray | None = None
    edges: np.ndarray | None = None

    @property
    def n_channels(self) -> int:
        return 2 if self.image is None else 3


def write_map_record(path, gmap: GridMap, labels: ActionLabels,
                     distances: DistanceField,
                     image: np.ndarray | None = None,
                     edges: np.ndarray | None = None) -> None:
    h, w = gmap.cells.shape
    scene = image is not None
    if scene and edges is None:
        raise ValueError("scene records need both image and edges")
    parts = [
        MAGIC_SCENE if scene else MAGIC_GRID,
        struct.pack("<II", h, w),
        np.ascontiguousarray(gmap.cells, dtype=np.uint8).tobytes(),
        struct.pack("<II", gmap.goal[0], gmap.goal[1]),
        np.ascontiguousarray(labels.label, dtype=np.uint8).tobytes(),
        np.ascontiguousarray(distances.dist, dtype="<u2").tobytes(),
    ]
    if scene:
        parts.append(np.ascontiguousarray(image, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(edges, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_map_record(path) -> MapRecord:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise ValueError(f"{path}: truncated header")
    magic = blob[:8]
    if magic not in (MAGIC_GRID, MAGIC_SCENE):
        raise ValueError(f"{path}: bad magic {magic!r}")
    scene = magic == MAGIC_SCENE
    h, w = struct.unpack_from("<II", blob, 8)
    n = h * w
    need = 16 + n + 8 + n + 2 * n + (8 * n if scene else 0)
    if len(blob) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(blob)}")
    pos = 16
    cells = np.frombuffer(blob, dtype=np.uint8, count=n, offset=pos).reshape(h, w)
    pos += n
    g1, g2 = struct.unpack_from("<II", blob, pos)
    pos += 8
    label = np.frombuffer(blob, dtype=np.uint8, count=n, offset=pos).reshape(h, w)
    pos += n
    dist = np.frombuffer(blob, dtype="<u2", count=n, offset=pos).reshape(h, w)
    pos += 2 * n
    image = edges = None
    if scene:
        image = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(h, w)
        pos += 4 * n
        edges = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(h, w)
    gmap = GridMap(cells=cells.copy(), goal=(int(g1), int(g2)))
    dfield = DistanceField(dist=dist.astype(np.int32))
    labels = optimal_actions(gmap, dfield)
    if not np.array_equal(labels.label, label):
        raise ValueError(f"{path}: stored labels disagree with stored distances")
    return MapRecord(
        gmap=gmap,
        labels=labels,
        distances=dfield,
        image=None if image is None else image.copy(),
        edges=None if edges is None else edges.copy(),
    )


def record_name(index: int) -> str:
    return f"map_{index:05d}.gwm"


def write_dataset(out_dir, dataset: Dataset, meta: dict,
                  scenes: list[TerrainScene] | None = None) -> None:
    """Write every map record plus the manifest under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    for i, (gmap, labels, dfield) in enumerate(
        zip(dataset.maps, dataset.labels, dataset.distances)
    ):
        image = edges = None
        if scenes is not None:
            image, edges = scenes[i].image, scenes[i].edges
        write_map_record(
            os.path.join(out_dir, record_name(i)), gmap, labels, dfield,
            image=image, edges=edges,
        )
    mdp = MdpSpec()
    manifest = {
        "record_format": "GWMAP02" if scenes is not None else "GWMAP01",
        "package_version": __version__,
        "count": len(dataset.maps),
        "train_ids": [int(i) for i in dataset.train_ids],
        "test_ids": [int(i) for i in dataset.test_ids],
        "dropped_maps": dataset.dropped_maps,
        "reward_goal": mdp.reward_goal,
        "reward_step": mdp.reward_step,
        "discount": mdp.discount,
    }
    manifest.update(meta)
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class StoredDataset:
    """Dataset read back from disk."""

    records: list[MapRecord]
    manifest: dict

    @property
    def train_ids(self) -> list[int]:
        return list(self.manifest["train_ids"])

    @property
    def test_ids(self) -> list[int]:
        return list(self.manifest["test_ids"])

    @property
    def n_channels(self) -> int:
        return self.records[0].n_channels

    @property
    def shape(self) -> tuple[int, int]:
        return self.records[0].gmap.cells.shape


def load_dataset(data_dir) -> StoredDataset:
    mpath = os.path.join(data_dir, MANIFEST_NAME)
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"no manifest under {data_dir}")
    with open(mpath, encoding="utf-8") as f:
        manifest = json.load(f)
    records = [
        read_map_record(os.path.join(data_dir, record_name(i)))
        for i in range(manifest["count"])
    ]
    return StoredDataset(records=records, manifest=manifest)


def input_channels(record: MapRecord) -> np.ndarray:
    """Stack the network input planes for one record, shape (C, H, W).

    Grid records feed 2 channels (occupancy, goal one-hot); scene records
    feed 3 (image, edges, goal one-hot).
    """
    h, w = record.gmap.cells.shape
    goal_plane = np.zeros((h, w), dtype=np.float32)
    goal_plane[record.gmap.goal] = 1.0
    if record.image is None:
        occ = record.gmap.cells.astype(np.float32)
        return np.stack([occ, goal_plane])
    return np.stack([
        np.asarray(record.image, dtype=np.float32),
        np.asarray(record.edges, dtype=np.float32),
        goal_plane,
    ])
