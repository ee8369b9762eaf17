"""The four planner networks and the tabular value-iteration oracle.

All architectures map input planes (occupancy or image channels plus a goal
one-hot) to per-position softmax scores over the 8 moves:

  dbcnn   shared reprocessing stage, then a global branch (convs, residual
          blocks, pools, two FC layers -> feature vector f1) and a local
          branch (convs plus residual blocks -> per-cell feature map); the
          head scores concat(f1, local feature at the rover's cell).
  resnet  the local branch alone, head on the per-cell feature.
  dcnn    resnet with each residual block swapped for one plain conv+relu.
  vin     a learned reward map refined by K shared-weight conv/max steps at
          full resolution, head on the per-cell refined vector.

Conventions: relu follows every conv and the first FC; the feature
projections (the second FC of the global branch, the last conv of the local
branch, the 1x1 reward conv) stay linear. Rover position enters by indexing
the local feature map at the downsampled cell (row // l1, col // l2).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import netcore as nc
from .gridworld import ACTION_DELTAS, GridMap, MdpSpec, N_ACTIONS
from .netcore import ParamStore, Tensor

ARCHS = ("dbcnn", "vin", "resnet", "dcnn")

REPROCESS_CH = (6, 12)
BRANCH_CH = 20
FC1_NODES = 192
VIN_HIDDEN = 20
VIN_Q_CH = 10
# the scoring layer starts small so the net opens at near-uniform
# predictions; full-size head init saturates the softmax within the
# first few SGD steps at usable learning rates
HEAD_INIT_SCALE = 0.1


class BuildError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; its canonical JSON fixes the fingerprint."""

    arch: str
    height: int
    width: int
    channels: int
    feature_width: int = 10
    downsample: tuple[int, int] = (4, 4)
    vin_iters: int = 80
    coord_augment: bool = False

    def __post_init__(self):
        object.__setattr__(self, "downsample", tuple(int(v) for v in self.downsample))

    def validate(self):
        if self.arch not in ARCHS:
            raise BuildError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.height < 4 or self.width < 4:
            raise BuildError("input must be at least 4x4")
        if self.channels < 1:
            raise BuildError("need at least one input channel")
        if self.feature_width < 1:
            raise BuildError("feature_width must be positive")
        l1, l2 = self.downsample
        if l1 not in (1, 2, 4) or l2 not in (1, 2, 4):
            raise BuildError(f"downsample factors must be 1, 2 or 4, got {self.downsample}")
        if self.height % l1 or self.width % l2:
            raise BuildError(
                f"input {self.height}x{self.width} not divisible by downsample {self.downsample}"
            )
        if self.arch == "vin" and self.vin_iters < 1:
            raise BuildError("vin needs at least one iteration")

    def canonical_json(self, layers) -> str:
        body = {
            "arch": self.arch,
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "feature_width": self.feature_width,
            "downsample": list(self.downsample),
            "vin_iters": self.vin_iters if self.arch == "vin" else None,
            "coord_augment": self.coord_augment,
            "layers": layers,
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":"))


def _pool_strides(factor: int) -> tuple[int, int]:
    """Split one downsample factor across the two reprocessing pools."""
    return {1: (1, 1), 2: (2, 1), 4: (2, 2)}[factor]


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class Model:
    """A built network: spec, parameters, and the forward passes."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        spec.validate()
        self.spec = spec
        self.params = ParamStore()
        self.layers: list[dict] = []
        self.forward_count = 0
        self._rng = np.random.default_rng([seed, ARCHS.index(spec.arch)])
        self._build()
        del self._rng

    # ---- construction -------------------------------------------------

    def _conv_param(self, name: str, out_ch: int, in_ch: int, k: int,
                    stride: int = 1):
        fan_in = in_ch * k * k
        self.params.add(f"{name}.w", nc.he_uniform(self._rng, (out_ch, in_ch, k, k), fan_in))
        self.params.add(f"{name}.b", np.zeros(out_ch, dtype=nc.default_dtype()))
        self.layers.append({"name": name, "kind": "conv",
                            "kernel": [out_ch, in_ch, k, k], "stride": stride,
                            "padding": "same"})

    def _fc_param(self, name: str, n_in: int, n_out: int,
                  init_scale: float = 1.0):
        w = nc.he_uniform(self._rng, (n_in, n_out), n_in)
        if init_scale != 1.0:
            w *= nc.default_dtype()(init_scale)
        self.params.add(f"{name}.w", w)
        self.params.add(f"{name}.b", np.zeros(n_out, dtype=nc.default_dtype()))
        self.layers.append({"name": name, "kind": "fullyconnected",
                            "nodes": [n_in, n_out]})

    def _res_param(self, name: str, ch: int):
        fan_in = ch * 9
        self.params.add(f"{name}.c1.w", nc.he_uniform(self._rng, (ch, ch, 3, 3), fan_in))
        self.params.add(f"{name}.c1.b", np.zeros(ch, dtype=nc.default_dtype()))
        # second leg starts at zero so the block begins as identity;
        # otherwise each skip connection adds a full unit of variance and
        # four stacked blocks push the head logits into saturation
        self.params.add(f"{name}.c2.w", np.zeros((ch, ch, 3, 3), dtype=nc.default_dtype()))
        self.params.add(f"{name}.c2.b", np.zeros(ch, dtype=nc.default_dtype()))
        self.layers.append({"name": name, "kind": "residual",
                            "kernel": [ch, ch, 3, 3]})

    def _pool_layer(self, name: str, stride):
        self.layers.append({"name": name, "kind": "maxpool", "kernel": [3, 3],
                            "stride": list(stride) if isinstance(stride, tuple) else stride,
                            "padding": "same"})

    def _build(self):
        s = self.spec
        if s.arch == "vin":
            self._conv_param("reward.c1", VIN_HIDDEN, s.channels, 3)
            self._conv_param("reward.c2", 1, VIN_HIDDEN, 1)
            self._conv_param("value.q", VIN_Q_CH, 2, 3)
            self.layers.append({"name": "value.loop", "kind": "recurrence",
                                "iterations": s.vin_iters})
            self._fc_param("head.fc", VIN_Q_CH, N_ACTIONS,
                           init_scale=HEAD_INIT_SCALE)
            self.layers.append({"name": "head.softmax", "kind": "softmax"})
            self._finish_fingerprint()
            return

        l1, l2 = s.downsample
        s1h, s2h = _pool_strides(l1)
        s1w, s2w = _pool_strides(l2)
        self._conv_param("conv00", REPROCESS_CH[0], s.channels, 5)
        self._pool_layer("pool00", (s1h, s1w))
        c01 = REPROCESS_CH[1]
        fan_in = REPROCESS_CH[0] * 16
        self.params.add("conv01.w", nc.he_uniform(self._rng, (c01, REPROCESS_CH[0], 4, 4), fan_in))
        self.params.add("conv01.b", np.zeros(c01, dtype=nc.default_dtype()))
        self.layers.append({"name": "conv01", "kind": "conv",
                            "kernel": [c01, REPROCESS_CH[0], 4, 4], "stride": 1,
                            "padding": "same"})
        self._pool_layer("pool01", (s2h, s2w))
        self._stage_strides = ((s1h, s1w), (s2h, s2w))
        hp = _ceil_div(_ceil_div(s.height, s1h), s2h)
        wp = _ceil_div(_ceil_div(s.width, s1w), s2w)
        self.grid_shape = (hp, wp)

        d = s.feature_width
        if s.arch == "dbcnn":
            self._conv_param("b1.conv10", BRANCH_CH, c01, 5)
            self._pool_layer("b1.pool10", 2)
            self._res_param("b1.res11", BRANCH_CH)
            self._pool_layer("b1.pool11", 2)
            self._res_param("b1.res12", BRANCH_CH)
            self._pool_layer("b1.pool12", 1)
            self._res_param("b1.res13", BRANCH_CH)
            self._pool_layer("b1.pool13", 1)
            fh = _ceil_div(_ceil_div(hp, 2), 2)
            fw = _ceil_div(_ceil_div(wp, 2), 2)
            self._fc_param("b1.fc1", BRANCH_CH * fh * fw, FC1_NODES)
            self._fc_param("b1.fc2", FC1_NODES, d)

        self._conv_param("b2.conv20", BRANCH_CH, c01, 5)
        for i in range(21, 25):
            if s.arch == "dcnn":
                self._conv_param(f"b2.conv_r{i}", BRANCH_CH, BRANCH_CH, 3)
            else:
                self._res_param(f"b2.res{i}", BRANCH_CH)
        self._conv_param("b2.conv21", d, BRANCH_CH, 3)

        head_in = d * (2 if s.arch == "dbcnn" else 1)
        if s.coord_augment:
            head_in += 2
        self._fc_param("head.fc3", head_in, N_ACTIONS,
                       init_scale=HEAD_INIT_SCALE)
        self.layers.append({"name": "head.softmax", "kind": "softmax"})
        self._finish_fingerprint()

    def _finish_fingerprint(self):
        self.arch_json = self.spec.canonical_json(self.layers)
        self.fingerprint = nc.arch_fingerprint(self.arch_json)

    # ---- forward passes ------------------------------------------------

    def _conv(self, x, name, stride=1):
        return nc.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"],
                         stride, "same", name=name)

    def _res(self, x, name):
        y = nc.relu(self._conv(x, f"{name}.c1"))
        y = self._conv(y, f"{name}.c2")
        return nc.relu(nc.add(x, y))

    def _fc(self, x, name):
        return nc.linear(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def _check_input(self, xs: np.ndarray):
        s = self.spec
        if xs.ndim != 4 or xs.shape[1:] != (s.channels, s.height, s.width):
            raise nc.ShapeError(
                f"model expects (*, {s.channels}, {s.height}, {s.width}) input, "
                f"got {xs.shape}"
            )

    def _features(self, x: Tensor):
        """Run trunk and branches once; returns (f1 or None, local map)."""
        s = self.spec
        if s.arch == "vin":
            r = nc.relu(self._conv(x, "reward.c1"))
            rbar = self._conv(r, "reward.c2")
            v = Tensor(np.zeros_like(rbar.data))
            for _ in range(s.vin_iters):
                q = self._conv(nc.concat([rbar, v], axis=1), "value.q")
                v = nc.channel_max(q)
            return None, q

        t = nc.relu(self._conv(x, "conv00"))
        t = nc.maxpool2d(t, 3, self._stage_strides[0], "same", name="pool00")
        t = nc.relu(self._conv(t, "conv01"))
        t = nc.maxpool2d(t, 3, self._stage_strides[1], "same", name="pool01")

        f1 = None
        if s.arch == "dbcnn":
            b = nc.relu(self._conv(t, "b1.conv10"))
            b = nc.maxpool2d(b, 3, 2, "same", name="b1.pool10")
            b = self._res(b, "b1.res11")
            b = nc.maxpool2d(b, 3, 2, "same", name="b1.pool11")
            b = self._res(b, "b1.res12")
            b = nc.maxpool2d(b, 3, 1, "same", name="b1.pool12")
            b = self._res(b, "b1.res13")
            b = nc.maxpool2d(b, 3, 1, "same", name="b1.pool13")
            b = nc.relu(self._fc(nc.flatten(b), "b1.fc1"))
            f1 = self._fc(b, "b1.fc2")

        t = nc.relu(self._conv(t, "b2.conv20"))
        for i in range(21, 25):
            if s.arch == "dcnn":
                t = nc.relu(self._conv(t, f"b2.conv_r{i}"))
            else:
                t = self._res(t, f"b2.res{i}")
        local = self._conv(t, "b2.conv21")
        return f1, local

    def _head(self, f1, local, map_idx, rows, cols) -> Tensor:
        """Score the 8 moves for each (map, row, col) position."""
        s = self.spec
        mi = np.asarray(map_idx, dtype=np.int64)
        r = np.asarray(rows, dtype=np.int64)
        c = np.asarray(cols, dtype=np.int64)
        if s.arch == "vin":
            feats = nc.gather_cells(local, mi, r, c)
            return nc.softmax(self._fc(feats, "head.fc"), axis=-1)
        l1, l2 = s.downsample
        cell = nc.gather_cells(local, mi, r // l1, c // l2)
        parts = []
        if f1 is not None:
            parts.append(nc.take_rows(f1, mi))
        parts.append(cell)
        if s.coord_augment:
            coords = np.stack([r / s.height, c / s.width], axis=1)
            parts.append(Tensor(coords))
        feats = parts[0] if len(parts) == 1 else nc.concat(parts, axis=1)
        return nc.softmax(self._fc(feats, "head.fc3"), axis=-1)

    def forward_positions(self, xs: np.ndarray, map_idx, rows, cols) -> Tensor:
        """Differentiable scores for selected positions across a map batch.

        xs: (B, C, H, W) input planes; one trunk/branch pass for the whole
        batch, head evaluated per position. Counts as one forward pass.
        """
        self._check_input(xs)
        self.forward_count += 1
        f1, local = self._features(Tensor(xs))
        return self._head(f1, local, map_idx, rows, cols)

    def forward_qmap_batch(self, xs: np.ndarray) -> np.ndarray:
        """Scores at every cell for a batch of maps, (B, 8, H, W)."""
        self._check_input(xs)
        self.forward_count += 1
        s = self.spec
        bsz = xs.shape[0]
        with nc.no_grad():
            f1, local = self._features(Tensor(xs))
            rr, cc = np.meshgrid(np.arange(s.height), np.arange(s.width), indexing="ij")
            r = np.tile(rr.ravel(), bsz)
            c = np.tile(cc.ravel(), bsz)
            mi = np.repeat(np.arange(bsz), s.height * s.width)
            probs = self._head(f1, local, mi, r, c)
        out = probs.data.reshape(bsz, s.height, s.width, N_ACTIONS)
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def forward_qmap(self, x: np.ndarray) -> np.ndarray:
        """Scores at every cell of one map, (8, H, W); one forward pass."""
        return self.forward_qmap_batch(np.asarray(x)[None])[0]

    def forward_single(self, x: np.ndarray, position: tuple[int, int]) -> np.ndarray:
        """Scores for one rover position on one map."""
        r, c = position
        s = self.spec
        if not (0 <= r < s.height and 0 <= c < s.width):
            raise ValueError(f"position {position} outside {s.height}x{s.width} grid")
        self._check_input(np.asarray(x)[None])
        self.forward_count += 1
        with nc.no_grad():
            f1, local = self._features(Tensor(np.asarray(x)[None]))
            probs = self._head(f1, local, [0], [r], [c])
        return probs.data[0].copy()

    def reset_forward_count(self):
        self.forward_count = 0

    # ---- persistence ---------------------------------------------------

    def save(self, path):
        nc.save_checkpoint(path, self.params, self.fingerprint)
        with open(_arch_sidecar(path), "w", encoding="utf-8") as f:
            f.write(self.arch_json)
            f.write("\n")

    def load_weights(self, path):
        _, arrays = nc.load_checkpoint(path, self.fingerprint)
        self.params.load_arrays(arrays)

    @classmethod
    def load(cls, path) -> "Model":
        side = _arch_sidecar(path)
        if not os.path.exists(side):
            raise FileNotFoundError(f"missing architecture sidecar {side}")
        with open(side, encoding="utf-8") as f:
            body = json.load(f)
        spec = ModelSpec(
            arch=body["arch"], height=body["height"], width=body["width"],
            channels=body["channels"], feature_width=body["feature_width"],
            downsample=tuple(body["downsample"]),
            vin_iters=body["vin_iters"] if body["vin_iters"] is not None else 80,
            coord_augment=body["coord_augment"],
        )
        model = build_model(spec)
        if model.arch_json != json.dumps(body, sort_keys=True, separators=(",", ":")):
            raise nc.FingerprintError(f"{side}: sidecar does not match rebuilt architecture")
        model.load_weights(path)
        return model


def _arch_sidecar(path) -> str:
    base, _ = os.path.splitext(str(path))
    return base + ".arch.json"


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    return Model(spec, seed=seed)


def build_dbcnn(spec: ModelSpec, seed: int = 0) -> Model:
    if spec.arch != "dbcnn":
        raise BuildError(f"spec.arch is {spec.arch!r}, wanted 'dbcnn'")
    return Model(spec, seed=seed)


def build_vin(spec: ModelSpec, seed: int = 0) -> Model:
    if spec.arch != "vin":
        raise BuildError(f"spec.arch is {spec.arch!r}, wanted 'vin'")
    return Model(spec, seed=seed)


def build_resnet(spec: ModelSpec, seed: int = 0) -> Model:
    if spec.arch != "resnet":
        raise BuildError(f"spec.arch is {spec.arch!r}, wanted 'resnet'")
    return Model(spec, seed=seed)


def build_dcnn(spec: ModelSpec, seed: int = 0) -> Model:
    if spec.arch != "dcnn":
        raise BuildError(f"spec.arch is {spec.arch!r}, wanted 'dcnn'")
    return Model(spec, seed=seed)


def default_downsample(height: int, width: int) -> tuple[int, int]:
    """Pick reprocessing factors proportionate to the map size.

    Keeps the planning grid around 16 cells per side: 64 -> 4, 32 -> 2,
    16 and below -> 1.
    """

    def factor(n):
        if n >= 64 and n % 4 == 0:
            return 4
        if n >= 32 and n % 2 == 0:
            return 2
        return 1

    return factor(height), factor(width)


# ---- tabular value iteration oracle -------------------------------------


def tabular_vi(gmap: GridMap, mdp: MdpSpec, iterations: int) -> np.ndarray:
    """Exact value iteration on the grid decision process (test oracle).

    V(s) <- max_a [ r(s, a) + gamma * V(next(s, a)) ]. Moves off-grid or
    into obstacles keep the rover in place at step cost. The goal is
    absorbing with value 0, the goal-entry reward lands on the move itself.
    Obstacle cells are left at 0; they are not states the rover occupies.
    """
    h, w = gmap.cells.shape
    free = gmap.cells == 0
    v = np.zeros((h, w), dtype=np.float64)
    g1, g2 = gmap.goal
    for _ in range(iterations):
        best = np.full((h, w), -np.inf)
        for a in range(N_ACTIONS):
            q = _q_for_action(gmap, mdp, v, a)
            best = np.maximum(best, q)
        best[~free] = 0.0
        best[g1, g2] = 0.0
        v = best
    return v


def _q_for_action(gmap: GridMap, mdp: MdpSpec, v: np.ndarray, a: int) -> np.ndarray:
    """One-step lookahead for one action over all cells."""
    h, w = gmap.cells.shape
    dr, dc = (int(x) for x in ACTION_DELTAS[a])
    nxt_v = np.full((h, w), np.nan)
    nxt_free = np.zeros((h, w), dtype=bool)
    rs = slice(max(0, -dr), min(h, h - dr))
    cs = slice(max(0, -dc), min(w, w - dc))
    rd = slice(max(0, dr), min(h, h + dr))
    cd = slice(max(0, dc), min(w, w + dc))
    nxt_v[rs, cs] = v[rd, cd]
    free = gmap.cells == 0
    nxt_free[rs, cs] = free[rd, cd]
    gr = np.zeros((h, w), dtype=bool)
    g1, g2 = gmap.goal
    # does action a, taken at cell (r, c), land on the goal
    src_r, src_c = g1 - dr, g2 - dc
    if 0 <= src_r < h and 0 <= src_c < w:
        gr[src_r, src_c] = True
    valid = nxt_free
    q = np.where(
        valid,
        np.where(gr, mdp.reward_goal, mdp.reward_step) + mdp.discount * np.where(valid, nxt_v, 0.0),
        mdp.reward_step + mdp.discount * v,  # bump: stay in place, pay the step
    )
    return q


def greedy_action_sets(gmap: GridMap, mdp: MdpSpec, v: np.ndarray) -> np.ndarray:
    """Bitmask of argmax actions per cell under one-step lookahead on v."""
    h, w = gmap.cells.shape
    qs = np.stack([_q_for_action(gmap, mdp, v, a) for a in range(N_ACTIONS)])
    best = qs.max(axis=0)
    mask = np.zeros((h, w), dtype=np.uint8)
    for a in range(N_ACTIONS):
        mask |= (np.abs(qs[a] - best) < 1e-9).astype(np.uint8) << a
    return mask
