"""Command line front end: gen, train, eval, plan, viz.

Every subcommand accepts --config pointing at a JSON file whose keys mirror
the long flag names; explicit flags win over the file. Exit codes: 0 on
success, 2 for usage problems, 3 when map generation gives up, 4 when
training aborts on a non-finite loss, 5 on a checkpoint fingerprint
mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .dataio import load_dataset, write_dataset
from .evaluation import evaluate, sample_starts, value_map_image
from .gridworld import GenerationError, build_dataset, generate_map
from .models import ARCHS, BuildError, Model, ModelSpec, default_downsample
from .netcore import FingerprintError
from .planner import ConstantPolicy, OraclePolicy, as_policy, plan_multi, rollout
from .pnm import write_pgm
from .terrain import render_crater_scene
from .training import (
    LOG_HEADER,
    Hyperparams,
    TrainingAbort,
    prepare_train_data,
    train,
    write_run_config,
)

log = logging.getLogger(__name__)

STUB_ARCHS = ("oracle", "constant")

# expected obstacle disk area for the default radius range, used to turn
# an obstacle density into a crater count
MEAN_CRATER_AREA = 100.0

EXIT_GENERATION = 3
EXIT_NUMERIC = 4
EXIT_FINGERPRINT = 5


def _load_config(path, parser: argparse.ArgumentParser) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            body = json.load(f)
    except FileNotFoundError:
        parser.error(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        parser.error(f"config file {path} is not valid JSON: {e}")
    if not isinstance(body, dict):
        parser.error(f"config file {path} must hold a JSON object")
    return body


def _setting(args, cfg: dict, dest: str, default=None, key: str | None = None):
    """Flag value if given, else config entry, else the built-in default."""
    value = getattr(args, dest, None)
    if value is not None:
        return value
    return cfg.get(key or dest, default)


def _require(parser, name: str, value):
    if value is None:
        parser.error(f"the --{name} flag is required")
    return value


def _parse_downsample(text, height: int, width: int) -> tuple[int, int]:
    if text is None or text == "auto":
        return default_downsample(height, width)
    if isinstance(text, (list, tuple)):
        parts = [int(v) for v in text]
    else:
        parts = [int(v) for v in str(text).split(",")]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"downsample wants one or two factors, got {text!r}")
    return (parts[0], parts[1])


def _resolve_policy(arch, model_path, parser):
    """Return (policy, model-or-None, label) for eval/plan/viz."""
    if arch == "oracle":
        return OraclePolicy(), None, "oracle"
    if arch == "constant":
        return ConstantPolicy(), None, "constant"
    if model_path is None:
        parser.error("--model is required unless --arch names a stub policy")
    model = Model.load(model_path)
    if arch is not None and model.spec.arch != arch:
        parser.error(
            f"checkpoint holds a {model.spec.arch!r} model, not {arch!r}"
        )
    return model, model, model.spec.arch


class _CountingPolicy:
    """Wrapper that counts scoring passes for the verbose plan log."""

    def __init__(self, inner):
        self.inner = as_policy(inner)
        self.calls = 0

    def scores(self, record):
        self.calls += 1
        return self.inner.scores(record)


# ---- subcommands --------------------------------------------------------


def cmd_gen(args, parser) -> int:
    cfg = _load_config(args.config, parser)
    kind = _setting(args, cfg, "kind", "grid")
    count = int(_setting(args, cfg, "count", 100))
    size = int(_setting(args, cfg, "size", 16))
    density = float(_setting(args, cfg, "density", 0.2))
    seed = int(_setting(args, cfg, "seed", 0))
    out = _require(parser, "out", _setting(args, cfg, "out"))
    if kind not in ("grid", "crater"):
        parser.error(f"--kind must be grid or crater, got {kind!r}")
    if count < 1:
        parser.error("--count must be at least 1")
    if not 0.0 <= density <= 1.0:
        parser.error("--density must lie in [0, 1]")

    scenes = None
    if kind == "grid":
        maps = [generate_map(seed + i, size, size, density) for i in range(count)]
    else:
        craters = _setting(args, cfg, "craters")
        if craters is None:
            craters = max(1, round(density * size * size / MEAN_CRATER_AREA))
        scenes = [
            render_crater_scene(seed + i, size, size, int(craters))
            for i in range(count)
        ]
        maps = [s.mask for s in scenes]

    dataset = build_dataset(maps, seed)
    meta = {
        "kind": kind,
        "count": count,
        "size": size,
        "density": density,
        "seed": seed,
    }
    if kind == "crater":
        meta["craters"] = int(craters)
    write_dataset(out, dataset, meta, scenes=scenes)
    print(f"wrote {count} {kind} records under {out} "
          f"(train {len(dataset.train_ids)}, test {len(dataset.test_ids)})")
    return 0


def cmd_train(args, parser) -> int:
    cfg = _load_config(args.config, parser)
    data_dir = _require(parser, "data", _setting(args, cfg, "data"))
    out = _require(parser, "out", _setting(args, cfg, "out"))
    arch = _setting(args, cfg, "arch", "dbcnn")
    if arch not in ARCHS:
        parser.error(f"--arch must be one of {', '.join(ARCHS)}")
    epochs = int(_setting(args, cfg, "epochs", 100))
    lr = float(_setting(args, cfg, "lr", 0.1))
    lam = float(_setting(args, cfg, "lam", 1e-4, key="lambda"))
    batch = int(_setting(args, cfg, "batch", 8))
    seed = int(_setting(args, cfg, "seed", 0))
    samples_per_map = int(_setting(args, cfg, "samples_per_map", 0))
    vin_iters = int(_setting(args, cfg, "vin_iters", 80))
    checkpoint_every = int(_setting(args, cfg, "checkpoint_every", 0))
    l2_mode = _setting(args, cfg, "l2_mode", "squared")
    downsample_raw = _setting(args, cfg, "downsample", "auto")

    stored = load_dataset(data_dir)
    h, w = stored.shape
    try:
        downsample = _parse_downsample(downsample_raw, h, w)
        spec = ModelSpec(
            arch=arch, height=h, width=w, channels=stored.n_channels,
            downsample=downsample, vin_iters=vin_iters,
        )
        spec.validate()
        hyper = Hyperparams(
            epochs=epochs, batch_size=batch, learning_rate=lr, l2_lambda=lam,
            seed=seed, l2_mode=l2_mode, samples_per_map=samples_per_map,
        )
    except (ValueError, BuildError) as e:
        parser.error(str(e))

    model = Model(spec, seed=seed)
    data = prepare_train_data(stored, stored.train_ids, samples_per_map, seed)
    # keys mirror the flag names so the file feeds straight back to --config
    write_run_config(out, {
        "subcommand": "train",
        "arch": arch,
        "data": data_dir,
        "out": out,
        "epochs": epochs,
        "lr": lr,
        "lambda": lam,
        "batch": batch,
        "seed": seed,
        "samples_per_map": samples_per_map,
        "l2_mode": l2_mode,
        "downsample": list(downsample),
        "vin_iters": vin_iters,
        "checkpoint_every": checkpoint_every,
    })

    print(f"training {arch} on {data.n_maps} maps / {data.n_samples} samples "
          f"({h}x{w}, {stored.n_channels} channels, downsample {downsample})")
    print(LOG_HEADER)
    reports = train(
        model, data, hyper, out_dir=out, checkpoint_every=checkpoint_every,
        on_epoch=lambda r: print(r.log_line(), flush=True),
    )

    from .figures import training_curves

    training_curves(os.path.join(out, "train_log.tsv"),
                    os.path.join(out, "training_curves.png"),
                    title=f"{arch} seed {seed}")
    last = reports[-1]
    print(f"done: {len(reports)} epochs, final loss {last.loss:.6f}, "
          f"final train accuracy {last.accuracy:.6f}")
    return 0


def cmd_eval(args, parser) -> int:
    cfg = _load_config(args.config, parser)
    data_dir = _require(parser, "data", _setting(args, cfg, "data"))
    out = _require(parser, "out", _setting(args, cfg, "out"))
    arch = _setting(args, cfg, "arch")
    model_path = _setting(args, cfg, "model")
    seed = int(_setting(args, cfg, "seed", 0))
    starts_per_map = int(_setting(args, cfg, "starts_per_map", 16))

    stored = load_dataset(data_dir)
    policy, model, label = _resolve_policy(arch, model_path, parser)

    epoch_seconds = []
    if model_path is not None:
        log_path = os.path.join(os.path.dirname(model_path), "train_log.tsv")
        if os.path.exists(log_path):
            from .figures import read_log

            epoch_seconds = read_log(log_path)["seconds"].tolist()

    report = evaluate(policy, stored, arch=label, seed=seed,
                      starts_per_map=starts_per_map,
                      epoch_seconds=epoch_seconds)

    os.makedirs(out, exist_ok=True)
    body = report.to_dict()
    body["data"] = str(data_dir)
    body["model"] = None if model_path is None else str(model_path)
    with open(os.path.join(out, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(body, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out, "metrics.tsv"), "w", encoding="utf-8") as f:
        f.write("arch\tseed\tmetric\tvalue\n")
        for line in report.tsv_lines():
            f.write(line + "\n")

    from .figures import metrics_bars

    metrics_bars([report], os.path.join(out, "metrics.png"))
    for line in report.tsv_lines():
        print(line)
    return 0


def _read_starts(args, cfg, parser) -> list[tuple[int, int]]:
    starts: list[tuple[int, int]] = []
    raw = _setting(args, cfg, "start") or []
    if isinstance(raw, str):
        raw = [raw]
    for item in raw:
        if isinstance(item, (list, tuple)):
            r, c = item
        else:
            bits = str(item).replace(",", " ").split()
            if len(bits) != 2:
                parser.error(f"--start wants ROW,COL, got {item!r}")
            r, c = bits
        starts.append((int(r), int(c)))
    starts_file = _setting(args, cfg, "starts_file")
    if starts_file is not None:
        with open(starts_file, encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                bits = line.replace(",", " ").split()
                if len(bits) != 2:
                    parser.error(f"{starts_file}:{ln}: expected ROW COL")
                starts.append((int(bits[0]), int(bits[1])))
    if not starts:
        parser.error("no starts given; use --start or --starts-file")
    return starts


def cmd_plan(args, parser) -> int:
    cfg = _load_config(args.config, parser)
    data_dir = _require(parser, "data", _setting(args, cfg, "data"))
    out = _require(parser, "out", _setting(args, cfg, "out"))
    arch = _setting(args, cfg, "arch")
    model_path = _setting(args, cfg, "model")
    map_index = int(_setting(args, cfg, "map", 0))
    verbose = bool(_setting(args, cfg, "verbose", False))

    stored = load_dataset(data_dir)
    if not 0 <= map_index < len(stored.records):
        parser.error(f"--map {map_index} outside dataset of {len(stored.records)}")
    record = stored.records[map_index]
    starts = _read_starts(args, cfg, parser)
    policy, _, label = _resolve_policy(arch, model_path, parser)
    counting = _CountingPolicy(policy)
    try:
        trajectories = plan_multi(counting, record, starts)
    except ValueError as e:
        parser.error(str(e))

    os.makedirs(out, exist_ok=True)
    body = {
        "policy": label,
        "map": map_index,
        "goal": list(record.gmap.goal),
        "trajectories": [
            t.to_dict(map_id=map_index, goal=record.gmap.goal)
            for t in trajectories
        ],
    }
    path = os.path.join(out, "trajectories.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(body, f, indent=2, sort_keys=True)
        f.write("\n")

    reached = sum(t.safe for t in trajectories)
    print(f"planned {len(trajectories)} rollouts on map {map_index}: "
          f"{reached} reached the goal")
    if verbose:
        print(f"forward passes: {counting.calls}")
    for s, traj in zip(starts, trajectories):
        print(f"  start {s[0]},{s[1]}: {traj.outcome} in {traj.steps} steps")
    return 0


def cmd_viz(args, parser) -> int:
    cfg = _load_config(args.config, parser)
    data_dir = _require(parser, "data", _setting(args, cfg, "data"))
    out = _require(parser, "out", _setting(args, cfg, "out"))
    arch = _setting(args, cfg, "arch")
    model_path = _setting(args, cfg, "model")
    map_index = int(_setting(args, cfg, "map", 0))
    seed = int(_setting(args, cfg, "seed", 0))
    n_rollouts = int(_setting(args, cfg, "rollouts", 4))

    stored = load_dataset(data_dir)
    if not 0 <= map_index < len(stored.records):
        parser.error(f"--map {map_index} outside dataset of {len(stored.records)}")
    record = stored.records[map_index]
    policy, _, label = _resolve_policy(arch, model_path, parser)
    policy = as_policy(policy)

    os.makedirs(out, exist_ok=True)
    scores = policy.scores(record)
    img, degenerate = value_map_image(scores)
    write_pgm(os.path.join(out, "value_map.pgm"), img)

    starts = sample_starts(record, n_rollouts, seed, map_index)
    trajectories = [rollout(scores, record, (int(r), int(c))) for r, c in starts]

    from .evaluation import export_trajectory_overlay
    from .figures import trajectory_figure, value_heatmap

    export_trajectory_overlay(record, trajectories,
                              os.path.join(out, "overlay.ppm"))
    value_heatmap(scores, record, os.path.join(out, "value_heatmap.png"),
                  title=f"{label} value estimate, map {map_index}")
    trajectory_figure(record, trajectories,
                      os.path.join(out, "trajectories.png"),
                      title=f"{label} rollouts, map {map_index}")
    wrote = ["value_map.pgm", "overlay.ppm", "value_heatmap.png",
             "trajectories.png"]
    print(f"map {map_index}, policy {label}: wrote {', '.join(wrote)} under {out}")
    if degenerate:
        print("note: value surface was constant; the graymap is uniform")
    return 0


# ---- parser wiring ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roverplan",
        description="Grid navigation: dataset synthesis, imitation "
                    "training, evaluation, and planning.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of defaults for these flags")
        p.add_argument("--seed", type=int, help="base RNG seed (default 0)")
        p.add_argument("--out", help="output directory")

    p_gen = sub.add_parser("gen", help="synthesize a labeled map dataset")
    common(p_gen)
    p_gen.add_argument("--kind", choices=["grid", "crater"],
                       help="map family (default grid)")
    p_gen.add_argument("--count", type=int, help="number of maps (default 100)")
    p_gen.add_argument("--size", type=int, help="side length (default 16)")
    p_gen.add_argument("--density", type=float,
                       help="obstacle fraction in [0,1] (default 0.2)")
    p_gen.add_argument("--craters", type=int,
                       help="crater count override for --kind crater")
    p_gen.set_defaults(handler=cmd_gen)

    p_train = sub.add_parser("train", help="fit a model on a stored dataset")
    common(p_train)
    p_train.add_argument("--arch", choices=list(ARCHS),
                         help="architecture (default dbcnn)")
    p_train.add_argument("--data", help="dataset directory from gen")
    p_train.add_argument("--epochs", type=int, help="epoch count (default 100)")
    p_train.add_argument("--lr", type=float, help="SGD step size (default 0.1)")
    p_train.add_argument("--lambda", dest="lam", type=float,
                         help="L2 penalty weight (default 1e-4)")
    p_train.add_argument("--batch", type=int,
                         help="maps per SGD step (default 8)")
    p_train.add_argument("--samples-per-map", dest="samples_per_map", type=int,
                         help="labeled cells drawn per map (0 = all)")
    p_train.add_argument("--downsample",
                         help="reprocessing factors: auto, L, or L1,L2")
    p_train.add_argument("--vin-iters", dest="vin_iters", type=int,
                         help="value-iteration sweeps for --arch vin")
    p_train.add_argument("--l2-mode", dest="l2_mode",
                         choices=["squared", "norm"],
                         help="penalty form (default squared)")
    p_train.add_argument("--checkpoint-every", dest="checkpoint_every",
                         type=int, help="epochs between snapshots (0 = none)")
    p_train.set_defaults(handler=cmd_train)

    def policy_flags(p):
        p.add_argument("--arch", choices=list(ARCHS) + list(STUB_ARCHS),
                       help="checkpoint architecture, or a stub policy")
        p.add_argument("--model", help="checkpoint path from train")
        p.add_argument("--data", help="dataset directory from gen")

    p_eval = sub.add_parser("eval", help="score a policy on a dataset")
    common(p_eval)
    policy_flags(p_eval)
    p_eval.add_argument("--starts-per-map", dest="starts_per_map", type=int,
                        help="rollout starts sampled per map (default 16)")
    p_eval.set_defaults(handler=cmd_eval)

    p_plan = sub.add_parser("plan", help="roll out paths on one map")
    common(p_plan)
    policy_flags(p_plan)
    p_plan.add_argument("--map", type=int, help="record index (default 0)")
    p_plan.add_argument("--start", action="append",
                        help="ROW,COL start cell; repeatable")
    p_plan.add_argument("--starts-file",
                        dest="starts_file",
                        help="text file with one ROW COL pair per line")
    p_plan.add_argument("--verbose", action="store_const", const=True,
                        help="log the scoring-pass count")
    p_plan.set_defaults(handler=cmd_plan)

    p_viz = sub.add_parser("viz", help="render value maps and rollouts")
    common(p_viz)
    policy_flags(p_viz)
    p_viz.add_argument("--map", type=int, help="record index (default 0)")
    p_viz.add_argument("--rollouts", type=int,
                       help="rollouts to draw (default 4)")
    p_viz.set_defaults(handler=cmd_viz)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = os.environ.get("ROVER_THREADS")
    if threads:
        log.info("worker cap: ROVER_THREADS=%s", threads)
    try:
        return args.handler(args, parser)
    except GenerationError as e:
        print(f"generation failed: {e}", file=sys.stderr)
        return EXIT_GENERATION
    except TrainingAbort as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FingerprintError as e:
        print(f"checkpoint mismatch: {e}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except FileNotFoundError as e:
        parser.error(str(e))


if __name__ == "__main__":
    sys.exit(main())
