"""Command line: generate, rasterize, train, predict, eval.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import datagen, metrics
from .checkpoint import CheckpointError
from .model import predict, read_predictions, write_predictions
from .raster import RasterPalette, export_batch, load_palette
from .scene import AgentType, Scene, SceneError, read_scene, scene_to_target_frame
from .train import (CONFIG_NAME, TrainConfig, TrainError, latest_checkpoint, load_params,
                    prepare_dataset, train)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
AGENT_TYPES = [t.value for t in AgentType]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _scenes(paths: Sequence[str]) -> Iterator[Scene]:
    """Scene files, dataset directories and manifest files, in the order given."""
    for p in map(Path, paths):
        if p.is_dir() or p.suffix == ".csv":
            yield from datagen.iter_dataset(p)
        else:
            yield read_scene(p)


def _palette(path: str | None) -> RasterPalette | None:
    return load_palette(path) if path else None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recoat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="synthesize a dataset of scenes plus a manifest")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--agent-type", choices=AGENT_TYPES, default="vehicle")

    r = sub.add_parser("rasterize", help="render scenes to PNG images in the target frame")
    r.add_argument("scenes", nargs="+", help="scene files, dataset directories or manifests")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--palette", help="palette JSON (name -> [r, g, b])")

    t = sub.add_parser("train", help="train one agent-type model")
    t.add_argument("--data", nargs="+", required=True, help="scene files, dataset directories or manifests")
    t.add_argument("--run-dir", required=True, help="checkpoints, log and config are written here")
    t.add_argument("--config", help="TrainConfig JSON; flags below override it")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float, help="initial learning rate")
    t.add_argument("--decay", type=float, help="learning-rate factor per epoch")
    t.add_argument("--seed", type=int)
    t.add_argument("--agent-type", choices=AGENT_TYPES)
    t.add_argument("--clip-norm", type=float, help="enable global gradient-norm clipping")
    t.add_argument("--palette", help="palette JSON for the rasters")
    t.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --run-dir")
    t.add_argument("--quiet", action="store_true")

    p = sub.add_parser("predict", help="write a prediction file for scenes")
    p.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    p.add_argument("--config", help="TrainConfig JSON (default: config.json next to the checkpoint)")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True, help="prediction JSONL file")
    p.add_argument("--palette")

    e = sub.add_parser("eval", help="score a prediction file against scene ground truth")
    e.add_argument("--predictions", required=True)
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--out", required=True, help="metrics CSV")
    e.add_argument("--miss-threshold", type=float, default=metrics.MISS_THRESHOLD)
    e.add_argument("--overlap-radius", type=float, default=metrics.OVERLAP_RADIUS)
    e.add_argument("--horizons", action="store_true", help="add per-horizon rows (3 s, 5 s, 8 s)")
    return parser


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> None:
    if args.count < 1:
        raise UsageError("--count must be positive")
    manifest = datagen.generate_dataset(args.out, args.count, args.seed, AgentType(args.agent_type))
    print(f"wrote {args.count} scenes and {manifest}")


def cmd_rasterize(args) -> None:
    palette = _palette(args.palette)
    paths = export_batch((scene_to_target_frame(s) for s in _scenes(args.scenes)), args.out, palette)
    print(f"wrote {len(paths)} images to {args.out}")


def _train_config(args) -> TrainConfig:
    base = TrainConfig.load(args.config).to_dict() if args.config else {}
    flags = {"epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr,
             "decay": args.decay, "seed": args.seed, "agent_type": args.agent_type, "clip_norm": args.clip_norm}
    for key, value in flags.items():
        if value is not None:
            base[key] = value
    if args.agent_type is not None and base.get("model") is not None:
        base["model"]["agent_type"] = args.agent_type
    try:
        return TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training configuration: {exc}") from None


def cmd_train(args) -> None:
    cfg = _train_config(args)
    data = prepare_dataset(_scenes(args.data), cfg.model, _palette(args.palette))
    log = None if args.quiet else print
    result = train(cfg, data, args.run_dir, resume=args.resume, progress=log)
    print(f"trained {result.epochs_done} epochs on {len(data)} scenes; checkpoints in {args.run_dir}")


def _resolve_checkpoint(path: str) -> Path:
    p = Path(path)
    if p.is_dir():
        found = latest_checkpoint(p)
        if found is None:
            raise CheckpointError(f"no checkpoint in {p}")
        return found
    return p


def cmd_predict(args) -> None:
    ckpt = _resolve_checkpoint(args.checkpoint)
    cfg_path = Path(args.config) if args.config else ckpt.parent / CONFIG_NAME
    if not cfg_path.exists():
        raise UsageError(f"no configuration found at {cfg_path}; pass --config")
    cfg = TrainConfig.load(cfg_path).model
    params = load_params(ckpt, cfg)
    data = prepare_dataset(_scenes(args.data), cfg, _palette(args.palette))
    preds = predict(data.inputs, params, cfg)
    write_predictions(args.out, zip(data.ids, preds))
    print(f"wrote {len(preds)} predictions to {args.out}")


def cmd_eval(args) -> None:
    preds = read_predictions(args.predictions)
    records = []
    for scene in _scenes(args.data):
        if scene.scenario_id not in preds:
            raise TrainError(f"no prediction for scene {scene.scenario_id}")
        local = scene_to_target_frame(scene)
        records.append(metrics.EvalRecord(scene.scenario_id, preds[scene.scenario_id], local.target_future,
                                          list(local.neighbor_futures or [])))
    if not records:
        raise TrainError("no scenes to evaluate")
    rows = metrics.evaluate(records, args.miss_threshold, args.overlap_radius,
                            metrics.HORIZONS if args.horizons else None)
    metrics.write_metrics_csv(args.out, rows)
    print(metrics.metrics_csv(rows), end="")


COMMANDS = {"generate": cmd_generate, "rasterize": cmd_rasterize, "train": cmd_train,
            "predict": cmd_predict, "eval": cmd_eval}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, SceneError, CheckpointError, TrainError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"recoat: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
