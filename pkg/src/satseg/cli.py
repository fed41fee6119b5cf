"""Command-line entry point: gen, train, eval, bench, inspect.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command takes ``--seed`` (falling back to the SAT_SEED environment
variable, then 0) and ``--config FILE`` with flat ``key = value`` lines whose
keys are the long option names (dashes or underscores); flags given on the
command line win over file values.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import numcore as nc
from .config import PRESETS, VARIANTS, ConfigError, preset
from .data import CLASS_NAMES, CloudFormatError, SceneSpec, desk_spec, generate_scene, read_dir, write_cloud
from .evalbench import (
    bench_attention,
    class_iou_variance,
    export_reattention,
    miou_macc,
    nested_subsets,
    write_bench_csv,
)
from .train import RunConfig, evaluate, load_model, run_summary, train

log = logging.getLogger("satseg")

SCENE_PRESETS = {"desk": desk_spec, "room": SceneSpec}


class UsageError(Exception):
    pass


def _seed_default() -> int:
    raw = os.environ.get("SAT_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SAT_SEED must be an integer, got {raw!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: $SAT_SEED or 0)")
    p.add_argument("--config", default=None, help="file of 'key = value' lines providing option defaults")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satseg", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = sub.choices

    g = sub.add_parser("gen", help="write synthetic train/val scenes")
    _common(g)
    g.add_argument("--out", required=True, help="output directory (gets train/ and val/)")
    g.add_argument("--scenes", type=int, default=8, help="number of training scenes")
    g.add_argument("--val-scenes", type=int, default=2, help="number of validation scenes")
    g.add_argument("--scene-preset", choices=sorted(SCENE_PRESETS), default="desk")
    g.add_argument("--density", type=float, default=None, help="override points per square meter")
    g.add_argument("--max-points", type=int, default=None, help="override per-scene point cap")

    t = sub.add_parser("train", help="train a model on a generated data directory")
    _common(t)
    t.add_argument("--data", required=True, help="directory with train/ and optionally val/")
    t.add_argument("--out", required=True, help="run directory for log.csv and checkpoints")
    t.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="model preset")
    t.add_argument("--variant", choices=sorted(VARIANTS), default="full")
    t.add_argument("--lr", type=float, default=0.006)
    t.add_argument("--optimizer", choices=("sgd", "adamw"), default="sgd")
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--epochs", type=int, default=64)
    t.add_argument("--milestones", type=_int_list, default=None, help="epochs of x0.1 decay (default 60%%,80%%)")
    t.add_argument("--max-points", type=int, default=2048)
    t.add_argument("--precision", type=int, choices=(32, 64), default=32)
    t.add_argument("--zero-init-gate", type=_bool, nargs="?", const=True, default=False,
                   help="zero the gate MLP output layer")

    e = sub.add_parser("eval", help="per-class IoU, mIoU, mAcc and IoU variance")
    _common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="directory of .satpc files, or one with a val/ subdirectory")
    e.add_argument("--split", default="val", help="subdirectory to evaluate when present (default val)")
    e.add_argument("--out", default=None, help="CSV path for the metrics table")

    b = sub.add_parser("bench", help="attention MAC counts and timing across scene sizes")
    _common(b)
    b.add_argument("--preset", choices=sorted(PRESETS), default="s3dis")
    b.add_argument("--stage", type=int, default=1, help="1-based stage whose block is measured")
    b.add_argument("--sizes", type=_int_list, default=[1000, 2000, 4000], help="point counts (nested subsets)")
    b.add_argument("--density", type=float, default=None, help="scene density (default: room preset)")
    b.add_argument("--lite", type=_bool, nargs="?", const=True, default=False,
                   help="collapse the voxel window onto the base window")
    b.add_argument("--out", default=None, help="CSV path (default: stdout)")

    i = sub.add_parser("inspect", help="per-class mean re-attention gates per layer")
    _common(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--split", default="train")
    i.add_argument("--out", required=True, help="directory for one CSV per layer")
    return parser


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def parse_args(argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become the subcommand's defaults."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None or known.command not in parser.commands:
        return parser.parse_args(argv)
    sub = parser.commands[known.command]
    values = read_config_file(known.config)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise ConfigError(f"{known.config}: unknown keys for '{known.command}': {', '.join(unknown)}")
    defaults = {}
    for key, raw in values.items():
        act = actions[key]
        conv = act.type or (_bool if isinstance(act.default, bool) else str)
        try:
            defaults[key] = conv(raw)
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ConfigError(f"{known.config}: bad value for {key}: {exc}") from None
        if act.choices is not None and defaults[key] not in act.choices:
            raise ConfigError(f"{known.config}: {key} must be one of {sorted(act.choices)}")
        act.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _split_dir(data, split: str) -> Path:
    root = Path(data)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory not found: {root}")
    return root / split if (root / split).is_dir() else root


def _load_clouds(path: Path):
    clouds = read_dir(path)
    if not clouds:
        raise FileNotFoundError(f"no .satpc files in {path}")
    return clouds


def cmd_gen(args) -> int:
    spec = SCENE_PRESETS[args.scene_preset]()
    if args.density is not None:
        spec = spec.replace(density=args.density)
    if args.max_points is not None:
        spec = spec.replace(max_points=args.max_points)
    if args.scenes < 1 or args.val_scenes < 0:
        raise ConfigError("--scenes must be >= 1 and --val-scenes >= 0")
    out = Path(args.out)
    rows = []
    for split, count, offset in (("train", args.scenes, 0), ("val", args.val_scenes, args.scenes)):
        (out / split).mkdir(parents=True, exist_ok=True)
        for i in range(count):
            scene_seed = args.seed * 100_000 + offset + i
            cloud = generate_scene(spec, scene_seed)
            name = f"{split}/scene_{i:04d}.satpc"
            write_cloud(out / name, cloud)
            rows.append((split, name, scene_seed, len(cloud)))
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("split", "file", "scene_seed", "points"))
        w.writerows(rows)
    print("split,file,scene_seed,points")
    for r in rows:
        print(",".join(str(v) for v in r))
    return 0


def cmd_train(args) -> int:
    run = RunConfig(model_preset=args.preset, variant=args.variant, lr=args.lr, optimizer=args.optimizer,
                    momentum=args.momentum, weight_decay=args.weight_decay, epochs=args.epochs,
                    milestones=tuple(args.milestones) if args.milestones else None, max_points=args.max_points,
                    seed=args.seed, precision=args.precision, zero_init_gate=args.zero_init_gate)
    root = Path(args.data)
    train_clouds = _load_clouds(root / "train" if (root / "train").is_dir() else root)
    val_clouds = read_dir(root / "val") if (root / "val").is_dir() else []
    result = train(run, train_clouds, val_clouds, out_dir=args.out)
    last = result.history[-1]
    print(f"run: {run_summary(run)}")
    print(f"parameters: {result.model.num_parameters()}")
    print(f"final epoch {last['epoch']} step {last['step']}: loss {last['loss']:.4f} "
          f"train_acc {100 * last['train_acc']:.2f}%")
    if result.best_val is not None:
        print(f"best val mIoU {result.best_val:.2f}")
    print(f"wrote {Path(args.out) / 'log.csv'} and {Path(args.out) / 'last.ckpt'}")
    return 0


def metrics_rows(metrics: dict, names) -> list[tuple]:
    """One row per class, then the summary rows."""
    rows = []
    iou, acc = metrics["per_class_iou"], metrics["per_class_acc"]
    for c, name in enumerate(names):
        rows.append((name, _pct(iou[c]), _pct(acc[c])))
    present = [c for c in range(len(names)) if np.isfinite(iou[c])]
    absent = [names[c] for c in range(len(names)) if c not in present]
    var = class_iou_variance(100 * iou, exclude=[c for c in range(len(names)) if c not in present]) \
        if len(present) >= 2 else float("nan")
    rows.append(("mIoU", f"{metrics['mIoU']:.2f}", ""))
    rows.append(("mAcc", f"{metrics['mAcc']:.2f}", ""))
    rows.append(("overall_acc", f"{metrics['overall_acc']:.2f}", ""))
    rows.append(("iou_population_variance", f"{var:.2f}", "excluded: " + (" ".join(absent) or "none")))
    return rows


def _pct(v) -> str:
    return "" if not np.isfinite(v) else f"{100 * v:.2f}"


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    clouds = _load_clouds(_split_dir(args.data, args.split))
    k_data = clouds[0].num_classes
    if k_data != model.config.num_classes:
        raise ConfigError(f"class count mismatch: checkpoint has {model.config.num_classes} classes, "
                          f"data has {k_data}")
    cm, loss = evaluate(model, clouds)
    names = list(CLASS_NAMES) if k_data == len(CLASS_NAMES) else [str(c) for c in range(k_data)]
    rows = metrics_rows(miou_macc(cm), names)
    header = ("class", "iou", "acc")
    w = csv.writer(sys.stdout)
    w.writerow(header)
    w.writerows(rows)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fw = csv.writer(fh)
            fw.writerow(header)
            fw.writerows(rows)
    log.info("mean loss %.4f over %d clouds", loss, len(clouds))
    return 0


def cmd_bench(args) -> int:
    cfg = preset(args.preset)
    if not 1 <= args.stage <= len(cfg.stages):
        raise ConfigError(f"--stage must lie in [1, {len(cfg.stages)}]")
    stage = cfg.stages[args.stage - 1]
    spec = SceneSpec() if args.density is None else SceneSpec(density=args.density)
    cloud = generate_scene(spec, args.seed)
    if max(args.sizes) > len(cloud):
        raise ConfigError(f"largest size {max(args.sizes)} exceeds the scene's {len(cloud)} points")
    rows = bench_attention(stage, nested_subsets(cloud, sorted(args.sizes), args.seed), lite=args.lite,
                           seed=args.seed)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            write_bench_csv(fh, rows)
        print(f"wrote {args.out}")
    else:
        write_bench_csv(sys.stdout, rows)
    return 0


def cmd_inspect(args) -> int:
    model = load_model(args.checkpoint, dtype=np.float64)
    clouds = _load_clouds(_split_dir(args.data, args.split))
    if clouds[0].num_classes != model.config.num_classes:
        raise ConfigError(f"class count mismatch: checkpoint has {model.config.num_classes} classes, "
                          f"data has {clouds[0].num_classes}")
    with nc.precision(np.float64):
        report = export_reattention(model, clouds, args.out)
    print(f"layers: {len(report.class_means)}")
    print("layer,small_vs_large_cosine_distance")
    for layer, d in report.depth_trend():
        print(f"{layer},{d:.6g}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "inspect": cmd_inspect}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        if args.seed is None:
            args.seed = _seed_default()
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, UsageError, OSError) as exc:
        print(f"satseg: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"satseg: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, CloudFormatError, RuntimeError, FloatingPointError, ValueError) as exc:
        print(f"satseg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
