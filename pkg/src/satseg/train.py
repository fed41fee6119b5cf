"""Training loop, evaluation and checkpoint handling."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .config import ConfigError, ModelConfig, preset
from .data import PointCloud, make_batches
from .evalbench import ConfusionMatrix, miou_macc
from .network import SATNet, build_model
from .numcore import AdamW, MultiStepLR, NumericError, SGD

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "lr", "loss", "train_acc", "val_acc", "val_miou")


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Settings for one training run; see ``satseg train --help`` for the key list."""

    model_preset: str = "desk"
    variant: str = "full"
    lr: float = 0.006
    optimizer: str = "sgd"            # "sgd" | "adamw"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 64
    milestones: tuple[int, ...] | None = None   # default: 60% and 80% of epochs
    gamma: float = 0.1
    max_points: int = 2048
    seed: int = 0
    precision: int = 32
    zero_init_gate: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.optimizer not in ("sgd", "adamw"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if self.max_points < 1:
            raise ConfigError("max_points must be >= 1")
        ms = self.resolved_milestones()
        if list(ms) != sorted(set(ms)):
            raise ConfigError(f"milestones must be strictly ascending, got {ms}")

    def resolved_milestones(self) -> tuple[int, ...]:
        if self.milestones is not None:
            return tuple(int(m) for m in self.milestones)
        return tuple(sorted({math.ceil(0.6 * self.epochs), math.ceil(0.8 * self.epochs)}))

    def model_config(self, num_classes: int) -> ModelConfig:
        cfg = preset(self.model_preset, num_classes=num_classes, seed=self.seed,
                     zero_init_gate=self.zero_init_gate)
        return cfg.with_variant(self.variant)

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


@dataclass
class TrainResult:
    model: SATNet
    history: list[dict] = field(default_factory=list)
    best_val: float | None = None


def first_nonfinite_parameter(model: SATNet) -> str | None:
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.data)):
            return name
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return name + " (gradient)"
    return None


def evaluate(model: SATNet, clouds: Sequence[PointCloud]) -> tuple[ConfusionMatrix, float]:
    """Confusion matrix and mean loss over whole scenes."""
    cm = ConfusionMatrix(model.config.num_classes)
    losses = []
    with nc.no_grad():
        for cloud in clouds:
            logits = model(cloud.coords, cloud.features())
            losses.append(nc.cross_entropy(logits, cloud.labels).item())
            cm.add(cloud.labels, logits.data.argmax(axis=1))
    return cm, float(np.mean(losses))


def train(run: RunConfig, train_clouds: Sequence[PointCloud], val_clouds: Sequence[PointCloud] = (),
          out_dir=None, eval_every: int = 1) -> TrainResult:
    """One cloud per step, ``epochs`` passes over ``train_clouds``.

    With ``out_dir`` the run writes ``log.csv``, ``last.ckpt`` and, when
    validation clouds are given, ``best.ckpt`` (highest val mIoU).
    """
    if not train_clouds:
        raise ConfigError("no training clouds")
    k = train_clouds[0].num_classes
    if any(c.num_classes != k for c in list(train_clouds) + list(val_clouds)):
        raise ConfigError("all clouds must declare the same class count")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    with nc.precision(run.dtype):
        model = build_model(run.model_config(k))
        params = model.parameters()
        if run.optimizer == "sgd":
            opt = SGD(params, run.lr, momentum=run.momentum, weight_decay=run.weight_decay)
        else:
            opt = AdamW(params, run.lr, weight_decay=run.weight_decay)
        sched = MultiStepLR(opt, run.resolved_milestones(), run.gamma)
        result = TrainResult(model)
        step = 0
        for epoch in range(run.epochs):
            losses, correct, seen = [], 0, 0
            lr = opt.lr
            for cloud in make_batches(train_clouds, run.max_points, run.seed, epoch):
                opt.zero_grad()
                try:
                    logits = model(cloud.coords, cloud.features())
                except NumericError as exc:
                    raise TrainingError(f"epoch {epoch + 1} step {step + 1}: {exc}") from exc
                loss = nc.cross_entropy(logits, cloud.labels)
                if not math.isfinite(loss.item()):
                    raise TrainingError(f"epoch {epoch + 1} step {step + 1}: non-finite loss in layer head")
                loss.backward()
                bad = first_nonfinite_parameter(model)
                if bad is not None:
                    raise TrainingError(f"epoch {epoch + 1} step {step + 1}: non-finite values in {bad}")
                opt.step()
                step += 1
                losses.append(loss.item())
                correct += int((logits.data.argmax(axis=1) == cloud.labels).sum())
                seen += len(cloud)
            sched.step()
            row = {"epoch": epoch + 1, "step": step, "lr": lr, "loss": float(np.mean(losses)),
                   "train_acc": correct / seen, "val_acc": float("nan"), "val_miou": float("nan")}
            last = epoch + 1 == run.epochs
            if val_clouds and ((epoch + 1) % eval_every == 0 or last):
                cm, _ = evaluate(model, val_clouds)
                m = miou_macc(cm)
                row["val_acc"], row["val_miou"] = m["overall_acc"] / 100.0, m["mIoU"]
                if result.best_val is None or m["mIoU"] > result.best_val:
                    result.best_val = m["mIoU"]
                    if out is not None:
                        save_model(out / "best.ckpt", model)
            result.history.append(row)
            log.info("epoch %d loss %.4f acc %.4f val_miou %.2f", row["epoch"], row["loss"], row["train_acc"],
                     row["val_miou"])
        if out is not None:
            save_model(out / "last.ckpt", model)
            write_log(out / "log.csv", result.history)
    return result


def write_log(path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in history:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in LOG_COLUMNS])


def save_model(path, model: SATNet) -> None:
    """Parameters in the binary checkpoint format plus a JSON sidecar with the config."""
    path = Path(path)
    nc.save_params(path, model.state_dict())
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(model.config.to_dict(), indent=1))


def load_model(path, dtype=np.float32) -> SATNet:
    path = Path(path)
    side = path.with_suffix(path.suffix + ".json")
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    if not side.exists():
        raise FileNotFoundError(f"checkpoint config not found: {side}")
    cfg = ModelConfig.from_dict(json.loads(side.read_text()))
    with nc.precision(dtype):
        model = build_model(cfg)
        model.load_state_dict(nc.load_params(path))
    return model


def run_summary(run: RunConfig) -> dict:
    d = asdict(run)
    d["milestones"] = list(run.resolved_milestones())
    return d
