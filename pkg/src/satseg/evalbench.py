"""Segmentation metrics, attention-cost benchmarking and gate diagnostics."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .attention import MGA, BlockGeometry, count_attention_macs
from .config import StageConfig
from .data import CLASS_NAMES, SIZE_NAMES, SIZE_OF_LABEL, PointCloud

BENCH_COLUMNS = ("n_points", "n_voxels", "macs_fine", "macs_coarse", "macs_baseline", "ms_forward")


class MetricError(ValueError):
    pass


class ConfusionMatrix:
    """K x K counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes: int, counts=None):
        self.num_classes = num_classes
        if counts is None:
            self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        else:
            self.counts = np.array(counts, dtype=np.int64)
            if self.counts.shape != (num_classes, num_classes) or np.any(self.counts < 0):
                raise MetricError("counts must be a nonnegative K x K matrix")

    @classmethod
    def from_counts(cls, counts) -> "ConfusionMatrix":
        counts = np.asarray(counts)
        return cls(counts.shape[0], counts)

    def add(self, labels, preds) -> "ConfusionMatrix":
        labels = np.asarray(labels, dtype=np.int64)
        preds = np.asarray(preds, dtype=np.int64)
        k = self.num_classes
        if labels.shape != preds.shape:
            raise MetricError("labels and predictions differ in length")
        if labels.size and (min(labels.min(), preds.min()) < 0 or max(labels.max(), preds.max()) >= k):
            raise MetricError(f"class ids must lie in [0, {k})")
        self.counts += np.bincount(labels * k + preds, minlength=k * k).reshape(k, k)
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def miou_macc(cm: ConfusionMatrix) -> dict:
    """Per-class IoU (fractions), mIoU and mAcc (percent).

    A class with no ground truth and no predictions gets IoU NaN and is left
    out of the mean; mAcc averages recall over classes with ground truth.
    """
    c = cm.counts.astype(np.float64)
    if c.sum() <= 0:
        raise MetricError("confusion matrix is empty")
    tp = np.diag(c)
    gt = c.sum(axis=1)
    pred = c.sum(axis=0)
    union = gt + pred - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
        recall = np.where(gt > 0, tp / gt, np.nan)
    return {
        "per_class_iou": iou,
        "per_class_acc": recall,
        "mIoU": float(np.nanmean(iou) * 100.0),
        "mAcc": float(np.nanmean(recall) * 100.0),
        "overall_acc": float(tp.sum() / c.sum() * 100.0),
    }


def class_iou_variance(per_class_iou, exclude=()) -> float:
    """Population variance of per-class IoUs.

    ``per_class_iou`` is a sequence (``exclude`` holds indices) or a mapping
    (``exclude`` holds keys).  Missing values must be excluded explicitly.
    """
    if isinstance(per_class_iou, Mapping):
        vals = [v for k, v in per_class_iou.items() if k not in set(exclude)]
    else:
        skip = set(exclude)
        vals = [v for i, v in enumerate(per_class_iou) if i not in skip]
    vals = np.asarray(vals, dtype=np.float64)
    if vals.size < 2:
        raise MetricError("variance needs at least two included classes")
    if not np.all(np.isfinite(vals)):
        raise MetricError("missing IoU values must be excluded explicitly")
    return float(np.mean((vals - vals.mean()) ** 2))


def lowest_variance(rows: Mapping[str, Sequence[float]], exclude=()) -> tuple[str, dict[str, float]]:
    """Name of the row whose class IoUs vary least, plus every row's variance."""
    variances = {name: class_iou_variance(r, exclude) for name, r in rows.items()}
    return min(variances, key=variances.get), variances


# ---- attention cost ----------------------------------------------------------

@dataclass
class BenchRow:
    n_points: int
    n_voxels: int
    macs_fine: int
    macs_coarse: int
    macs_baseline: int
    ms_forward: float

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in BENCH_COLUMNS)


def bench_attention(stage: StageConfig, clouds: Sequence, lite: bool = False, time_limit_points: int = 50_000,
                    seed: int = 0, repeats: int = 3) -> list[BenchRow]:
    """Attention cost of one block of ``stage`` on each cloud (or coordinate array).

    MACs come from :func:`count_attention_macs`.  ``ms_forward`` is the best of
    ``repeats`` timed MGA forwards (no gradients); it is NaN for clouds above
    ``time_limit_points`` to keep memory bounded.
    """
    rows = []
    mga = MGA(stage.channels, stage.heads, np.random.default_rng(seed))
    for cloud in clouds:
        coords = cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        geom = BlockGeometry.build(coords, stage, lite=lite)
        macs = count_attention_macs(stage.channels, geom.index)
        ms = float("nan")
        if coords.shape[0] <= time_limit_points:
            feats = nc.Tensor(np.random.default_rng(seed).normal(size=(coords.shape[0], stage.channels)))
            best = np.inf
            with nc.no_grad():
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    mga(feats, geom)
                    best = min(best, time.perf_counter() - t0)
            ms = best * 1e3
        rows.append(BenchRow(coords.shape[0], geom.index.num_voxels, macs["point_branch"], macs["voxel_branch"],
                             macs["baseline_full_point"], ms))
    return rows


def nested_subsets(cloud: PointCloud, sizes: Sequence[int], seed: int = 0) -> list[PointCloud]:
    """Prefixes of one random permutation, so each smaller cloud sits inside the larger."""
    sizes = list(sizes)
    if max(sizes) > len(cloud) or min(sizes) < 1:
        raise ValueError(f"sizes must lie in [1, {len(cloud)}]")
    perm = np.random.default_rng(seed).permutation(len(cloud))
    return [cloud.subset(np.sort(perm[:n])) for n in sizes]


def write_bench_csv(stream, rows: Sequence[BenchRow]) -> None:
    """Write the fixed-header bench table to an open text stream."""
    w = csv.writer(stream)
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        w.writerow([*r.as_tuple()[:5], f"{r.ms_forward:.3f}"])


# ---- re-attention diagnostics --------------------------------------------------

@dataclass
class ReAttentionReport:
    """Class-mean gate vectors per layer ([K, H], NaN rows for absent classes)."""

    class_means: dict[str, np.ndarray] = field(default_factory=dict)
    size_means: dict[str, np.ndarray] = field(default_factory=dict)
    class_counts: dict[str, np.ndarray] = field(default_factory=dict)

    def size_distance(self, layer: str) -> float:
        """Cosine distance between small- and large-object mean gate vectors."""
        m = self.size_means[layer]
        a, b = m[0], m[2]
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            return float("nan")
        return float(1.0 - a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    def depth_trend(self) -> list[tuple[str, float]]:
        return [(layer, self.size_distance(layer)) for layer in self.class_means]


def collect_reattention(model, clouds: Sequence[PointCloud]) -> ReAttentionReport:
    """Run forwards with gate capture and average the gates per class and size."""
    names = model.layer_names()
    k = model.config.num_classes
    sums: dict[str, np.ndarray] = {}
    counts = {n: np.zeros(k, dtype=np.int64) for n in names}
    model.capture_gates(True)
    try:
        with nc.no_grad():
            for cloud in clouds:
                model(cloud.coords, cloud.features())
                for name in names:
                    if name not in model.last_gates:
                        continue
                    gate, source = model.last_gates[name]
                    labels = cloud.labels[source]
                    acc = sums.setdefault(name, np.zeros((k, gate.shape[1])))
                    np.add.at(acc, labels, gate.astype(np.float64))
                    counts[name] += np.bincount(labels, minlength=k)
    finally:
        model.capture_gates(False)
    report = ReAttentionReport()
    for name in names:
        if name not in sums:
            continue
        cnt = counts[name]
        with np.errstate(invalid="ignore", divide="ignore"):
            report.class_means[name] = sums[name] / cnt[:, None]
        if k == len(CLASS_NAMES):
            size = np.zeros((len(SIZE_NAMES), sums[name].shape[1]))
            size_cnt = np.zeros(len(SIZE_NAMES))
            np.add.at(size, SIZE_OF_LABEL, sums[name])
            np.add.at(size_cnt, SIZE_OF_LABEL, cnt)
            with np.errstate(invalid="ignore", divide="ignore"):
                report.size_means[name] = size / size_cnt[:, None]
        report.class_counts[name] = cnt
    return report


def export_reattention(model, clouds: Sequence[PointCloud], out, class_names: Sequence[str] | None = None
                       ) -> ReAttentionReport:
    """Write one CSV per layer (columns: layer, class, head_1..head_H)."""
    report = collect_reattention(model, clouds)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    k = model.config.num_classes
    names = list(class_names) if class_names is not None else (
        list(CLASS_NAMES) if k == len(CLASS_NAMES) else [str(i) for i in range(k)])
    for layer, means in report.class_means.items():
        with open(out / f"reattention_{layer}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "class"] + [f"head_{h + 1}" for h in range(means.shape[1])])
            for c in range(k):
                if report.class_counts[layer][c] == 0:
                    continue
                w.writerow([layer, names[c]] + [f"{v:.9g}" for v in means[c]])
    return report
