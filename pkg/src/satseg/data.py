"""Synthetic indoor scenes with strongly varying object sizes, and the SATPC1
text format.

SATPC1 grammar (UTF-8)::

    SATPC1 <N> <C> <K>
    <x> <y> <z> <f1> ... <fC> <label>      # N lines

N points, C feature channels (3 colors), K classes; labels in [0, K).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError

CLASS_NAMES = ("floor", "wall", "ceiling", "table", "board", "chair", "clutter")
SIZE_NAMES = ("small", "medium", "large")
CLASS_SIZE = {"floor": 2, "wall": 2, "ceiling": 2, "table": 1, "board": 1, "chair": 0, "clutter": 0}
SIZE_OF_LABEL = np.array([CLASS_SIZE[c] for c in CLASS_NAMES], dtype=np.int64)

PALETTE = np.array([
    [0.55, 0.45, 0.35],   # floor
    [0.82, 0.80, 0.74],   # wall
    [0.90, 0.90, 0.93],   # ceiling
    [0.62, 0.38, 0.18],   # table
    [0.25, 0.50, 0.32],   # board
    [0.22, 0.25, 0.70],   # chair
    [0.78, 0.22, 0.20],   # clutter
])


class CloudFormatError(ValueError):
    pass


class CloudValidationError(CloudFormatError):
    pass


@dataclass
class PointCloud:
    coords: np.ndarray
    colors: np.ndarray
    labels: np.ndarray
    num_classes: int = len(CLASS_NAMES)
    size_class: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.coords.shape[0]
        if n < 1:
            raise CloudValidationError("a point cloud needs at least one point")
        if self.coords.shape != (n, 3) or self.colors.shape[0] != n or self.labels.shape != (n,):
            raise CloudValidationError("coords, colors and labels disagree in length")
        if not np.all(np.isfinite(self.coords)):
            raise CloudValidationError("non-finite coordinates")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise CloudValidationError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.coords.shape[0]

    def features(self) -> np.ndarray:
        return np.concatenate([self.coords, self.colors], axis=1)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        size = None if self.size_class is None else self.size_class[idx]
        return PointCloud(self.coords[idx], self.colors[idx], self.labels[idx], self.num_classes, size)

    def permuted(self, perm) -> "PointCloud":
        return self.subset(perm)


@dataclass(frozen=True)
class SceneSpec:
    """Room layout and sampling density for :func:`generate_scene`."""

    room: tuple[float, float, float] = (4.0, 3.0, 2.5)
    density: float = 5000.0          # points per square meter of surface
    floor: bool = True
    walls: bool = True
    ceiling: bool = True
    tables: tuple[int, int] = (1, 2)
    boards: tuple[int, int] = (1, 2)
    chairs: tuple[int, int] = (2, 4)
    clutter: tuple[int, int] = (2, 5)
    min_points: int = 8              # per primitive
    noise: float = 0.005             # coordinate jitter sigma (m)
    color_noise: float = 0.04
    max_points: int | None = None

    def validate(self) -> None:
        if len(self.room) != 3 or min(self.room) <= 0.5:
            raise ConfigError(f"room extents must all exceed 0.5 m, got {self.room}")
        if self.density <= 0:
            raise ConfigError("density must be positive")
        for name in ("tables", "boards", "chairs", "clutter"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(f"bad count range for {name}: {(lo, hi)}")
        if self.min_points < 1 or self.noise < 0 or self.color_noise < 0:
            raise ConfigError("min_points must be >= 1 and noise levels >= 0")
        if self.max_points is not None and self.max_points < 1:
            raise ConfigError("max_points must be >= 1")

    def replace(self, **kw) -> "SceneSpec":
        return dataclasses.replace(self, **kw)


def desk_spec() -> SceneSpec:
    """Small rooms of roughly 2k points, used for quick training runs."""
    return SceneSpec(room=(3.0, 2.5, 2.4), density=40.0, min_points=24, max_points=2048)


# ---- primitives ------------------------------------------------------------

@dataclass
class _Prim:
    kind: str                 # "rect" | "box" | "cyl" | "sphere"
    label: int
    params: tuple
    color: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def area(self) -> float:
        p = self.params
        if self.kind == "rect":
            _, u, v = p
            return float(np.linalg.norm(u) * np.linalg.norm(v))
        if self.kind == "box":
            _, (sx, sy, sz) = p
            return 2 * (sx * sy + sx * sz + sy * sz)
        if self.kind == "cyl":
            _, r, h = p
            return 2 * np.pi * r * h + np.pi * r * r
        _, r = p
        return 4 * np.pi * r * r

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        if self.kind == "rect":
            o, u, v = (np.asarray(a) for a in p)
            a, b = rng.random((n, 1)), rng.random((n, 1))
            return o + a * u + b * v
        if self.kind == "box":
            lo, size = np.asarray(p[0]), np.asarray(p[1])
            sx, sy, sz = size
            areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
            face = rng.choice(6, size=n, p=areas / areas.sum())
            uv = rng.random((n, 3))
            axis = face // 2
            uv[np.arange(n), axis] = face % 2
            return lo + uv * size
        if self.kind == "cyl":
            base, r, h = np.asarray(p[0]), p[1], p[2]
            side = rng.random(n) < (2 * np.pi * r * h) / self.area()
            theta = rng.uniform(0, 2 * np.pi, n)
            rad = np.where(side, r, r * np.sqrt(rng.random(n)))
            z = np.where(side, rng.random(n) * h, h)
            return base + np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)
        center, r = np.asarray(p[0]), p[1]
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return center + r * d


def _layout(spec: SceneSpec, rng: np.random.Generator) -> list[_Prim]:
    lx, ly, lz = spec.room
    L = {name: i for i, name in enumerate(CLASS_NAMES)}
    prims: list[_Prim] = []
    if spec.floor:
        prims.append(_Prim("rect", L["floor"], ((0, 0, 0), (lx, 0, 0), (0, ly, 0))))
    if spec.ceiling:
        prims.append(_Prim("rect", L["ceiling"], ((0, 0, lz), (lx, 0, 0), (0, ly, 0))))
    if spec.walls:
        prims += [
            _Prim("rect", L["wall"], ((0, 0, 0), (lx, 0, 0), (0, 0, lz))),
            _Prim("rect", L["wall"], ((0, ly, 0), (lx, 0, 0), (0, 0, lz))),
            _Prim("rect", L["wall"], ((0, 0, 0), (0, ly, 0), (0, 0, lz))),
            _Prim("rect", L["wall"], ((lx, 0, 0), (0, ly, 0), (0, 0, lz))),
        ]

    def count(rng_range):
        lo, hi = rng_range
        return int(rng.integers(lo, hi + 1))

    def spot(w, d, margin=0.15):
        x = rng.uniform(margin, max(margin, lx - w - margin))
        y = rng.uniform(margin, max(margin, ly - d - margin))
        return x, y

    tops = []
    for _ in range(count(spec.tables)):
        w, d = rng.uniform(0.8, min(1.6, lx - 0.4)), rng.uniform(0.6, min(0.9, ly - 0.4))
        x, y = spot(w, d)
        h = rng.uniform(0.70, 0.78)
        prims.append(_Prim("box", L["table"], ((x, y, h - 0.05), (w, d, 0.05))))
        for cx, cy in ((x + 0.05, y + 0.05), (x + w - 0.05, y + 0.05), (x + 0.05, y + d - 0.05), (x + w - 0.05, y + d - 0.05)):
            prims.append(_Prim("cyl", L["table"], ((cx, cy, 0.0), 0.03, h - 0.05)))
        tops.append((x, y, w, d, h))

    for _ in range(count(spec.boards)):
        bw, bh = rng.uniform(0.8, min(2.0, lx - 0.6)), rng.uniform(0.7, min(1.2, lz - 1.1))
        wall = int(rng.integers(0, 2))
        x = rng.uniform(0.2, lx - bw - 0.2)
        z = rng.uniform(0.9, lz - bh - 0.15)
        y = 0.01 if wall == 0 else ly - 0.03
        prims.append(_Prim("box", L["board"], ((x, y, z), (bw, 0.02, bh))))

    for _ in range(count(spec.chairs)):
        x, y = spot(0.45, 0.45)
        prims.append(_Prim("box", L["chair"], ((x, y, 0.43), (0.45, 0.45, 0.04))))
        prims.append(_Prim("box", L["chair"], ((x, y + 0.41, 0.47), (0.45, 0.04, 0.45))))
        for cx, cy in ((x + 0.04, y + 0.04), (x + 0.41, y + 0.04), (x + 0.04, y + 0.41), (x + 0.41, y + 0.41)):
            prims.append(_Prim("cyl", L["chair"], ((cx, cy, 0.0), 0.02, 0.43)))

    for _ in range(count(spec.clutter)):
        shape = int(rng.integers(0, 3))
        s = rng.uniform(0.08, 0.2)
        if tops and rng.random() < 0.6:
            tx, ty, tw, td, th = tops[int(rng.integers(0, len(tops)))]
            x, y, z = rng.uniform(tx + 0.1, tx + tw - 0.1), rng.uniform(ty + 0.1, ty + td - 0.1), th
        else:
            x, y = spot(s, s)
            z = 0.0
        if shape == 0:
            prims.append(_Prim("box", L["clutter"], ((x, y, z), (s, s * rng.uniform(0.6, 1.4), s * rng.uniform(0.5, 1.5)))))
        elif shape == 1:
            prims.append(_Prim("cyl", L["clutter"], ((x, y, z), s / 2, s * rng.uniform(1.0, 2.0))))
        else:
            prims.append(_Prim("sphere", L["clutter"], ((x, y, z + s / 2), s / 2)))

    for p in prims:
        p.color = np.clip(PALETTE[p.label] + rng.normal(scale=0.03, size=3), 0, 1)
    return prims


def generate_scene(spec: SceneSpec | None = None, seed: int = 0) -> PointCloud:
    """Sample a labeled room.

    Object placement depends only on ``seed``, so scaling ``density`` adds
    points to the same geometry.
    """
    spec = spec or SceneSpec()
    spec.validate()
    prims = _layout(spec, np.random.default_rng([seed, 0]))
    if not prims:
        raise ConfigError("scene spec produces no primitives")
    rng = np.random.default_rng([seed, 1])
    coords, colors, labels = [], [], []
    for p in prims:
        n = max(spec.min_points, int(round(p.area() * spec.density)))
        coords.append(p.sample(n, rng))
        colors.append(np.clip(p.color + rng.normal(scale=spec.color_noise, size=(n, 3)), 0, 1))
        labels.append(np.full(n, p.label, dtype=np.int64))
    xyz = np.concatenate(coords)
    xyz += rng.normal(scale=spec.noise, size=xyz.shape) if spec.noise else 0.0
    labels = np.concatenate(labels)
    cloud = PointCloud(xyz, np.concatenate(colors), labels, len(CLASS_NAMES), SIZE_OF_LABEL[labels])
    if spec.max_points is not None and len(cloud) > spec.max_points:
        keep = np.sort(np.random.default_rng([seed, 2]).choice(len(cloud), spec.max_points, replace=False))
        cloud = cloud.subset(keep)
    return cloud


# ---- file format -----------------------------------------------------------

def write_cloud(path, cloud: PointCloud) -> None:
    n, c = cloud.colors.shape
    rows = np.concatenate([cloud.coords, cloud.colors], axis=1)
    lines = [f"SATPC1 {n} {c} {cloud.num_classes}"]
    for r, lab in zip(rows, cloud.labels):
        lines.append(" ".join(f"{v:.9g}" for v in r) + f" {int(lab)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_cloud(path) -> PointCloud:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise CloudFormatError(f"{path}: line 1: empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "SATPC1":
        raise CloudFormatError(f"{path}: line 1: expected 'SATPC1 N C K'")
    try:
        n, c, k = (int(v) for v in head[1:])
    except ValueError:
        raise CloudFormatError(f"{path}: line 1: N, C, K must be integers") from None
    if n < 1 or c < 0 or k < 1:
        raise CloudFormatError(f"{path}: line 1: N and K must be positive")
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != n:
        line = min(len(body), n) + 2
        raise CloudFormatError(f"{path}: line {line}: header declares {n} points, found {len(body)}")
    rows = np.empty((n, 3 + c))
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != 4 + c:
            raise CloudFormatError(f"{path}: line {i + 2}: expected {4 + c} fields, got {len(parts)}")
        try:
            rows[i] = [float(v) for v in parts[:-1]]
            labels[i] = int(parts[-1])
        except ValueError:
            raise CloudFormatError(f"{path}: line {i + 2}: malformed number") from None
        if not 0 <= labels[i] < k:
            raise CloudValidationError(f"{path}: line {i + 2}: label {labels[i]} outside [0, {k})")
    if not np.all(np.isfinite(rows[:, :3])):
        raise CloudValidationError(f"{path}: non-finite coordinates")
    size = SIZE_OF_LABEL[labels] if k == len(CLASS_NAMES) else None
    return PointCloud(rows[:, :3], rows[:, 3:], labels, k, size)


def read_dir(path) -> list[PointCloud]:
    files = sorted(Path(path).glob("*.satpc"))
    return [read_cloud(f) for f in files]


# ---- batching --------------------------------------------------------------

def make_batches(clouds: Sequence[PointCloud], max_points: int, seed: int, epoch: int = 0,
                 shuffle: bool = True) -> list[PointCloud]:
    """One cloud per batch, randomly subsampled to at most ``max_points``.

    The sequence depends only on (seed, epoch).  Clouds at or under the limit
    pass through untouched.
    """
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(clouds)) if shuffle else np.arange(len(clouds))
    out = []
    for i in order:
        cloud = clouds[i]
        if len(cloud) <= max_points:
            out.append(cloud)
        else:
            out.append(cloud.subset(np.sort(rng.choice(len(cloud), max_points, replace=False))))
    return out
