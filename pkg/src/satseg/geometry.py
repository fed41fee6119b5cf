"""Spatial indexing: voxel/window assignment, FPS, kNN, 3-NN interpolation.

Windows and voxels are axis-aligned cubes anchored at the coordinate origin.
Every routine breaks ties toward the lowest point index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import StageConfig
from .numcore import PairList, SegmentMap


class ParameterError(ValueError):
    pass


def _coords(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 3:
        raise ParameterError(f"coords must be [N, 3], got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ParameterError("coordinates must be finite")
    return c


def voxel_cells(coords, edge: float, shift: float = 0.0) -> np.ndarray:
    """Integer cell coordinates floor((x + shift) / edge)."""
    if not edge > 0:
        raise ParameterError(f"edge must be positive, got {edge}")
    return np.floor((_coords(coords) + shift) / edge).astype(np.int64)


def dense_ids(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map integer key rows to dense ids ordered lexicographically over the keys."""
    if keys.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), keys
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    return inv.reshape(-1).astype(np.int64), uniq


def voxel_assign(coords, edge: float, shift: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Dense cell id per point plus the occupied cells (row ``i`` is cell id ``i``)."""
    return dense_ids(voxel_cells(coords, edge, shift))


@dataclass(frozen=True)
class WindowIndex:
    base_window_id: np.ndarray
    voxel_window_id: np.ndarray
    voxel_id: np.ndarray
    voxel_to_window: np.ndarray     # voxel window owning each occupied voxel
    base_edge: float
    window_edge: float
    voxel_edge: float
    base: SegmentMap
    window: SegmentMap
    voxels: SegmentMap

    @property
    def num_points(self) -> int:
        return int(self.base_window_id.size)

    @property
    def num_voxels(self) -> int:
        return int(self.voxel_to_window.size)

    def voxels_per_window(self) -> np.ndarray:
        return np.bincount(self.voxel_to_window, minlength=self.window.num_segments)

    def point_pairs(self) -> PairList:
        """Fine-branch pairs: every point with every point of its base window."""
        return PairList.from_groups(self.base_window_id, self.base_window_id, self.base.num_segments)

    def voxel_pairs(self) -> PairList:
        """Coarse-branch pairs: every point with every occupied voxel of its voxel window."""
        return PairList.from_groups(self.voxel_window_id, self.voxel_to_window, self.window.num_segments)


def build_window_index(
    coords,
    base_window: float,
    ratio: int,
    voxel_size: float,
    shift: bool = False,
) -> WindowIndex:
    """Assign each point to a base window, a ``ratio``-times larger voxel window
    and a voxel.

    Shifting moves both window grids by half a base window; voxels stay on the
    global grid and are split by voxel-window boundaries where they straddle one.
    """
    if int(ratio) != ratio or ratio < 1:
        raise ParameterError(f"ratio must be a positive integer, got {ratio}")
    c = _coords(coords)
    off = base_window / 2 if shift else 0.0
    window_edge = ratio * base_window
    base_id, _ = voxel_assign(c, base_window, off)
    win_cells = voxel_cells(c, window_edge, off)
    win_id, _ = dense_ids(win_cells)
    vox_cells = voxel_cells(c, voxel_size)
    vox_id, vox_keys = dense_ids(np.concatenate([win_id[:, None], vox_cells], axis=1))
    voxel_to_window = vox_keys[:, 0].astype(np.int64) if vox_keys.size else np.zeros(0, dtype=np.int64)
    return WindowIndex(
        base_window_id=base_id,
        voxel_window_id=win_id,
        voxel_id=vox_id,
        voxel_to_window=voxel_to_window,
        base_edge=base_window,
        window_edge=window_edge,
        voxel_edge=voxel_size,
        base=SegmentMap.from_ids(base_id),
        window=SegmentMap.from_ids(win_id),
        voxels=SegmentMap.from_ids(vox_id),
    )


def stage_window_index(coords, stage: StageConfig, shift: bool = False, lite: bool = False) -> WindowIndex:
    """Window index for a stage; ``lite`` collapses the voxel window onto the base window."""
    ratio = 1 if lite else stage.ratio
    return build_window_index(coords, stage.base_window, ratio, stage.voxel_size, shift)


def canonical_order(coords, feats=None) -> np.ndarray:
    """Permutation sorting points by (x, y, z, feature columns...).

    Two inputs that differ only by a permutation of points map to the same
    sorted array, which is how forward passes stay bit-exactly equivariant.
    """
    c = np.asarray(coords)
    cols = [c[:, i] for i in range(c.shape[1])]
    if feats is not None:
        f = np.asarray(feats)
        cols += [f[:, i] for i in range(f.shape[1])]
    return np.lexsort(tuple(reversed(cols)))


def lexicographic_start(coords) -> int:
    c = np.asarray(coords)
    return int(np.lexsort((c[:, 2], c[:, 1], c[:, 0]))[0])


def farthest_point_sample(coords, m: int, start: int | None = None) -> np.ndarray:
    """Greedy max-min sampling of ``m`` indices (selection order)."""
    c = _coords(coords)
    n = c.shape[0]
    if not 1 <= m <= n:
        raise ParameterError(f"need 1 <= m <= N, got m={m}, N={n}")
    cur = lexicographic_start(c) if start is None else int(start)
    selected = np.empty(m, dtype=np.int64)
    dist = np.full(n, np.inf)
    for i in range(m):
        selected[i] = cur
        d = ((c - c[cur]) ** 2).sum(axis=1)
        np.minimum(dist, d, out=dist)
        dist[cur] = -1.0
        cur = int(np.argmax(dist))
    return selected


def knn(coords, queries, k: int, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """k nearest data points per query, nearest first, ties by lowest index."""
    c, q = _coords(coords), _coords(queries)
    if not 1 <= k <= c.shape[0]:
        raise ParameterError(f"need 1 <= k <= N, got k={k}, N={c.shape[0]}")
    idx = np.empty((q.shape[0], k), dtype=np.int64)
    dist = np.empty((q.shape[0], k))
    for lo in range(0, q.shape[0], chunk):
        d2 = ((q[lo:lo + chunk, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx[lo:lo + chunk] = order
        dist[lo:lo + chunk] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return idx, dist


def interpolation_weights(coarse_coords, fine_coords, k: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-distance weights over the ``k`` nearest coarse points.

    Weights are 1/(d + 1e-8), normalized; a fine point that coincides with a
    coarse point takes that point's feature alone.
    """
    k = min(k, np.asarray(coarse_coords).shape[0])
    idx, dist = knn(coarse_coords, fine_coords, k)
    w = 1.0 / (dist + 1e-8)
    w /= w.sum(axis=1, keepdims=True)
    exact = dist[:, 0] == 0
    w[exact] = 0.0
    w[exact, 0] = 1.0
    return idx, w


def interpolate_3nn(coarse_coords, coarse_feats, fine_coords) -> np.ndarray:
    idx, w = interpolation_weights(coarse_coords, fine_coords)
    return np.einsum("mk,mkc->mc", w, np.asarray(coarse_feats)[idx])


@dataclass(frozen=True)
class SamplingResult:
    selected: np.ndarray
    neighbors: np.ndarray     # [N, k] indices into ``selected``
    weights: np.ndarray       # [N, k] interpolation weights, rows sum to 1


def downsample(coords, ratio: int = 4) -> SamplingResult:
    c = _coords(coords)
    m = math.ceil(c.shape[0] / ratio)
    sel = farthest_point_sample(c, m)
    nb, w = interpolation_weights(c[sel], c)
    return SamplingResult(selected=sel, neighbors=nb, weights=w)
