"""Hierarchical encoder-decoder built from SAT blocks.

Encoder: point embedding, then per stage an optional transition down (FPS to
ceil(N/ratio), kNN max-pool of lifted neighbor features) followed by the
stage's blocks.  Decoder: one transition up per stage (3-NN interpolation plus
a projected skip, then an MLP) and a per-point linear head.
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .attention import BlockGeometry, SATBlock, count_attention_macs
from .config import ConfigError, ModelConfig, StageConfig
from .geometry import canonical_order, farthest_point_sample, interpolation_weights, knn
from .numcore import MLP, LayerNorm, Linear, Module, NumericError, SegmentMap, Tensor


@dataclass(frozen=True)
class StagePlan:
    """Coordinates and index structures of one encoder stage."""

    coords: np.ndarray
    source: np.ndarray            # row of each point in the canonical input order
    blocks: tuple[BlockGeometry, ...]
    selected: np.ndarray | None   # FPS picks from the previous stage
    neighbors: np.ndarray | None  # [M, k] previous-stage indices pooled per point
    up_idx: np.ndarray | None     # [N_prev, 3] this stage's points interpolated onto the previous one
    up_w: np.ndarray | None


@dataclass(frozen=True)
class ScenePlan:
    order: np.ndarray             # canonical order of the input rows
    inverse: np.ndarray
    stages: tuple[StagePlan, ...]


def plan_scene(coords, feats, config: ModelConfig) -> ScenePlan:
    """Everything a forward pass needs that depends on coordinates only."""
    coords = np.asarray(coords, dtype=np.float64)
    order = canonical_order(coords, feats)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    cur = coords[order]
    source = order.copy()
    stages = []
    for s, stage in enumerate(config.stages):
        selected = neighbors = up_idx = up_w = None
        if s > 0:
            m = math.ceil(cur.shape[0] / config.downsample_ratio)
            selected = farthest_point_sample(cur, m)
            nxt = cur[selected]
            neighbors, _ = knn(cur, nxt, min(config.knn_k, cur.shape[0]))
            up_idx, up_w = interpolation_weights(nxt, cur)
            cur, source = nxt, source[selected]
        blocks = tuple(BlockGeometry.build(cur, stage, shift=sh, lite=config.lite_mga)
                       for sh in stage.shift_flags())
        stages.append(StagePlan(cur, source, blocks, selected, neighbors, up_idx, up_w))
    return ScenePlan(order, inverse, tuple(stages))


class TransitionDown(Module):
    """Max-pool over k nearest neighbors of a Linear-LayerNorm-GELU lift."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.lift = Linear(c_in, c_out, rng)
        self.norm = LayerNorm(c_out)

    def forward(self, feats: Tensor, neighbors: np.ndarray) -> Tensor:
        m, k = neighbors.shape
        lifted = nc.gelu(self.norm(self.lift(feats)))
        grouped = nc.gather_rows(lifted, neighbors.reshape(-1))
        return nc.segmented_reduce(grouped, SegmentMap.from_ids(np.repeat(np.arange(m), k), m), "max")


class TransitionUp(Module):
    """Interpolated coarse features plus a projected skip, then an MLP."""

    def __init__(self, c_coarse: int, c_fine: int, rng: np.random.Generator):
        self.skip = Linear(c_fine, c_coarse, rng)
        self.mlp = MLP(c_coarse, c_fine, c_fine, rng)

    def forward(self, coarse: Tensor, skip: Tensor, idx: np.ndarray, weights: np.ndarray) -> Tensor:
        up = nc.weighted_gather(coarse, idx, weights)
        return self.mlp(nc.add(up, self.skip(skip)))


def transition_down(layer: TransitionDown, coords, feats: Tensor, ratio: int = 4, k: int = 16):
    """Standalone transition down: returns (coarse coords, pooled feats, FPS picks)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] < 1:
        raise ValueError("transition down needs at least one point")
    sel = farthest_point_sample(coords, math.ceil(coords.shape[0] / ratio))
    nb, _ = knn(coords, coords[sel], min(k, coords.shape[0]))
    return coords[sel], layer(feats, nb), sel


def transition_up(layer: TransitionUp, coarse_coords, coarse: Tensor, fine_coords, skip: Tensor) -> Tensor:
    idx, w = interpolation_weights(np.asarray(coarse_coords, dtype=np.float64),
                                   np.asarray(fine_coords, dtype=np.float64))
    return layer(coarse, skip, idx, w)


class SATNet(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        st = config.stages
        self.embed = MLP(config.in_channels, st[0].channels, st[0].channels, rng)
        self.down = [TransitionDown(a.channels, b.channels, rng) for a, b in zip(st, st[1:])]
        self.stages = [
            [SATBlock(s.channels, s.heads, rng, re_attention=config.re_attention, shunted=config.shunted,
                      mode=config.mga, out_proj=config.out_proj, rel_pos_bias=config.rel_pos_bias,
                      zero_init_gate=config.zero_init_gate) for _ in range(s.blocks)]
            for s in st
        ]
        self.up = [TransitionUp(b.channels, a.channels, rng) for a, b in zip(st, st[1:])]
        self.head_norm = LayerNorm(st[0].channels)
        self.head = Linear(st[0].channels, config.num_classes, rng)
        self._plans: OrderedDict[bytes, ScenePlan] = OrderedDict()
        self._plan_cache_size = 32
        self._capture = False
        self.last_gates: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def layer_names(self) -> list[str]:
        return [f"stage{s + 1}.block{b + 1}" for s, blocks in enumerate(self.stages) for b in range(len(blocks))]

    def capture_gates(self, on: bool = True) -> None:
        """Record each block's gate values (and source rows) on the next forward."""
        self._capture = on
        for blocks in self.stages:
            for blk in blocks:
                blk._capture = on
        self.last_gates = {}

    def plan(self, coords, feats) -> ScenePlan:
        coords = np.ascontiguousarray(coords, dtype=np.float64)
        feats = np.ascontiguousarray(feats, dtype=np.float64)
        key = hashlib.sha1(coords.tobytes() + feats.tobytes()).digest()
        hit = self._plans.get(key)
        if hit is not None:
            self._plans.move_to_end(key)
            return hit
        plan = plan_scene(coords, feats, self.config)
        self._plans[key] = plan
        if len(self._plans) > self._plan_cache_size:
            self._plans.popitem(last=False)
        return plan

    def forward(self, coords, feats) -> Tensor:
        """Per-point logits, rows in input order."""
        feats_np = np.asarray(feats.data if isinstance(feats, Tensor) else feats)
        if feats_np.ndim != 2 or feats_np.shape[1] != self.config.in_channels:
            raise ConfigError(f"expected [N, {self.config.in_channels}] input features, got {feats_np.shape}")
        plan = self.plan(coords, feats_np)
        x = nc.gather_rows(feats if isinstance(feats, Tensor) else Tensor(feats_np), plan.order)
        x = _checked(self.embed(x), "embed")
        skips = []
        for s, (sp, blocks) in enumerate(zip(plan.stages, self.stages)):
            if s > 0:
                x = _checked(self.down[s - 1](x, sp.neighbors), f"down{s + 1}")
            for b, (blk, geom) in enumerate(zip(blocks, sp.blocks)):
                name = f"stage{s + 1}.block{b + 1}"
                x = _checked(blk(x, geom), name)
                if self._capture and blk._last_gate is not None:
                    self.last_gates[name] = (blk._last_gate, sp.source)
            skips.append(x)
        for s in range(len(self.stages) - 1, 0, -1):
            sp = plan.stages[s]
            x = _checked(self.up[s - 1](x, skips[s - 1], sp.up_idx, sp.up_w), f"up{s}")
        logits = _checked(self.head(self.head_norm(x)), "head")
        return nc.gather_rows(logits, plan.inverse)


def _checked(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activations in layer {layer}")
    return t


def build_model(config: ModelConfig) -> SATNet:
    if not isinstance(config, ModelConfig) or not all(isinstance(s, StageConfig) for s in config.stages):
        raise ConfigError("build_model needs a ModelConfig with StageConfig stages")
    for a, b in zip(config.stages, config.stages[1:]):
        if b.channels < a.channels:
            raise ConfigError("stage channels must not shrink with depth")
    return SATNet(config)


def forward_segmentation(cloud, model: SATNet) -> Tensor:
    """Logits [N, classes] for a :class:`~satseg.data.PointCloud`."""
    if len(cloud) < 1:
        raise ValueError("empty point cloud")
    return model(cloud.coords, cloud.features())


def apply_variant(model: SATNet, switch: str) -> SATNet:
    """A new model with one ablation switch flipped.

    Parameters whose name and shape survive the switch are copied over, so a
    full checkpoint can seed an ablation run.
    """
    new = SATNet(model.config.with_switch(switch))
    own = dict(model.named_parameters())
    for name, p in new.named_parameters():
        src = own.get(name)
        if src is not None and src.shape == p.shape:
            p.data = src.data.copy()
    return new


def attention_macs(config: ModelConfig, stage: StageConfig, index) -> int:
    """Attention MACs one block of ``stage`` performs, under the model's variant."""
    m = count_attention_macs(stage.channels, index)
    if config.mga == "point_only":
        return m["baseline_full_point"]
    if config.shunted == "sum":
        return 2 * (m["point_branch"] + m["voxel_branch"])
    return m["point_branch"] + m["voxel_branch"]
