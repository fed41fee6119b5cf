"""Multi-granularity attention, the re-attention gate and the assembled block.

The fine branch runs point self-attention inside base windows.  The coarse
branch lets each point query voxel tokens (mean-pooled member features passed
through a small MLP) inside its larger voxel window, so no devoxelization is
needed.  With the shunted layout the two branches own disjoint halves of the
heads: fine first, coarse second.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .config import StageConfig
from .geometry import WindowIndex, canonical_order, stage_window_index
from .numcore import MLP, LayerNorm, Linear, Module, PairList, Tensor


@dataclass(frozen=True)
class BlockGeometry:
    """Everything a block needs that depends only on coordinates."""

    coords: np.ndarray
    index: WindowIndex
    point_pairs: PairList
    voxel_pairs: PairList

    @classmethod
    def build(cls, coords, stage: StageConfig, shift: bool = False, lite: bool = False) -> "BlockGeometry":
        coords = np.asarray(coords, dtype=np.float64)
        index = stage_window_index(coords, stage, shift=shift, lite=lite)
        return cls(coords=coords, index=index, point_pairs=index.point_pairs(), voxel_pairs=index.voxel_pairs())

    def pair_offsets(self) -> np.ndarray:
        """Key minus query coordinates for each fine-branch pair."""
        p = self.point_pairs
        return self.coords[p.k_idx] - self.coords[p.q_idx]


class MGA(Module):
    """Two-branch attention layer.

    ``shunted="concat"``: each branch has H/2 heads of width d and the outputs
    are concatenated.  ``shunted="sum"``: each branch runs all H heads at full
    width and the outputs are added.  ``mode="point_only"`` drops the voxel
    branch and runs full-width point attention.
    """

    def __init__(self, channels: int, heads: int, rng: np.random.Generator, shunted: str = "concat",
                 mode: str = "full", out_proj: bool = True, rel_pos_bias: bool = False):
        if heads % 2:
            raise ValueError("MGA needs an even head count")
        self.channels = channels
        self.heads = heads
        self.head_dim = channels // heads
        self.mode = mode
        self.shunted = shunted
        split = mode == "full" and shunted == "concat"
        self.branch_heads = heads // 2 if split else heads
        width = self.branch_heads * self.head_dim

        self.ln_point = LayerNorm(channels)
        self.w2q = Linear(channels, width, rng, bias=False)
        self.w2k = Linear(channels, width, rng, bias=False)
        self.w2v = Linear(channels, width, rng, bias=False)
        # voxel branch; ``phi = None`` makes the voxel MLP an identity
        self.phi = self.ln_voxel = self.w1q = self.w1k = self.w1v = None
        if mode == "full":
            self.phi = MLP(channels, channels, channels, rng)
            self.ln_voxel = LayerNorm(channels)
            self.w1q = Linear(channels, width, rng, bias=False)
            self.w1k = Linear(channels, width, rng, bias=False)
            self.w1v = Linear(channels, width, rng, bias=False)
        self.out = Linear(channels, channels, rng) if out_proj else None
        self.rpb = MLP(3, 16, self.branch_heads, rng) if rel_pos_bias else None

    def voxel_tokens(self, feats: Tensor, geom: BlockGeometry) -> Tensor:
        pooled = nc.segmented_reduce(feats, geom.index.voxels, "mean")
        return pooled if self.phi is None else self.phi(pooled)

    def pvca(self, feats: Tensor, voxel_feats: Tensor, geom: BlockGeometry, normed: Tensor | None = None) -> Tensor:
        """Point queries against the voxel tokens of each point's voxel window."""
        f = self.ln_point(feats) if normed is None else normed
        v = self.ln_voxel(voxel_feats)
        return nc.segment_attention(self.w1q(f), self.w1k(v), self.w1v(v), geom.voxel_pairs, self.branch_heads)

    def coarse(self, feats: Tensor, geom: BlockGeometry, normed: Tensor | None = None) -> Tensor:
        return self.pvca(feats, self.voxel_tokens(feats, geom), geom, normed)

    def fine(self, feats: Tensor, geom: BlockGeometry, normed: Tensor | None = None) -> Tensor:
        f = self.ln_point(feats) if normed is None else normed
        bias = None
        if self.rpb is not None:
            bias = self.rpb(Tensor(geom.pair_offsets(), dtype=f.dtype))
        return nc.segment_attention(self.w2q(f), self.w2k(f), self.w2v(f), geom.point_pairs,
                                    self.branch_heads, bias=bias)

    def mixed(self, feats: Tensor, geom: BlockGeometry) -> Tensor:
        """Branch outputs combined, before the output projection."""
        f = self.ln_point(feats)
        fine = self.fine(feats, geom, f)
        if self.mode == "point_only":
            return fine
        coarse = self.coarse(feats, geom, f)
        if self.shunted == "sum":
            return nc.add(fine, coarse)
        return nc.concat_lastdim(fine, coarse)

    def forward(self, feats: Tensor, geom: BlockGeometry) -> Tensor:
        mixed = self.mixed(feats, geom)
        return mixed if self.out is None else self.out(mixed)


class ReAttention(Module):
    """Per-point, per-head sigmoid gate computed from the block input."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator, zero_init: bool = False):
        self.heads = heads
        self.head_dim = channels // heads
        self.gamma = MLP(channels, heads, heads, rng, zero_last=zero_init)

    def gate(self, block_input: Tensor) -> Tensor:
        return nc.sigmoid(self.gamma(block_input))

    def forward(self, block_input: Tensor, mga_out: Tensor) -> tuple[Tensor, Tensor]:
        alpha = self.gate(block_input)
        return nc.mul(nc.repeat_cols(alpha, self.head_dim), mga_out), alpha


class SATBlock(Module):
    """Pre-norm residual block: gated MGA, then a 4x GELU feed-forward."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator, *, re_attention: bool = True,
                 shunted: str = "concat", mode: str = "full", out_proj: bool = True,
                 rel_pos_bias: bool = False, zero_init_gate: bool = False):
        self.mga = MGA(channels, heads, rng, shunted=shunted, mode=mode, out_proj=out_proj,
                       rel_pos_bias=rel_pos_bias)
        self.reattn = ReAttention(channels, heads, rng, zero_init_gate) if re_attention else None
        self.ln_ffn = LayerNorm(channels)
        self.ffn = MLP(channels, 4 * channels, channels, rng)
        self._capture = False
        self._last_gate: np.ndarray | None = None

    def forward(self, feats: Tensor, geom: BlockGeometry) -> Tensor:
        attn = self.mga(feats, geom)
        if self.reattn is not None:
            attn, alpha = self.reattn(feats, attn)
            if self._capture:
                self._last_gate = alpha.data.copy()
        x = nc.add(feats, attn)
        return nc.add(x, self.ffn(self.ln_ffn(x)))


def sat_block(block: SATBlock, feats: Tensor, coords, stage: StageConfig, shift: bool = False,
              lite: bool = False) -> Tensor:
    """Run one block on an arbitrary point order.

    Points are processed in canonical (coordinate, feature) order and the
    result is mapped back, so permuting the input permutes the output rows
    bit-exactly.
    """
    coords = np.asarray(coords, dtype=np.float64)
    order = canonical_order(coords, feats.data)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    geom = BlockGeometry.build(coords[order], stage, shift=shift, lite=lite)
    out = block(nc.gather_rows(feats, order), geom)
    return nc.gather_rows(out, inverse)


def count_attention_macs(channels: int, index: WindowIndex) -> dict[str, int]:
    """Multiply-accumulate counts of one attention product (QK^T; AV costs the same).

    point_branch: sum_w n_w^2 * C/2 over base windows
    voxel_branch: sum_W n_W * v_W * C/2 over voxel windows
    baseline_full_point: sum_w n_w^2 * C (full-width point attention)
    """
    n_base = index.base.counts.astype(np.int64)
    n_win = index.window.counts.astype(np.int64)
    v_win = index.voxels_per_window().astype(np.int64)
    half = channels // 2
    return {
        "point_branch": int((n_base**2).sum() * half),
        "voxel_branch": int((n_win * v_win).sum() * half),
        "baseline_full_point": int((n_base**2).sum() * channels),
    }
