"""Stage and model configuration, including the published stage tables."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StageConfig:
    """One encoder stage.

    ``ratio`` is the linear size of the coarse (voxel) window in base windows,
    so the coarse window holds ``ratio**3`` base windows.
    """

    channels: int
    blocks: int
    base_window: float
    voxel_size: float
    heads: int
    ratio: int = 2
    fine_ratio: int = 1
    shift: tuple[bool, ...] | None = None

    def __post_init__(self):
        if self.blocks < 1:
            raise ConfigError("a stage needs at least one block")
        if self.heads < 2 or self.heads % 2:
            raise ConfigError(f"head count must be even, got {self.heads}")
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if int(self.ratio) != self.ratio or self.ratio < 1 or self.fine_ratio != 1:
            raise ConfigError("window ratios must be positive integers with fine_ratio == 1")
        if self.base_window <= 0 or self.voxel_size <= 0:
            raise ConfigError("window and voxel sizes must be positive")
        if self.shift is not None and len(self.shift) != self.blocks:
            raise ConfigError("one shift flag per block")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def voxel_window(self) -> float:
        return self.ratio * self.base_window

    def shift_flags(self) -> tuple[bool, ...]:
        """Per-block window shift; odd-indexed blocks shift by default."""
        if self.shift is not None:
            return self.shift
        return tuple(i % 2 == 1 for i in range(self.blocks))


SWITCHES = ("no-reattention", "sum", "point-only", "lite-mga")

VARIANTS: dict[str, tuple[str, ...]] = {
    "full": (),
    "no-reattention": ("no-reattention",),
    "no-reattention-sum": ("no-reattention", "sum"),
    "no-reattention-point-only": ("no-reattention", "point-only"),
    "lite-mga": ("no-reattention", "lite-mga"),
}


@dataclass(frozen=True)
class ModelConfig:
    stages: tuple[StageConfig, ...]
    in_channels: int = 6
    num_classes: int = 7
    downsample_ratio: int = 4
    knn_k: int = 16
    re_attention: bool = True
    shunted: str = "concat"          # "concat" | "sum"
    mga: str = "full"                # "full" | "point_only"
    lite_mga: bool = False
    out_proj: bool = True
    rel_pos_bias: bool = False
    zero_init_gate: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("at least one stage")
        if self.shunted not in ("concat", "sum"):
            raise ConfigError(f"unknown shunted mode {self.shunted!r}")
        if self.mga not in ("full", "point_only"):
            raise ConfigError(f"unknown mga mode {self.mga!r}")
        if self.num_classes < 1 or self.in_channels < 1:
            raise ConfigError("class and input counts must be positive")
        if self.downsample_ratio < 1 or self.knn_k < 1:
            raise ConfigError("downsample ratio and k must be positive")

    def with_switch(self, switch: str) -> "ModelConfig":
        if switch == "no-reattention":
            return dataclasses.replace(self, re_attention=False)
        if switch == "sum":
            return dataclasses.replace(self, shunted="sum")
        if switch == "point-only":
            return dataclasses.replace(self, mga="point_only")
        if switch == "lite-mga":
            return dataclasses.replace(self, lite_mga=True)
        raise ConfigError(f"unknown variant switch {switch!r}; expected one of {SWITCHES}")

    def with_variant(self, name: str) -> "ModelConfig":
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
        cfg = self
        for sw in VARIANTS[name]:
            cfg = cfg.with_switch(sw)
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        stages = []
        for s in d.pop("stages"):
            s = dict(s)
            if s.get("shift") is not None:
                s["shift"] = tuple(bool(x) for x in s["shift"])
            stages.append(StageConfig(**s))
        return cls(stages=tuple(stages), **d)


def _stages(channels, blocks, bw, vox, ratio, heads=None) -> tuple[StageConfig, ...]:
    heads = heads or [c // 8 for c in channels]
    return tuple(
        StageConfig(channels=c, blocks=n, base_window=w, voxel_size=v, heads=h, ratio=ratio)
        for c, n, w, v, h in zip(channels, blocks, bw, vox, heads)
    )


def s3dis_stages() -> tuple[StageConfig, ...]:
    return _stages((48, 96, 192, 384), (2, 2, 6, 2), (0.16, 0.32, 0.64, 1.28), (0.08, 0.16, 0.16, 0.32), 2)


def scannet_stages() -> tuple[StageConfig, ...]:
    return _stages((48, 96, 192, 384, 384), (3, 6, 6, 6, 3), (0.1, 0.2, 0.4, 0.8, 1.6), (0.1, 0.2, 0.2, 0.4, 0.4), 3)


def desk_stages() -> tuple[StageConfig, ...]:
    # window sizes scaled up for ~2k-point rooms
    return _stages((16, 32), (1, 1), (0.5, 1.0), (0.25, 0.5), 2, heads=(2, 4))


PRESETS = {
    "s3dis": s3dis_stages,
    "scannet": scannet_stages,
    "desk": desk_stages,
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; expected one of {sorted(PRESETS)}")
    return ModelConfig(stages=PRESETS[name](), **overrides)
