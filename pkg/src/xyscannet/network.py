"""Three-level asymmetric encoder-decoder assembled from the blocks.

Encoder levels hold only gated feed-forward blocks; decoder levels stack
(VSSM, GDFN) pairs whose scanner kind alternates intra/inter. Cross-level
fusion output is added to the decoder input of every fused level, and the
network predicts a residual that is added to the blurred input.

Weights live in a flat ordered ``dict`` keyed by hierarchical paths such as
``level2/dec/block1/vssm/w_point``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import blocks
from .autodiff import conv2d, ops, pixel_shuffle
from .autodiff.tensor import Tensor, as_tensor
from .errors import ConfigError, DomainError, ShapeError

SCAN_MODES = ("interleaved", "intra", "inter")
FUSIONS = ("dgff", "aff", "none")
DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class ModelConfig:
    base_channels: int = 144
    blocks_per_level: tuple = (3, 3, 6)
    state_dim: int = 16
    gdfn_ratio: float = blocks.GDFN_RATIO
    level_channel_multipliers: tuple = (1, 2, 4)
    seed: int = 0
    scan_mode: str = "interleaved"
    fusion: str = "dgff"
    fusion_levels: tuple = (1, 2)
    out_proj: bool = True
    dtype: str = "f32"

    def __post_init__(self):
        self.blocks_per_level = tuple(int(n) for n in self.blocks_per_level)
        self.level_channel_multipliers = tuple(int(m) for m in self.level_channel_multipliers)
        self.fusion_levels = tuple(int(l) for l in self.fusion_levels)
        self.validate()

    def validate(self) -> None:
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError("base_channels", f"must be an even integer >= 2, got {self.base_channels}")
        if len(self.blocks_per_level) != 3 or min(self.blocks_per_level) < 1:
            raise ConfigError("blocks_per_level", f"need three counts >= 1, got {self.blocks_per_level}")
        if len(self.level_channel_multipliers) != 3 or min(self.level_channel_multipliers) < 1:
            raise ConfigError("level_channel_multipliers", f"need three positive ints, got {self.level_channel_multipliers}")
        if self.state_dim < 1:
            raise ConfigError("state_dim", "must be >= 1")
        if not self.gdfn_ratio > 0:
            raise ConfigError("gdfn_ratio", "must be > 0")
        if self.scan_mode not in SCAN_MODES:
            raise ConfigError("scan_mode", f"must be one of {SCAN_MODES}")
        if self.fusion not in FUSIONS:
            raise ConfigError("fusion", f"must be one of {FUSIONS}")
        if any(l not in (1, 2, 3) for l in self.fusion_levels):
            raise ConfigError("fusion_levels", f"levels must be in 1..3, got {self.fusion_levels}")
        if self.dtype not in DTYPES:
            raise ConfigError("dtype", f"must be one of {tuple(DTYPES)}")

    @property
    def channels(self) -> tuple:
        return tuple(self.base_channels * m for m in self.level_channel_multipliers)

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown model config key")
        return cls(**dict(d))


@dataclass
class BlockInfo:
    path: str
    kind: str
    channels: int
    params: int

    def __str__(self) -> str:
        return f"{self.path:<28} {self.kind:<12} C={self.channels:<5} params={self.params}"


@dataclass
class Architecture:
    blocks: list = field(default_factory=list)

    def dump(self) -> str:
        return "\n".join(str(b) for b in self.blocks)


def decoder_kinds(n: int, mode: str = "interleaved") -> list:
    """Scanner kind per decoder block; interleaving starts with intra."""
    if mode == "interleaved":
        return ["intra" if i % 2 == 0 else "inter" for i in range(n)]
    return [mode] * n


def _fusion_sources(level: int) -> tuple:
    return tuple(l for l in (1, 2, 3) if l != level)


def _add(weights: dict, arch: Architecture, path: str, kind: str, channels: int, obj) -> None:
    flat = blocks.flatten(obj, path + "/")
    for k in flat:
        if k in weights:
            raise KeyError(f"duplicate weight key {k}")
    weights.update(flat)
    arch.blocks.append(BlockInfo(path, kind, channels, sum(int(np.size(v)) for v in flat.values())))


def build_model(cfg: ModelConfig):
    """Initialize weights for ``cfg``; returns ``(weights, architecture)``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.np_dtype
    ch = cfg.channels
    weights: dict = {}
    arch = Architecture()

    _add(weights, arch, "embed", "conv3x3", ch[0], blocks.init_conv3(rng, 3, ch[0], dtype=dt))
    for lvl in (1, 2, 3):
        C = ch[lvl - 1]
        for i in range(cfg.blocks_per_level[lvl - 1]):
            _add(weights, arch, f"level{lvl}/enc/block{i}/gdfn", "gdfn", C, blocks.init_gdfn(rng, C, cfg.gdfn_ratio, dt))
        if lvl < 3:
            _add(weights, arch, f"level{lvl}/down", "down", ch[lvl], blocks.init_conv3(rng, C, ch[lvl], dtype=dt))

    for lvl in (3, 2, 1):
        C = ch[lvl - 1]
        if cfg.fusion != "none" and lvl in cfg.fusion_levels:
            o1, o2 = _fusion_sources(lvl)
            init = blocks.init_dgff if cfg.fusion == "dgff" else blocks.init_aff
            _add(weights, arch, f"level{lvl}/fusion/{cfg.fusion}", cfg.fusion, C, init(rng, C, ch[o1 - 1], ch[o2 - 1], dt))
        for i, kind in enumerate(decoder_kinds(cfg.blocks_per_level[lvl - 1], cfg.scan_mode)):
            _add(weights, arch, f"level{lvl}/dec/block{i}/vssm", f"vssm-{kind}", C,
                 blocks.init_vssm(rng, C, cfg.state_dim, cfg.out_proj, dt))
            _add(weights, arch, f"level{lvl}/dec/block{i}/gdfn", "gdfn", C, blocks.init_gdfn(rng, C, cfg.gdfn_ratio, dt))
        if lvl > 1:
            _add(weights, arch, f"level{lvl}/up", "up", ch[lvl - 2],
                 blocks.init_pointwise(rng, C, 4 * ch[lvl - 2], bias=False, dtype=dt))

    out = blocks.Conv3(np.zeros((3, 3, ch[0], 3), dtype=dt), np.zeros(3, dtype=dt))
    _add(weights, arch, "output", "conv3x3", 3, out)
    return weights, arch


def count_params(weights: Mapping) -> int:
    return int(sum(int(np.size(v.data if isinstance(v, Tensor) else v)) for v in weights.values()))


def _sub(weights: Mapping, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in weights.items() if k.startswith(prefix)}


def _get(weights, cls, prefix):
    return blocks.unflatten(cls, _sub(weights, prefix + "/"))


def padded_extent(n: int, multiple: int = 4) -> int:
    return -(-n // multiple) * multiple


def forward(weights: Mapping, cfg: ModelConfig, image) -> Tensor:
    """Restore a batch of blurred images (B, H, W, 3) in [0, 1]."""
    x = as_tensor(image)
    if x.ndim != 4 or x.shape[3] != 3:
        raise ShapeError(f"expected (B, H, W, 3) input, got {x.shape}")
    B, H, W, _ = x.shape
    if H < 8 or W < 8:
        raise ShapeError(f"input must be at least 8x8, got {H}x{W}")
    if not np.all(np.isfinite(x.data)):
        raise DomainError("non-finite input image")
    Hp, Wp = padded_extent(H), padded_extent(W)
    xp = ops.reflect_pad(x, ((0, Hp - H), (0, Wp - W)))

    def conv3(h, path, stride=1):
        c = _get(weights, blocks.Conv3, path)
        return conv2d(h, c.w, c.b, mode="full3x3", stride=stride)

    h = conv3(xp, "embed")
    enc = {}
    for lvl in (1, 2, 3):
        for i in range(cfg.blocks_per_level[lvl - 1]):
            h = blocks.gdfn_forward(h, _get(weights, blocks.GdfnWeights, f"level{lvl}/enc/block{i}/gdfn"))
        enc[lvl] = h
        if lvl < 3:
            h = conv3(h, f"level{lvl}/down", stride=2)

    h = enc[3]
    for lvl in (3, 2, 1):
        if lvl < 3:
            up = _get(weights, blocks.Pointwise, f"level{lvl + 1}/up")
            h = pixel_shuffle(blocks.pointwise(h, up), 2)
        if cfg.fusion != "none" and lvl in cfg.fusion_levels:
            o1, o2 = _fusion_sources(lvl)
            path = f"level{lvl}/fusion/{cfg.fusion}"
            if cfg.fusion == "dgff":
                fused = blocks.dgff_forward(enc[lvl], enc[o1], enc[o2], _get(weights, blocks.FusionWeights, path))
            else:
                fused = blocks.aff_forward(enc[lvl], enc[o1], enc[o2], _get(weights, blocks.AffWeights, path))
            h = ops.add(h, fused)
        elif lvl < 3:
            h = ops.add(h, enc[lvl])
        for i, kind in enumerate(decoder_kinds(cfg.blocks_per_level[lvl - 1], cfg.scan_mode)):
            h = blocks.vssm_forward(h, _get(weights, blocks.VssmWeights, f"level{lvl}/dec/block{i}/vssm"), kind)
            h = blocks.gdfn_forward(h, _get(weights, blocks.GdfnWeights, f"level{lvl}/dec/block{i}/gdfn"))

    residual = conv3(h, "output")
    restored = ops.add(xp, residual)
    return ops.crop(restored, 0, 0, H, W)


def restore(weights: Mapping, cfg: ModelConfig, image: np.ndarray) -> np.ndarray:
    """Inference helper for a single (H, W, 3) or batched array."""
    arr = np.asarray(image, dtype=cfg.np_dtype)
    single = arr.ndim == 3
    out = forward(weights, cfg, arr[None] if single else arr).data
    return out[0] if single else out
