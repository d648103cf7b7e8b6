"""Closed-form multiply-accumulate (MAC) accounting.

Counting rules:

* convolution: ``Ho*Wo*k*k*C_in*C_out`` (depthwise: ``Ho*Wo*k*k*C``);
* S6 layer on ``L`` steps of ``D`` channels with ``N`` states: input
  projections ``L*D*(D + 2N)`` plus ``L*D*N`` for the scan itself;
* global average pooling: ``L*D`` adds;
* bias adds, normalization, activations, gating products and bilinear
  resampling are not counted.
"""

from __future__ import annotations

import numpy as np

from . import blocks
from .network import ModelConfig, decoder_kinds, padded_extent


def conv_macs(H: int, W: int, c_in: int, c_out: int, k: int = 1, stride: int = 1, depthwise: bool = False) -> int:
    Ho, Wo = (H // stride, W // stride) if stride > 1 else (H, W)
    if depthwise:
        return Ho * Wo * k * k * c_in
    return Ho * Wo * k * k * c_in * c_out


def scan_macs(L: int, D: int, N: int) -> int:
    return L * D * N


def s6_macs(L: int, D: int, N: int) -> int:
    return L * D * (D + 2 * N) + scan_macs(L, D, N)


def gap_macs(L: int, D: int) -> int:
    return L * D


def scanner_macs(C: int, N: int, H: int, W: int, kind: str) -> int:
    """Both branches of a dual scanner over ``C`` channels (C/2 per branch)."""
    D = C // 2
    if kind == "intra":
        return 2 * s6_macs(H * W, D, N)
    if kind == "inter":
        return 2 * gap_macs(H * W, D) + s6_macs(H, D, N) + s6_macs(W, D, N)
    if kind == "flatten4way":
        return 4 * s6_macs(H * W, C, N)
    raise ValueError(f"unknown scanner kind {kind!r}")


def scanner_scan_macs(C: int, N: int, H: int, W: int, kind: str) -> int:
    """Recurrence-only MACs (no projections), per block."""
    D = C // 2
    if kind == "intra":
        return 2 * scan_macs(H * W, D, N)
    if kind == "inter":
        return scan_macs(H, D, N) + scan_macs(W, D, N)
    if kind == "flatten4way":
        return 4 * scan_macs(H * W, C, N)
    raise ValueError(f"unknown scanner kind {kind!r}")


def vssm_macs(C: int, N: int, H: int, W: int, kind: str, out_proj: bool = True) -> int:
    m = conv_macs(H, W, C, 2 * C) + conv_macs(H, W, 2 * C, 2 * C, k=3, depthwise=True)
    m += scanner_macs(C, N, H, W, kind)
    if out_proj:
        m += conv_macs(H, W, C, C)
    return m


def gdfn_macs(C: int, H: int, W: int, ratio: float = blocks.GDFN_RATIO) -> int:
    h = blocks.gdfn_hidden(C, ratio)
    return conv_macs(H, W, C, 2 * h) + conv_macs(H, W, 2 * h, 2 * h, k=3, depthwise=True) + conv_macs(H, W, h, C)


def dgff_macs(c_cur: int, c_oth1: int, c_oth2: int, H: int, W: int) -> int:
    proj = conv_macs(H, W, c_cur, c_cur) + conv_macs(H, W, c_oth1, c_cur) + conv_macs(H, W, c_oth2, c_cur)
    return proj + conv_macs(H, W, 2 * c_cur, c_cur)


def aff_macs(c_cur: int, c_oth1: int, c_oth2: int, H: int, W: int) -> int:
    return conv_macs(H, W, c_cur + c_oth1 + c_oth2, c_cur) + conv_macs(H, W, c_cur, c_cur, k=3)


def _level_extent(H: int, W: int, lvl: int) -> tuple:
    s = 2 ** (lvl - 1)
    return H // s, W // s


def fusion_macs(cfg: ModelConfig, H: int, W: int, method: str = None) -> int:
    method = method or cfg.fusion
    if method == "none":
        return 0
    ch = cfg.channels
    Hp, Wp = padded_extent(H), padded_extent(W)
    total = 0
    for lvl in cfg.fusion_levels:
        o1, o2 = (l for l in (1, 2, 3) if l != lvl)
        h, w = _level_extent(Hp, Wp, lvl)
        fn = dgff_macs if method == "dgff" else aff_macs
        total += fn(ch[lvl - 1], ch[o1 - 1], ch[o2 - 1], h, w)
    return total


def fusion_params(cfg: ModelConfig, method: str = None) -> int:
    method = method or cfg.fusion
    if method == "none":
        return 0
    rng = np.random.default_rng(0)
    ch = cfg.channels
    init = blocks.init_dgff if method == "dgff" else blocks.init_aff
    total = 0
    for lvl in cfg.fusion_levels:
        o1, o2 = (l for l in (1, 2, 3) if l != lvl)
        w = init(rng, ch[lvl - 1], ch[o1 - 1], ch[o2 - 1])
        total += sum(int(np.size(v)) for v in blocks.flatten(w).values())
    return total


def count_flops(cfg: ModelConfig, H: int, W: int) -> int:
    """Whole-network MACs for one H x W image (after padding to a multiple of 4)."""
    return sum(flop_breakdown(cfg, H, W).values())


def flop_breakdown(cfg: ModelConfig, H: int, W: int) -> dict:
    ch = cfg.channels
    Hp, Wp = padded_extent(H), padded_extent(W)
    parts = {"embed": 0, "encoder": 0, "down": 0, "decoder_vssm": 0, "decoder_gdfn": 0, "up": 0, "fusion": 0, "output": 0}
    parts["embed"] = conv_macs(Hp, Wp, 3, ch[0], k=3)
    for lvl in (1, 2, 3):
        h, w = _level_extent(Hp, Wp, lvl)
        C = ch[lvl - 1]
        parts["encoder"] += cfg.blocks_per_level[lvl - 1] * gdfn_macs(C, h, w, cfg.gdfn_ratio)
        if lvl < 3:
            parts["down"] += conv_macs(h, w, C, ch[lvl], k=3, stride=2)
        for kind in decoder_kinds(cfg.blocks_per_level[lvl - 1], cfg.scan_mode):
            parts["decoder_vssm"] += vssm_macs(C, cfg.state_dim, h, w, kind, cfg.out_proj)
            parts["decoder_gdfn"] += gdfn_macs(C, h, w, cfg.gdfn_ratio)
        if lvl > 1:
            parts["up"] += conv_macs(h, w, C, 4 * ch[lvl - 2])
    parts["fusion"] = fusion_macs(cfg, H, W)
    parts["output"] = conv_macs(Hp, Wp, ch[0], 3, k=3)
    return parts
