"""Dual-attention fusion block: local conv branch + channel self-attention.

The block keeps the input shape.  Branch one extracts local detail:
1x1 conv, per-group 3x3 depthwise convs, channel shuffle, then a
depthwise-separable 3x3.  Branch two builds Q/K/V with a 1x1 conv to 3C
channels plus a shared 3x3 depthwise, attends over the C x C channel map,
projects through a depthwise-separable 3x3 and adds the input back.  The
two branch outputs are summed elementwise.

The attention map is channel-by-channel (C x C), not spatial: with K as
(C, HW) and Q as (HW, C) per batch item, scores = softmax(K@Q / |a|) row
by row and the result is V @ scores.  ``a`` is a learnable scalar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .layers import ConvParams, DwSepParams
from .ops import (ConvSpec, CostReport, absval, add, channel_shuffle, concat,
                  div, matmul, narrow, reshape, softmax, transpose)
from .tensor import Rng, Tape, Tensor

__all__ = ["DafmConfig", "DafmWeights", "init_dafm", "dafm_local_branch",
           "dafm_attention", "dafm_context_branch", "dafm_forward", "dafm_cost"]


@dataclass(frozen=True)
class DafmConfig:
    channels: int
    shuffle_groups: int = 4
    attn_scale_init: float | None = None  # defaults to sqrt(channels)

    def __post_init__(self):
        if self.channels % self.shuffle_groups:
            raise ValueError(f"channels ({self.channels}) not divisible by "
                             f"shuffle groups ({self.shuffle_groups})")

    @property
    def scale_init(self) -> float:
        if self.attn_scale_init is not None:
            return self.attn_scale_init
        return math.sqrt(self.channels)


@dataclass
class DafmWeights:
    local_pw: ConvParams            # 1x1, C -> C
    local_group_dw: list[ConvParams]  # 3x3 depthwise per shuffle group
    local_out: DwSepParams          # depthwise-separable 3x3, C -> C
    qkv_pw: ConvParams              # 1x1, C -> 3C
    qkv_dw: ConvParams              # 3x3 depthwise on 3C
    attn_out: DwSepParams           # depthwise-separable 3x3, C -> C
    attn_scale: Tensor              # scalar a, used as |a|

    def entries(self, path: str = "dafm"):
        yield from self.local_pw.entries(path + ".local_pw")
        for i, dw in enumerate(self.local_group_dw):
            yield from dw.entries(f"{path}.local_group_dw.{i}")
        yield from self.local_out.entries(path + ".local_out")
        yield from self.qkv_pw.entries(path + ".qkv_pw")
        yield from self.qkv_dw.entries(path + ".qkv_dw")
        yield from self.attn_out.entries(path + ".attn_out")
        yield path + ".attn_scale", self.attn_scale


def init_dafm(cfg: DafmConfig, rng: Rng) -> DafmWeights:
    c, g = cfg.channels, cfg.shuffle_groups
    cg = c // g
    local_pw = ConvParams.init(ConvSpec(c, c, 1, 1), rng)
    group_dw = [ConvParams.init(ConvSpec(cg, cg, 3, 3, pad_h=1, pad_w=1, groups=cg), rng)
                for _ in range(g)]
    local_out = DwSepParams.init(c, c, 3, rng)
    qkv_pw = ConvParams.init(ConvSpec(c, 3 * c, 1, 1), rng)
    qkv_dw = ConvParams.init(ConvSpec(3 * c, 3 * c, 3, 3, pad_h=1, pad_w=1,
                                      groups=3 * c), rng)
    attn_out = DwSepParams.init(c, c, 3, rng)
    return DafmWeights(local_pw, group_dw, local_out, qkv_pw, qkv_dw, attn_out,
                       Tensor.scalar(cfg.scale_init))


def dafm_local_branch(y: Tensor, cfg: DafmConfig, w: DafmWeights,
                      tape: Tape | None = None) -> Tensor:
    """1x1 conv, grouped depthwise 3x3, shuffle, depthwise-separable 3x3."""
    c, g = cfg.channels, cfg.shuffle_groups
    if y.dims[1] != c:
        raise ValueError(f"channel mismatch: input has {y.dims[1]}, config {c}")
    cg = c // g
    t = w.local_pw(y, tape)
    parts = [w.local_group_dw[i](narrow(t, 1, i * cg, cg, tape), tape)
             for i in range(g)]
    t = concat(parts, 1, tape)
    t = channel_shuffle(t, g, tape)
    return w.local_out(t, tape)


def dafm_attention(q: Tensor, k: Tensor, v: Tensor, scale: Tensor,
                   tape: Tape | None = None) -> Tensor:
    """q, v: (N, HW, C); k: (N, C, HW).  Returns V @ softmax(K@Q / |scale|),
    where the softmax normalizes each row of the C x C score map."""
    logits = matmul(k, q, tape)
    logits = div(logits, absval(scale, tape), tape)
    scores = softmax(logits, axis=2, tape=tape)
    return matmul(v, scores, tape)


def dafm_context_branch(y: Tensor, cfg: DafmConfig, w: DafmWeights,
                        tape: Tape | None = None) -> Tensor:
    """Channel self-attention branch with residual input add."""
    n, c, h, wd = y.dims
    hw = h * wd
    qkv = w.qkv_dw(w.qkv_pw(y, tape), tape)
    q = transpose(reshape(narrow(qkv, 1, 0, c, tape), (n, c, hw), tape),
                  (0, 2, 1), tape)
    k = reshape(narrow(qkv, 1, c, c, tape), (n, c, hw), tape)
    v = transpose(reshape(narrow(qkv, 1, 2 * c, c, tape), (n, c, hw), tape),
                  (0, 2, 1), tape)
    attended = dafm_attention(q, k, v, w.attn_scale, tape)
    attended = reshape(transpose(attended, (0, 2, 1), tape), (n, c, h, wd), tape)
    return add(w.attn_out(attended, tape), y, tape)


def dafm_forward(y: Tensor, cfg: DafmConfig, w: DafmWeights,
                 tape: Tape | None = None) -> Tensor:
    """Sum of the local and the attention branches; preserves input dims."""
    return add(dafm_local_branch(y, cfg, w, tape),
               dafm_context_branch(y, cfg, w, tape), tape)


def dafm_cost(cfg: DafmConfig, w: DafmWeights, out_h: int, out_w: int,
              path: str = "dafm") -> CostReport:
    """Per-layer cost entries; the two attention matmuls scale with C^2 * HW."""
    c = cfg.channels
    hw = out_h * out_w
    rep = CostReport()
    rep.entries.append(w.local_pw.cost(path + ".local_pw", out_h, out_w))
    for i, dw in enumerate(w.local_group_dw):
        rep.entries.append(dw.cost(f"{path}.local_group_dw.{i}", out_h, out_w))
    rep.entries.extend(w.local_out.cost(path + ".local_out", out_h, out_w))
    rep.entries.append(w.qkv_pw.cost(path + ".qkv_pw", out_h, out_w))
    rep.entries.append(w.qkv_dw.cost(path + ".qkv_dw", out_h, out_w))
    rep.entries.extend(w.attn_out.cost(path + ".attn_out", out_h, out_w))
    rep.add(path + ".attention.scores", 0, 2 * c * c * hw)
    rep.add(path + ".attention.apply", 0, 2 * c * c * hw)
    rep.add(path + ".attn_scale", 1, 0)
    return rep
