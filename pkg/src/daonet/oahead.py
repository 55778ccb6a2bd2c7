"""Occlusion-aware gating block and the decoupled detection head using it.

The gate path runs multi-kernel depthwise convs (each with a residual add
of the input), fuses them with a pointwise 1x1, pools to a channel
descriptor and maps it through a two-layer bottleneck to per-channel
sigmoid weights.  The block output is the input scaled by that gate, so
spatial structure is untouched and every output magnitude is damped.
"""

from __future__ import annotations

from dataclasses import dataclass

from .layers import ConvParams, DwSepParams, LinearParams
from .ops import (ConvSpec, CostReport, LinearSpec, add, concat,
                  global_avg_pool, mul, reshape, sigmoid, silu)
from .tensor import Rng, Tape, Tensor

__all__ = ["OaheadConfig", "OaheadWeights", "init_oahead", "oahead_forward",
           "oahead_gate", "oahead_cost", "HeadConfig", "HeadBranchWeights",
           "init_head_branch", "head_branch_forward", "head_branch_cost"]


@dataclass(frozen=True)
class OaheadConfig:
    channels: int
    dw_kernels: tuple[int, ...] = (3, 5)
    fc_reduction: int = 4

    def __post_init__(self):
        if any(k % 2 == 0 for k in self.dw_kernels):
            raise ValueError("depthwise kernels must be odd")
        if self.channels // self.fc_reduction < 1:
            raise ValueError("fc reduction leaves no hidden features")

    @property
    def hidden(self) -> int:
        return self.channels // self.fc_reduction


@dataclass
class OaheadWeights:
    dw: list[ConvParams]    # one depthwise conv per kernel size
    pw: ConvParams          # 1x1, len(kernels)*C -> C
    fc1: LinearParams       # C -> C/r
    fc2: LinearParams       # C/r -> C

    def entries(self, path: str):
        for k, conv in zip(self._kernels(), self.dw):
            yield from conv.entries(f"{path}.dw_k{k}")
        yield from self.pw.entries(path + ".pw")
        yield from self.fc1.entries(path + ".fc1")
        yield from self.fc2.entries(path + ".fc2")

    def _kernels(self):
        return [c.spec.kernel_h for c in self.dw]


def init_oahead(cfg: OaheadConfig, rng: Rng) -> OaheadWeights:
    c = cfg.channels
    dw = [ConvParams.init(ConvSpec(c, c, k, k, pad_h=k // 2, pad_w=k // 2, groups=c),
                          rng) for k in cfg.dw_kernels]
    pw = ConvParams.init(ConvSpec(len(cfg.dw_kernels) * c, c, 1, 1), rng)
    fc1 = LinearParams.init(LinearSpec(c, cfg.hidden), rng)
    fc2 = LinearParams.init(LinearSpec(cfg.hidden, c), rng)
    return OaheadWeights(dw, pw, fc1, fc2)


def oahead_gate(x: Tensor, cfg: OaheadConfig, w: OaheadWeights,
                tape: Tape | None = None) -> Tensor:
    """Per-channel gate in (0,1), shape N x C; a function of pooled
    descriptors only, hence constant over spatial positions."""
    branches = [add(conv(x, tape), x, tape) for conv in w.dw]
    fused = w.pw(concat(branches, 1, tape), tape)
    s = global_avg_pool(fused, tape)
    return sigmoid(w.fc2(silu(w.fc1(s, tape), tape), tape), tape)


def oahead_forward(x: Tensor, cfg: OaheadConfig, w: OaheadWeights,
                   tape: Tape | None = None) -> Tensor:
    """Input scaled by its occlusion gate; output dims == input dims."""
    if x.dims[1] != cfg.channels:
        raise ValueError(f"channel mismatch: input has {x.dims[1]}, "
                         f"config {cfg.channels}")
    gate = oahead_gate(x, cfg, w, tape)
    n, c = gate.dims
    return mul(x, reshape(gate, (n, c, 1, 1), tape), tape)


def oahead_cost(cfg: OaheadConfig, w: OaheadWeights, out_h: int, out_w: int,
                path: str) -> CostReport:
    rep = CostReport()
    for k, conv in zip(cfg.dw_kernels, w.dw):
        rep.entries.append(conv.cost(f"{path}.dw_k{k}", out_h, out_w))
    rep.entries.append(w.pw.cost(path + ".pw", out_h, out_w))
    rep.entries.append(w.fc1.cost(path + ".fc1"))
    rep.entries.append(w.fc2.cost(path + ".fc2"))
    return rep


# ---------------------------------------------------------------------------
# detection-head branch built around the gate block


@dataclass(frozen=True)
class HeadConfig:
    """One decoupled-head branch: stem conv, gate block, post conv, predictor."""
    in_channels: int
    mid_channels: int
    out_channels: int
    oahead: OaheadConfig | None = None  # None = plain stacked 3x3 convs


@dataclass
class HeadBranchWeights:
    stem: DwSepParams | ConvParams
    oa: OaheadWeights | None
    post: DwSepParams | ConvParams
    pred: ConvParams  # 1x1 predictor

    def entries(self, path: str):
        yield from self.stem.entries(path + ".stem")
        if self.oa is not None:
            yield from self.oa.entries(path + ".oahead")
        yield from self.post.entries(path + ".post")
        yield from self.pred.entries(path + ".pred")


def init_head_branch(cfg: HeadConfig, rng: Rng) -> HeadBranchWeights:
    cin, cm, cout = cfg.in_channels, cfg.mid_channels, cfg.out_channels
    if cfg.oahead is not None:
        # gated branch keeps cost low with depthwise-separable 3x3 convs
        stem = DwSepParams.init(cin, cm, 3, rng, pw_act="silu")
        oa = init_oahead(cfg.oahead, rng)
        post = DwSepParams.init(cm, cm, 3, rng, pw_act="silu")
    else:
        stem = ConvParams.init(ConvSpec(cin, cm, 3, 3, pad_h=1, pad_w=1,
                                        activation="silu"), rng)
        oa = None
        post = ConvParams.init(ConvSpec(cm, cm, 3, 3, pad_h=1, pad_w=1,
                                        activation="silu"), rng)
    pred = ConvParams.init(ConvSpec(cm, cout, 1, 1), rng)
    return HeadBranchWeights(stem, oa, post, pred)


def head_branch_forward(x: Tensor, cfg: HeadConfig, w: HeadBranchWeights,
                        tape: Tape | None = None) -> Tensor:
    t = w.stem(x, tape)
    if w.oa is not None:
        t = oahead_forward(t, cfg.oahead, w.oa, tape)
    t = w.post(t, tape)
    return w.pred(t, tape)


def head_branch_cost(cfg: HeadConfig, w: HeadBranchWeights, out_h: int,
                     out_w: int, path: str) -> CostReport:
    rep = CostReport()
    if isinstance(w.stem, DwSepParams):
        rep.entries.extend(w.stem.cost(path + ".stem", out_h, out_w))
    else:
        rep.entries.append(w.stem.cost(path + ".stem", out_h, out_w))
    if w.oa is not None:
        rep.extend(oahead_cost(cfg.oahead, w.oa, out_h, out_w, path + ".oahead"))
    if isinstance(w.post, DwSepParams):
        rep.entries.extend(w.post.cost(path + ".post", out_h, out_w))
    else:
        rep.entries.append(w.post.cost(path + ".post", out_h, out_w))
    rep.entries.append(w.pred.cost(path + ".pred", out_h, out_w))
    return rep
