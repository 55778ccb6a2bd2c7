"""Dynamic synthesis convolution: three kernel shapes mixed per input.

Three depthwise-separable branches (square k x k, vertical m x 1 strip,
horizontal 1 x m strip) run in parallel; a pooled channel descriptor is
scored into three logits and softmax-normalized into mixing weights, one
simplex per batch item.  The output is the convex combination of the
branch outputs, so shape is preserved and equal branches pass through
unchanged regardless of the mix.
"""

from __future__ import annotations

from dataclasses import dataclass

from .layers import ConvParams, DwSepParams, LinearParams
from .ops import (ConvSpec, CostReport, LinearSpec, add, global_avg_pool,
                  mul, narrow, reshape, softmax)
from .tensor import Rng, Tape, Tensor

__all__ = ["DsconvConfig", "DsconvWeights", "init_dsconv",
           "dsconv_branch_weights", "dsconv_forward", "dsconv_cost"]

_BRANCHES = ("square", "vertical", "horizontal")


@dataclass(frozen=True)
class DsconvConfig:
    channels: int
    square_k: int = 3
    strip_m: int = 5

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if self.square_k % 2 == 0 or self.strip_m % 2 == 0:
            raise ValueError("kernel sizes must be odd to preserve shape")


@dataclass
class DsconvWeights:
    square: DwSepParams      # depthwise k x k + pointwise
    vertical: DwSepParams    # depthwise m x 1 + pointwise
    horizontal: DwSepParams  # depthwise 1 x m + pointwise
    fc_score: LinearParams   # C -> 3 branch logits

    def entries(self, path: str):
        for name in _BRANCHES:
            yield from getattr(self, name).entries(f"{path}.{name}")
        yield from self.fc_score.entries(path + ".fc_score")


def _strip_conv(c: int, kh: int, kw: int, rng: Rng) -> ConvParams:
    return ConvParams.init(ConvSpec(c, c, kh, kw, pad_h=kh // 2, pad_w=kw // 2,
                                    groups=c), rng)


def init_dsconv(cfg: DsconvConfig, rng: Rng) -> DsconvWeights:
    c, k, m = cfg.channels, cfg.square_k, cfg.strip_m
    square = DwSepParams(_strip_conv(c, k, k, rng),
                         ConvParams.init(ConvSpec(c, c, 1, 1), rng))
    vertical = DwSepParams(_strip_conv(c, m, 1, rng),
                           ConvParams.init(ConvSpec(c, c, 1, 1), rng))
    horizontal = DwSepParams(_strip_conv(c, 1, m, rng),
                             ConvParams.init(ConvSpec(c, c, 1, 1), rng))
    fc_score = LinearParams.init(LinearSpec(c, 3), rng)
    return DsconvWeights(square, vertical, horizontal, fc_score)


def dsconv_branch_weights(x: Tensor, w: DsconvWeights,
                          tape: Tape | None = None) -> Tensor:
    """N x 3 simplex weights from the pooled channel descriptor of x."""
    scores = w.fc_score(global_avg_pool(x, tape), tape)
    return softmax(scores, axis=1, tape=tape)


def dsconv_forward(x: Tensor, cfg: DsconvConfig, w: DsconvWeights,
                   tape: Tape | None = None) -> Tensor:
    if x.dims[1] != cfg.channels:
        raise ValueError(f"channel mismatch: input has {x.dims[1]}, "
                         f"config {cfg.channels}")
    alphas = dsconv_branch_weights(x, w, tape)
    n = x.dims[0]
    out = None
    for i, name in enumerate(_BRANCHES):
        branch = getattr(w, name)(x, tape)
        a_i = reshape(narrow(alphas, 1, i, 1, tape), (n, 1, 1, 1), tape)
        term = mul(branch, a_i, tape)
        out = term if out is None else add(out, term, tape)
    return out


def dsconv_cost(cfg: DsconvConfig, w: DsconvWeights, out_h: int, out_w: int,
                path: str) -> CostReport:
    rep = CostReport()
    for name in _BRANCHES:
        rep.entries.extend(getattr(w, name).cost(f"{path}.{name}", out_h, out_w))
    rep.entries.append(w.fc_score.cost(path + ".fc_score"))
    return rep
