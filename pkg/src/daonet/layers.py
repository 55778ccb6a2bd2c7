"""Parameter containers pairing a layer spec with its tensors.

Initialization is uniform in [-s, s) with s = sqrt(1 / fan_in) for weights
and biases alike; fan_in is (in_channels / groups) * Kh * Kw for
convolutions and in_features for affine layers.  Draw order is weight then
bias, in construction order, so a single seeded Rng fixes every parameter
bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .ops import ConvSpec, CostEntry, LinearSpec, conv2d, cost_of, linear
from .tensor import Rng, Tape, Tensor, rand_uniform

__all__ = ["ConvParams", "LinearParams", "DwSepParams"]


@dataclass
class ConvParams:
    spec: ConvSpec
    weight: Tensor
    bias: Tensor | None

    @classmethod
    def init(cls, spec: ConvSpec, rng: Rng) -> "ConvParams":
        fan_in = (spec.in_channels // spec.groups) * spec.kernel_h * spec.kernel_w
        s = math.sqrt(1.0 / fan_in)
        weight = rand_uniform(rng, spec.weight_dims, -s, s)
        bias = rand_uniform(rng, (spec.out_channels,), -s, s) if spec.has_bias else None
        return cls(spec, weight, bias)

    def __call__(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        return conv2d(x, self.spec, self.weight, self.bias, tape)

    def entries(self, path: str):
        yield path + ".weight", self.weight
        if self.bias is not None:
            yield path + ".bias", self.bias

    def cost(self, path: str, out_h: int, out_w: int) -> CostEntry:
        params, flops = cost_of(self.spec, out_h, out_w)
        return CostEntry(path, params, flops)


@dataclass
class LinearParams:
    spec: LinearSpec
    weight: Tensor
    bias: Tensor | None

    @classmethod
    def init(cls, spec: LinearSpec, rng: Rng) -> "LinearParams":
        s = math.sqrt(1.0 / spec.in_features)
        weight = rand_uniform(rng, spec.weight_dims, -s, s)
        bias = rand_uniform(rng, (spec.out_features,), -s, s) if spec.has_bias else None
        return cls(spec, weight, bias)

    def __call__(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        return linear(x, self.spec, self.weight, self.bias, tape)

    def entries(self, path: str):
        yield path + ".weight", self.weight
        if self.bias is not None:
            yield path + ".bias", self.bias

    def cost(self, path: str) -> CostEntry:
        params, flops = cost_of(self.spec)
        return CostEntry(path, params, flops)


@dataclass
class DwSepParams:
    """Depthwise k x k followed by pointwise 1 x 1."""

    dw: ConvParams
    pw: ConvParams

    @classmethod
    def init(cls, in_ch: int, out_ch: int, k: int, rng: Rng,
             dw_act: str = "none", pw_act: str = "none") -> "DwSepParams":
        dw = ConvParams.init(ConvSpec(in_ch, in_ch, k, k, pad_h=k // 2, pad_w=k // 2,
                                      groups=in_ch, activation=dw_act), rng)
        pw = ConvParams.init(ConvSpec(in_ch, out_ch, 1, 1, activation=pw_act), rng)
        return cls(dw, pw)

    def __call__(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        return self.pw(self.dw(x, tape), tape)

    def entries(self, path: str):
        yield from self.dw.entries(path + ".dw")
        yield from self.pw.entries(path + ".pw")

    def cost(self, path: str, out_h: int, out_w: int) -> list[CostEntry]:
        return [self.dw.cost(path + ".dw", out_h, out_w),
                self.pw.cost(path + ".pw", out_h, out_w)]
