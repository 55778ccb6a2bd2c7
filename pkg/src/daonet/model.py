"""Detector assembly: backbone + SPPF (+ fusion block) + FPN/PAN neck + head.

The baseline follows the nano-scale stage plan (64/128/256/512/1024 base
channels scaled by width and rounded to multiples of 8; block repeats
3/6/6/3 scaled by depth), with batch-norm folded into conv biases.  The
three feature-enhancement flags swap pieces in independently:

* ``dsconv``  - backbone cross-stage blocks use dynamic-synthesis units
* ``dafm``    - the dual-attention fusion block follows SPPF
* ``oahead``  - head branches gain the occlusion gate with
                depthwise-separable stem/post convs

Weights are drawn from a single Rng in construction order (backbone,
fusion, neck, then head scales p3/p4/p5 with cls before reg), which is
also the WeightStore manifest order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .dafm import DafmConfig, dafm_cost, dafm_forward, init_dafm
from .dsconv import DsconvConfig, dsconv_cost, dsconv_forward, init_dsconv
from .layers import ConvParams
from .oahead import (HeadConfig, OaheadConfig, head_branch_cost,
                     head_branch_forward, init_head_branch)
from .ops import (ConvSpec, CostReport, add, concat, maxpool2d, narrow,
                  upsample2x)
from .tensor import Rng, Tape, Tensor
from .tnsio import TnsFormatError, WeightStore

__all__ = ["ModelConfig", "Model", "build", "cost_report", "ablation_grid",
           "C2fBlock", "ABLATION_ORDER"]

_BASE_CHANNELS = (64, 128, 256, 512, 1024)
_BASE_REPEATS = (3, 6, 6, 3)

# canonical ablation row order: single flags, pairs, then all three
ABLATION_ORDER = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
)


@dataclass(frozen=True)
class ModelConfig:
    dafm: bool = False
    oahead: bool = False
    dsconv: bool = False
    width_multiple: float = 0.25
    depth_multiple: float = 0.33
    num_classes: int = 6
    input_size: int = 640
    reg_bins: int = 16
    shuffle_groups: int = 4
    oahead_kernels: tuple[int, ...] = (3, 5)
    oahead_reduction: int = 4
    dsconv_square_k: int = 3
    dsconv_strip_m: int = 5

    @classmethod
    def baseline(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def daonet(cls, **kw) -> "ModelConfig":
        return cls(dafm=True, oahead=True, dsconv=True, **kw)

    def with_flags(self, dafm: bool, oahead: bool, dsconv: bool) -> "ModelConfig":
        return replace(self, dafm=dafm, oahead=oahead, dsconv=dsconv)

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return (self.dafm, self.oahead, self.dsconv)

    @property
    def variant_name(self) -> str:
        if not any(self.flags):
            return "baseline"
        if all(self.flags):
            return "daonet"
        names = [n for n, f in zip(("dafm", "oahead", "dsconv"), self.flags) if f]
        return "+".join(names)

    def stage_channels(self) -> tuple[int, ...]:
        chs = tuple(_round8(c * self.width_multiple) for c in _BASE_CHANNELS)
        if any(c <= 0 for c in chs):
            raise ValueError(f"width {self.width_multiple} produces zero channels")
        return chs

    def stage_repeats(self) -> tuple[int, ...]:
        return tuple(max(1, round(n * self.depth_multiple)) for n in _BASE_REPEATS)


def _round8(x: float) -> int:
    return int(round(x / 8.0)) * 8


# ---------------------------------------------------------------------------
# blocks


def _conv(cin, cout, k, stride, rng, act="silu"):
    return ConvParams.init(
        ConvSpec(cin, cout, k, k, stride=stride, pad_h=k // 2, pad_w=k // 2,
                 activation=act), rng)


class Bottleneck:
    """Two 3x3 convs with optional identity shortcut."""

    def __init__(self, c: int, shortcut: bool, rng: Rng, act: str = "silu"):
        self.shortcut = shortcut
        self.cv1 = _conv(c, c, 3, 1, rng, act)
        self.cv2 = _conv(c, c, 3, 1, rng, act)

    def forward(self, x: Tensor, tape: Tape | None) -> Tensor:
        y = self.cv2(self.cv1(x, tape), tape)
        return add(x, y, tape) if self.shortcut else y

    def entries(self, path: str):
        yield from self.cv1.entries(path + ".cv1")
        yield from self.cv2.entries(path + ".cv2")

    def cost(self, path: str, oh: int, ow: int) -> CostReport:
        rep = CostReport()
        rep.entries.append(self.cv1.cost(path + ".cv1", oh, ow))
        rep.entries.append(self.cv2.cost(path + ".cv2", oh, ow))
        return rep


class DsconvUnit:
    """Dynamic-synthesis unit standing in for a bottleneck."""

    def __init__(self, c: int, shortcut: bool, cfg: DsconvConfig, rng: Rng):
        self.shortcut = shortcut
        self.cfg = cfg
        self.w = init_dsconv(cfg, rng)

    def forward(self, x: Tensor, tape: Tape | None) -> Tensor:
        y = dsconv_forward(x, self.cfg, self.w, tape)
        return add(x, y, tape) if self.shortcut else y

    def entries(self, path: str):
        yield from self.w.entries(path)

    def cost(self, path: str, oh: int, ow: int) -> CostReport:
        return dsconv_cost(self.cfg, self.w, oh, ow, path)


class C2fBlock:
    """Cross-stage block: 1x1 expand, split, chained units on the second
    half with every intermediate kept, concat, 1x1 compress."""

    def __init__(self, cin: int, cout: int, n: int, shortcut: bool, rng: Rng,
                 dsconv_kernels: tuple[int, int] | None = None, act: str = "silu"):
        if cout % 2:
            raise ValueError(f"odd hidden channels ({cout})")
        self.c = cout // 2
        self.cv1 = _conv(cin, 2 * self.c, 1, 1, rng, act)
        if dsconv_kernels is not None:
            cfg = DsconvConfig(self.c, *dsconv_kernels)
            self.units = [DsconvUnit(self.c, shortcut, cfg, rng) for _ in range(n)]
        else:
            self.units = [Bottleneck(self.c, shortcut, rng, act) for _ in range(n)]
        self.cv2 = _conv((2 + n) * self.c, cout, 1, 1, rng, act)

    def forward(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        y = self.cv1(x, tape)
        chunks = [narrow(y, 1, 0, self.c, tape), narrow(y, 1, self.c, self.c, tape)]
        for unit in self.units:
            chunks.append(unit.forward(chunks[-1], tape))
        return self.cv2(concat(chunks, 1, tape), tape)

    def entries(self, path: str):
        yield from self.cv1.entries(path + ".cv1")
        for i, unit in enumerate(self.units):
            yield from unit.entries(f"{path}.m.{i}")
        yield from self.cv2.entries(path + ".cv2")

    def cost(self, path: str, oh: int, ow: int) -> CostReport:
        rep = CostReport()
        rep.entries.append(self.cv1.cost(path + ".cv1", oh, ow))
        for i, unit in enumerate(self.units):
            rep.extend(unit.cost(f"{path}.m.{i}", oh, ow))
        rep.entries.append(self.cv2.cost(path + ".cv2", oh, ow))
        return rep


class Sppf:
    """Cascaded 5x5 stride-1 max pools between two 1x1 convs."""

    def __init__(self, c: int, rng: Rng):
        self.hidden = c // 2
        self.cv1 = _conv(c, self.hidden, 1, 1, rng)
        self.cv2 = _conv(4 * self.hidden, c, 1, 1, rng)

    def forward(self, x: Tensor, tape: Tape | None) -> Tensor:
        t = self.cv1(x, tape)
        p1 = maxpool2d(t, 5, 1, 2, tape)
        p2 = maxpool2d(p1, 5, 1, 2, tape)
        p3 = maxpool2d(p2, 5, 1, 2, tape)
        return self.cv2(concat([t, p1, p2, p3], 1, tape), tape)

    def entries(self, path: str):
        yield from self.cv1.entries(path + ".cv1")
        yield from self.cv2.entries(path + ".cv2")

    def cost(self, path: str, oh: int, ow: int) -> CostReport:
        rep = CostReport()
        rep.entries.append(self.cv1.cost(path + ".cv1", oh, ow))
        rep.entries.append(self.cv2.cost(path + ".cv2", oh, ow))
        return rep


# ---------------------------------------------------------------------------
# whole model


class Model:
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        ch1, ch2, ch3, ch4, ch5 = cfg.stage_channels()
        n1, n2, n3, n4 = cfg.stage_repeats()
        ds = (cfg.dsconv_square_k, cfg.dsconv_strip_m) if cfg.dsconv else None

        self.stem = _conv(3, ch1, 3, 2, rng)
        self.stage_down = []
        self.stage_c2f = []
        for cin, cout, n in ((ch1, ch2, n1), (ch2, ch3, n2),
                             (ch3, ch4, n3), (ch4, ch5, n4)):
            self.stage_down.append(_conv(cin, cout, 3, 2, rng))
            self.stage_c2f.append(C2fBlock(cout, cout, n, True, rng,
                                           dsconv_kernels=ds))
        self.sppf = Sppf(ch5, rng)

        if cfg.dafm:
            self.dafm_cfg = DafmConfig(ch5, cfg.shuffle_groups)
            self.dafm_w = init_dafm(self.dafm_cfg, rng)
        else:
            self.dafm_cfg = self.dafm_w = None

        # neck fusion blocks repeat like the 3-repeat backbone stages
        self.neck_td1 = C2fBlock(ch5 + ch4, ch4, n1, False, rng)
        self.neck_td2 = C2fBlock(ch4 + ch3, ch3, n1, False, rng)
        self.neck_down1 = _conv(ch3, ch3, 3, 2, rng)
        self.neck_bu1 = C2fBlock(ch3 + ch4, ch4, n1, False, rng)
        self.neck_down2 = _conv(ch4, ch4, 3, 2, rng)
        self.neck_bu2 = C2fBlock(ch4 + ch5, ch5, n1, False, rng)

        cls_mid = max(ch3, min(cfg.num_classes, 100))
        reg_mid = max(16, ch3 // 4, 4 * cfg.reg_bins)
        self.scales = ("p3", "p4", "p5")
        self.head = {}
        for scale, cin in zip(self.scales, (ch3, ch4, ch5)):
            for branch, mid, cout in (("cls", cls_mid, cfg.num_classes),
                                      ("reg", reg_mid, 4 * cfg.reg_bins)):
                oa = (OaheadConfig(mid, cfg.oahead_kernels, cfg.oahead_reduction)
                      if cfg.oahead else None)
                hcfg = HeadConfig(cin, mid, cout, oa)
                self.head[scale, branch] = (hcfg, init_head_branch(hcfg, rng))

    # --- execution ---------------------------------------------------------

    def forward(self, x: Tensor, tape: Tape | None = None):
        """Run the detector; returns [(cls, box)] for strides 8, 16, 32."""
        if x.data.ndim != 4 or x.dims[1] != 3:
            raise ValueError(f"expected N x 3 x S x S input, got {x.dims}")
        if x.dims[2] % 32 or x.dims[3] % 32:
            raise ValueError(f"input size {x.dims[2]}x{x.dims[3]} not divisible by 32")

        t = self.stem(x, tape)
        feats = []
        for down, c2f in zip(self.stage_down, self.stage_c2f):
            t = c2f.forward(down(t, tape), tape)
            feats.append(t)
        p3, p4 = feats[1], feats[2]
        t = self.sppf.forward(feats[3], tape)
        if self.dafm_w is not None:
            t = dafm_forward(t, self.dafm_cfg, self.dafm_w, tape)
        p5 = t

        n4 = self.neck_td1.forward(concat([upsample2x(p5, tape), p4], 1, tape), tape)
        n3 = self.neck_td2.forward(concat([upsample2x(n4, tape), p3], 1, tape), tape)
        m4 = self.neck_bu1.forward(
            concat([self.neck_down1(n3, tape), n4], 1, tape), tape)
        m5 = self.neck_bu2.forward(
            concat([self.neck_down2(m4, tape), p5], 1, tape), tape)

        outputs = []
        for scale, feat in zip(self.scales, (n3, m4, m5)):
            cls_cfg, cls_w = self.head[scale, "cls"]
            reg_cfg, reg_w = self.head[scale, "reg"]
            outputs.append((head_branch_forward(feat, cls_cfg, cls_w, tape),
                            head_branch_forward(feat, reg_cfg, reg_w, tape)))
        return outputs

    # --- bookkeeping -------------------------------------------------------

    def entries(self):
        yield from self.stem.entries("backbone.stem")
        kind = "c2f_dsconv" if self.cfg.dsconv else "c2f"
        for i, (down, c2f) in enumerate(zip(self.stage_down, self.stage_c2f), start=2):
            yield from down.entries(f"backbone.s{i}.down")
            yield from c2f.entries(f"backbone.s{i}.{kind}")
        yield from self.sppf.entries("backbone.sppf")
        if self.dafm_w is not None:
            yield from self.dafm_w.entries("dafm")
        yield from self.neck_td1.entries("neck.td1")
        yield from self.neck_td2.entries("neck.td2")
        yield from self.neck_down1.entries("neck.down1")
        yield from self.neck_bu1.entries("neck.bu1")
        yield from self.neck_down2.entries("neck.down2")
        yield from self.neck_bu2.entries("neck.bu2")
        for scale in self.scales:
            for branch in ("cls", "reg"):
                _, w = self.head[scale, branch]
                yield from w.entries(f"head.{scale}.{branch}")

    def cost(self, input_size: int) -> CostReport:
        s = input_size
        if s % 32:
            raise ValueError(f"input size {s} not divisible by 32")
        rep = CostReport()
        rep.entries.append(self.stem.cost("backbone.stem", s // 2, s // 2))
        kind = "c2f_dsconv" if self.cfg.dsconv else "c2f"
        res = (s // 4, s // 8, s // 16, s // 32)
        for i, (down, c2f, r) in enumerate(
                zip(self.stage_down, self.stage_c2f, res), start=2):
            rep.entries.append(down.cost(f"backbone.s{i}.down", r, r))
            rep.extend(c2f.cost(f"backbone.s{i}.{kind}", r, r))
        r32 = s // 32
        rep.extend(self.sppf.cost("backbone.sppf", r32, r32))
        if self.dafm_w is not None:
            rep.extend(dafm_cost(self.dafm_cfg, self.dafm_w, r32, r32, "dafm"))
        r8, r16 = s // 8, s // 16
        rep.extend(self.neck_td1.cost("neck.td1", r16, r16))
        rep.extend(self.neck_td2.cost("neck.td2", r8, r8))
        rep.entries.append(self.neck_down1.cost("neck.down1", r16, r16))
        rep.extend(self.neck_bu1.cost("neck.bu1", r16, r16))
        rep.entries.append(self.neck_down2.cost("neck.down2", r32, r32))
        rep.extend(self.neck_bu2.cost("neck.bu2", r32, r32))
        for scale, r in zip(self.scales, (r8, r16, r32)):
            for branch in ("cls", "reg"):
                hcfg, w = self.head[scale, branch]
                rep.extend(head_branch_cost(hcfg, w, r, r, f"head.{scale}.{branch}"))
        return rep


def build(cfg: ModelConfig, rng: Rng) -> tuple[Model, WeightStore]:
    """Construct the model and its manifest; equal seeds give bitwise-equal
    stores because weights are drawn in manifest order from one stream."""
    model = Model(cfg, rng)
    store = WeightStore()
    for path, t in model.entries():
        store.add(path, t)
    return model, store


def cost_report(cfg: ModelConfig, seed: int = 0) -> CostReport:
    """Per-layer parameter/flop accounting at cfg.input_size."""
    model, _ = build(cfg, Rng(seed))
    return model.cost(cfg.input_size)


def ablation_grid(base: ModelConfig) -> list[tuple[ModelConfig, CostReport]]:
    """Cost reports for all eight flag combinations in canonical row order."""
    rows = []
    for flags in ABLATION_ORDER:
        cfg = base.with_flags(*flags)
        rows.append((cfg, cost_report(cfg)))
    return rows


def load_into(entry_iter, store: WeightStore) -> None:
    """Copy store tensors into an existing weight structure, dims-checked."""
    for path, t in entry_iter:
        src = store.get(path)
        if src.dims != t.dims:
            raise TnsFormatError(
                f"dims mismatch for '{path}': store {src.dims}, model {t.dims}")
        t.data[...] = src.data.astype(t.data.dtype)
