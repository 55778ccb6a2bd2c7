"""Primitive differentiable layer ops: forward, adjoint rule, cost.

Every op is a pure function ``op(inputs..., tape=None) -> Tensor``.  When a
``Tape`` is passed the op records one node per primitive so ``backward``
can replay the adjoints.  Convolution and matmul reductions go through
``np.einsum(..., optimize=False)``: a single-threaded nested loop whose
summation order is fixed by the operand shapes, which keeps every output
bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import ADJOINTS, Tape, Tensor

__all__ = [
    "ConvSpec", "LinearSpec", "CostEntry", "CostReport",
    "conv2d", "linear", "matmul", "softmax", "channel_shuffle",
    "global_avg_pool", "maxpool2d", "upsample2x", "concat", "narrow",
    "reshape", "transpose", "add", "mul", "div", "absval",
    "silu", "sigmoid", "sum_all", "shuffle_permutation", "cost_of",
]

_ACTIVATIONS = ("none", "silu", "sigmoid")


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad_h: int = 0
    pad_w: int = 0
    groups: int = 1
    has_bias: bool = True
    activation: str = "none"

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible "
                f"by groups ({self.groups})")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")

    @property
    def weight_dims(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups,
                self.kernel_h, self.kernel_w)


@dataclass(frozen=True)
class LinearSpec:
    in_features: int
    out_features: int
    has_bias: bool = True

    @property
    def weight_dims(self) -> tuple[int, int]:
        return (self.out_features, self.in_features)


@dataclass(frozen=True)
class CostEntry:
    path: str
    params: int
    flops: int


@dataclass
class CostReport:
    entries: list[CostEntry] = field(default_factory=list)

    def add(self, path: str, params: int, flops: int) -> None:
        self.entries.append(CostEntry(path, int(params), int(flops)))

    def extend(self, other: "CostReport") -> None:
        self.entries.extend(other.entries)

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    def subtotal(self, prefix: str) -> tuple[int, int]:
        hit = [e for e in self.entries if e.path.startswith(prefix)]
        return sum(e.params for e in hit), sum(e.flops for e in hit)


def cost_of(spec: ConvSpec | LinearSpec, out_h: int = 1, out_w: int = 1) -> tuple[int, int]:
    """(params, flops) for one layer; one multiply-add counts as 2 flops."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError("non-positive output size")
    if isinstance(spec, ConvSpec):
        mac_params = (spec.out_channels * (spec.in_channels // spec.groups)
                      * spec.kernel_h * spec.kernel_w)
        params = mac_params + (spec.out_channels if spec.has_bias else 0)
        flops = 2 * mac_params * out_h * out_w
        if spec.has_bias:
            flops += spec.out_channels * out_h * out_w
        return params, flops
    mac_params = spec.out_features * spec.in_features
    params = mac_params + (spec.out_features if spec.has_bias else 0)
    flops = 2 * mac_params + (spec.out_features if spec.has_bias else 0)
    return params, flops


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, d in enumerate(shape):
        if d == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int,
                  oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return as_strided(xp, (n, c, oh, ow, kh, kw),
                      (sn, sc, sh * stride, sw * stride, sh, sw))


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, ph: int, pw: int,
                  groups: int) -> np.ndarray:
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (wd + 2 * pw - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(f"non-positive conv output size ({oh}x{ow})")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _conv_windows(xp, kh, kw, stride, oh, ow)
    wing = win.reshape(n, groups, c // groups, oh, ow, kh, kw)
    wg = w.reshape(groups, o // groups, cg, kh, kw)
    y = np.einsum("ngchwij,gocij->ngohw", wing, wg, optimize=False)
    return np.ascontiguousarray(y.reshape(n, o, oh, ow))


def _conv_adjoint(saved: dict, gout: np.ndarray):
    x, w = saved["x"], saved["w"]
    stride, ph, pw, groups = saved["stride"], saved["ph"], saved["pw"], saved["groups"]
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    oh, ow = gout.shape[2:]
    gg = gout.reshape(n, groups, o // groups, oh, ow)
    wg = w.reshape(groups, o // groups, cg, kh, kw)

    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _conv_windows(xp, kh, kw, stride, oh, ow)
    wing = win.reshape(n, groups, cg, oh, ow, kh, kw)
    gw = np.einsum("ngchwij,ngohw->gocij", wing, gg, optimize=False)
    gw = gw.reshape(o, cg, kh, kw)

    gxp = np.zeros_like(xp).reshape(n, groups, cg, h + 2 * ph, wd + 2 * pw)
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("ngohw,goc->ngchw", gg, wg[:, :, :, i, j],
                                optimize=False)
            gxp[:, :, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += contrib
    gx = gxp.reshape(n, c, h + 2 * ph, wd + 2 * pw)
    if ph or pw:
        gx = gx[:, :, ph:ph + h, pw:pw + wd]

    grads = [np.ascontiguousarray(gx), gw]
    if saved["has_bias"]:
        grads.append(gout.sum(axis=(0, 2, 3)))
    return grads


ADJOINTS["conv2d"] = _conv_adjoint


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None = None,
           tape: Tape | None = None) -> Tensor:
    """Zero-padded 2-D convolution, NCHW in, OIKK weights, optional bias and
    activation per ``spec.activation``."""
    if x.data.ndim != 4:
        raise ValueError("conv2d expects a rank-4 NCHW input")
    if x.dims[1] != spec.in_channels:
        raise ValueError(f"channel mismatch: input has {x.dims[1]}, "
                         f"spec expects {spec.in_channels}")
    if weight.dims != spec.weight_dims:
        raise ValueError(f"weight dims {weight.dims} != {spec.weight_dims}")
    if spec.has_bias != (bias is not None):
        raise ValueError("bias presence does not match spec.has_bias")

    y = _conv_forward(x.data, weight.data, spec.stride, spec.pad_h, spec.pad_w,
                      spec.groups)
    if bias is not None:
        y = y + bias.data.reshape(1, -1, 1, 1)
    out = Tensor(y)
    if tape is not None:
        inputs = (x, weight) if bias is None else (x, weight, bias)
        tape.record("conv2d", inputs, out, x=x.data, w=weight.data,
                    stride=spec.stride, ph=spec.pad_h, pw=spec.pad_w,
                    groups=spec.groups, has_bias=bias is not None)
    if spec.activation == "silu":
        out = silu(out, tape)
    elif spec.activation == "sigmoid":
        out = sigmoid(out, tape)
    return out


def _linear_adjoint(saved, gout):
    x, w = saved["x"], saved["w"]
    gx = np.einsum("no,of->nf", gout, w, optimize=False)
    gw = np.einsum("no,nf->of", gout, x, optimize=False)
    grads = [gx, gw]
    if saved["has_bias"]:
        grads.append(gout.sum(axis=0))
    return grads


ADJOINTS["linear"] = _linear_adjoint


def linear(x: Tensor, spec: LinearSpec, weight: Tensor, bias: Tensor | None = None,
           tape: Tape | None = None) -> Tensor:
    """Affine map on rank-2 input: out = x @ weight.T + bias."""
    if x.data.ndim != 2 or x.dims[1] != spec.in_features:
        raise ValueError(f"linear expects N x {spec.in_features}, got {x.dims}")
    if weight.dims != spec.weight_dims:
        raise ValueError(f"weight dims {weight.dims} != {spec.weight_dims}")
    if spec.has_bias != (bias is not None):
        raise ValueError("bias presence does not match spec.has_bias")
    y = np.einsum("nf,of->no", x.data, weight.data, optimize=False)
    if bias is not None:
        y = y + bias.data.reshape(1, -1)
    out = Tensor(y)
    if tape is not None:
        inputs = (x, weight) if bias is None else (x, weight, bias)
        tape.record("linear", inputs, out, x=x.data, w=weight.data,
                    has_bias=bias is not None)
    return out


def _matmul_adjoint(saved, gout):
    a, b = saved["a"], saved["b"]
    if a.ndim == 2:
        ga = np.einsum("ik,jk->ij", gout, b, optimize=False)
        gb = np.einsum("ij,ik->jk", a, gout, optimize=False)
    else:
        ga = np.einsum("nik,njk->nij", gout, b, optimize=False)
        gb = np.einsum("nij,nik->njk", a, gout, optimize=False)
    return [ga, gb]


ADJOINTS["matmul"] = _matmul_adjoint


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Matrix product; rank-2 pair or rank-3 pair sharing a leading batch dim."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise ValueError(f"matmul needs two rank-2 or two rank-3 tensors, "
                         f"got {a.dims} and {b.dims}")
    if a.dims[-1] != b.dims[-2] or (a.data.ndim == 3 and a.dims[0] != b.dims[0]):
        raise ValueError(f"matmul shape mismatch: {a.dims} @ {b.dims}")
    eq = "ij,jk->ik" if a.data.ndim == 2 else "nij,njk->nik"
    out = Tensor(np.einsum(eq, a.data, b.data, optimize=False))
    if tape is not None:
        tape.record("matmul", (a, b), out, a=a.data, b=b.data)
    return out


def _softmax_adjoint(saved, gout):
    y, axis = saved["y"], saved["axis"]
    dot = (gout * y).sum(axis=axis, keepdims=True)
    return [y * (gout - dot)]


ADJOINTS["softmax"] = _softmax_adjoint


def softmax(x: Tensor, axis: int, tape: Tape | None = None) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ValueError(f"axis {axis} invalid for dims {x.dims}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if tape is not None:
        tape.record("softmax", (x,), out, y=y, axis=axis)
    return out


def shuffle_permutation(channels: int, g: int) -> np.ndarray:
    """perm[dest] = source channel for a g-group channel shuffle."""
    if channels % g:
        raise ValueError(f"channels ({channels}) not divisible by groups ({g})")
    cg = channels // g
    src = np.arange(channels)
    dest = (src % cg) * g + src // cg
    perm = np.empty(channels, dtype=np.int64)
    perm[dest] = src
    return perm


def _shuffle_adjoint(saved, gout):
    inv = np.argsort(saved["perm"])
    return [np.ascontiguousarray(gout[:, inv])]


ADJOINTS["channel_shuffle"] = _shuffle_adjoint


def channel_shuffle(x: Tensor, g: int, tape: Tape | None = None) -> Tensor:
    """Interleave g channel groups: channel c moves to (c mod C/g)*g + c div C/g."""
    perm = shuffle_permutation(x.dims[1], g)
    out = Tensor(np.ascontiguousarray(x.data[:, perm]))
    if tape is not None:
        tape.record("channel_shuffle", (x,), out, perm=perm)
    return out


def _gap_adjoint(saved, gout):
    n, c, h, w = saved["in_dims"]
    g = (gout / (h * w)).reshape(n, c, 1, 1)
    return [np.broadcast_to(g, (n, c, h, w)).copy()]


ADJOINTS["global_avg_pool"] = _gap_adjoint


def global_avg_pool(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean over H and W; NCHW -> NC."""
    if x.data.ndim != 4:
        raise ValueError("global_avg_pool expects a rank-4 input")
    out = Tensor(x.data.mean(axis=(2, 3)))
    if tape is not None:
        tape.record("global_avg_pool", (x,), out, in_dims=x.dims)
    return out


def _maxpool_adjoint(saved, gout):
    n, c, h, w = saved["in_dims"]
    k, stride, pad = saved["k"], saved["stride"], saved["pad"]
    arg = saved["arg"]  # (N, C, oh, ow) flat index into the k*k window
    oh, ow = gout.shape[2:]
    hp, wp = h + 2 * pad, w + 2 * pad
    gxp = np.zeros((n, c, hp, wp), dtype=gout.dtype)
    ii, jj = np.divmod(arg, k)
    oy = np.arange(oh).reshape(1, 1, oh, 1) * stride
    ox = np.arange(ow).reshape(1, 1, 1, ow) * stride
    rows = (oy + ii).reshape(n, c, -1)
    cols = (ox + jj).reshape(n, c, -1)
    ni = np.arange(n).reshape(n, 1, 1)
    ci = np.arange(c).reshape(1, c, 1)
    np.add.at(gxp, (ni, ci, rows, cols), gout.reshape(n, c, -1))
    if pad:
        gxp = gxp[:, :, pad:pad + h, pad:pad + w]
    return [np.ascontiguousarray(gxp)]


ADJOINTS["maxpool2d"] = _maxpool_adjoint


def maxpool2d(x: Tensor, k: int, stride: int = 1, pad: int = 0,
              tape: Tape | None = None) -> Tensor:
    """Zero-padded max pool; ties resolve to the first maximum in row-major
    window order (gradient is routed there)."""
    if x.data.ndim != 4:
        raise ValueError("maxpool2d expects a rank-4 input")
    n, c, h, w = x.dims
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("non-positive pool output size")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _conv_windows(xp, k, k, stride, oh, ow).reshape(n, c, oh, ow, k * k)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    out = Tensor(np.ascontiguousarray(y))
    if tape is not None:
        tape.record("maxpool2d", (x,), out, in_dims=x.dims, k=k, stride=stride,
                    pad=pad, arg=arg)
    return out


def _upsample_adjoint(saved, gout):
    n, c, h2, w2 = gout.shape
    return [gout.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))]


ADJOINTS["upsample2x"] = _upsample_adjoint


def upsample2x(x: Tensor, tape: Tape | None = None) -> Tensor:
    """2x nearest-neighbour upsample on H and W."""
    if x.data.ndim != 4:
        raise ValueError("upsample2x expects a rank-4 input")
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    out = Tensor(y)
    if tape is not None:
        tape.record("upsample2x", (x,), out)
    return out


def _concat_adjoint(saved, gout):
    axis, sizes = saved["axis"], saved["sizes"]
    splits = np.cumsum(sizes[:-1])
    return [np.ascontiguousarray(g) for g in np.split(gout, splits, axis=axis)]


ADJOINTS["concat"] = _concat_adjoint


def concat(parts: list[Tensor], axis: int = 1, tape: Tape | None = None) -> Tensor:
    if not parts:
        raise ValueError("concat of nothing")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    if tape is not None:
        tape.record("concat", tuple(parts), out, axis=axis,
                    sizes=[p.dims[axis] for p in parts])
    return out


def _narrow_adjoint(saved, gout):
    g = np.zeros(saved["in_dims"], dtype=gout.dtype)
    sl = [slice(None)] * g.ndim
    sl[saved["axis"]] = slice(saved["start"], saved["start"] + saved["length"])
    g[tuple(sl)] = gout
    return [g]


ADJOINTS["narrow"] = _narrow_adjoint


def narrow(x: Tensor, axis: int, start: int, length: int,
           tape: Tape | None = None) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if start < 0 or start + length > x.dims[axis]:
        raise ValueError(f"narrow [{start}:{start + length}] out of range "
                         f"for axis {axis} of {x.dims}")
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    out = Tensor(np.ascontiguousarray(x.data[tuple(sl)]))
    if tape is not None:
        tape.record("narrow", (x,), out, in_dims=x.dims, axis=axis,
                    start=start, length=length)
    return out


ADJOINTS["reshape"] = lambda saved, gout: [gout.reshape(saved["in_dims"])]


def reshape(x: Tensor, dims: tuple[int, ...], tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data.reshape(dims))
    if tape is not None:
        tape.record("reshape", (x,), out, in_dims=x.dims)
    return out


def _transpose_adjoint(saved, gout):
    inv = np.argsort(saved["axes"])
    return [np.ascontiguousarray(np.transpose(gout, inv))]


ADJOINTS["transpose"] = _transpose_adjoint


def transpose(x: Tensor, axes: tuple[int, ...], tape: Tape | None = None) -> Tensor:
    out = Tensor(np.ascontiguousarray(np.transpose(x.data, axes)))
    if tape is not None:
        tape.record("transpose", (x,), out, axes=axes)
    return out


def _add_adjoint(saved, gout):
    return [_unbroadcast(gout, saved["a_dims"]),
            _unbroadcast(gout, saved["b_dims"])]


ADJOINTS["add"] = _add_adjoint


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    out = Tensor(a.data + b.data)
    if tape is not None:
        tape.record("add", (a, b), out, a_dims=a.dims, b_dims=b.dims)
    return out


def _mul_adjoint(saved, gout):
    a, b = saved["a"], saved["b"]
    return [_unbroadcast(gout * b, a.shape), _unbroadcast(gout * a, b.shape)]


ADJOINTS["mul"] = _mul_adjoint


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    out = Tensor(a.data * b.data)
    if tape is not None:
        tape.record("mul", (a, b), out, a=a.data, b=b.data)
    return out


def _div_adjoint(saved, gout):
    a, b = saved["a"], saved["b"]
    ga = _unbroadcast(gout / b, a.shape)
    gb = _unbroadcast(-gout * a / (b * b), b.shape)
    return [ga, gb]


ADJOINTS["div"] = _div_adjoint


def div(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data / b.data)
    if tape is not None:
        tape.record("div", (a, b), out, a=a.data, b=b.data)
    return out


ADJOINTS["absval"] = lambda saved, gout: [gout * np.sign(saved["x"])]


def absval(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.abs(x.data))
    if tape is not None:
        tape.record("absval", (x,), out, x=x.data)
    return out


def _silu_adjoint(saved, gout):
    x = saved["x"]
    s = 1.0 / (1.0 + np.exp(-x))
    return [gout * s * (1.0 + x * (1.0 - s))]


ADJOINTS["silu"] = _silu_adjoint


def silu(x: Tensor, tape: Tape | None = None) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(x.data * s)
    if tape is not None:
        tape.record("silu", (x,), out, x=x.data)
    return out


def _sigmoid_adjoint(saved, gout):
    y = saved["y"]
    return [gout * y * (1.0 - y)]


ADJOINTS["sigmoid"] = _sigmoid_adjoint


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y)
    if tape is not None:
        tape.record("sigmoid", (x,), out, y=y)
    return out


def _sum_adjoint(saved, gout):
    return [np.full(saved["in_dims"], gout.reshape(()), dtype=gout.dtype)]


ADJOINTS["sum_all"] = _sum_adjoint


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Total sum as a 1-element tensor (loss builder)."""
    out = Tensor(np.asarray([x.data.sum()], dtype=x.data.dtype))
    if tape is not None:
        tape.record("sum_all", (x,), out, in_dims=x.dims)
    return out
