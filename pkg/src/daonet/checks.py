"""Seeded invariant suite behind ``daonet check``.

Each check returns (measured, threshold); it passes iff measured is finite
and measured <= threshold.  Exact contracts use threshold 0.0 and the
measured value is then a bit-level difference or a violation count.  The
convolution / affine / pooling oracles here are naive nested loops kept
deliberately independent of the production einsum kernels.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .dafm import (DafmConfig, dafm_cost, dafm_forward, dafm_local_branch,
                   dafm_context_branch, init_dafm)
from .dsconv import DsconvConfig, dsconv_branch_weights, dsconv_forward, init_dsconv
from .model import ModelConfig, build, cost_report
from .oahead import OaheadConfig, init_oahead, oahead_forward, oahead_gate
from .tensor import Rng, Tape, Tensor, rand_uniform
from .tnsio import weightstore_to_bytes, weightstore_from_bytes

__all__ = ["CheckResult", "run_checks", "CHECK_NAMES"]


@dataclass
class CheckResult:
    name: str
    measured: float
    threshold: float
    elapsed_ms: int

    @property
    def status(self) -> str:
        ok = math.isfinite(self.measured) and self.measured <= self.threshold
        return "pass" if ok else "fail"

    def line(self) -> str:
        # timing is deliberately excluded: reports must be byte-stable
        return (f"{self.status.upper():4s} {self.name:32s} "
                f"measured={self.measured:.3e} threshold={self.threshold:.3e}")


# ---------------------------------------------------------------------------
# naive oracles (independent code path)


def _conv_loops(x, w, b, stride, ph, pw, groups):
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (wd + 2 * pw - kw) // stride + 1
    xp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=np.float64)
    xp[:, :, ph:ph + h, pw:pw + wd] = x
    y = np.zeros((n, o, oh, ow), dtype=np.float64)
    og = o // groups
    for ni in range(n):
        for oi in range(o):
            g = oi // og
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (xp[ni, g * cg + ci, i * stride + u, j * stride + v]
                                        * w[oi, ci, u, v])
                    y[ni, oi, i, j] = acc + (b[oi] if b is not None else 0.0)
    return y


def _linear_loops(x, w, b):
    n, f = x.shape
    o = w.shape[0]
    y = np.zeros((n, o), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            acc = 0.0
            for fi in range(f):
                acc += x[ni, fi] * w[oi, fi]
            y[ni, oi] = acc + (b[oi] if b is not None else 0.0)
    return y


def _gap_loops(x):
    n, c, h, w = x.shape
    y = np.zeros((n, c), dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[ni, ci, i, j]
            y[ni, ci] = acc / (h * w)
    return y


# ---------------------------------------------------------------------------
# fixtures


def _dafm_fixture(rng):
    cfg = DafmConfig(16, 4)
    w = init_dafm(cfg, rng)
    x = rand_uniform(rng, [2, 16, 6, 6], -1.0, 1.0)
    return cfg, w, x


def _toy_config(**kw) -> ModelConfig:
    return ModelConfig.daonet(width_multiple=0.125, input_size=64, **kw)


def _zero_weights(weights_obj, skip=("attn_scale",)):
    for path, t in weights_obj.entries(""):
        if not any(path.endswith(s) for s in skip):
            t.data[...] = 0.0


# ---------------------------------------------------------------------------
# checks


def check_rng_determinism(rng: Rng):
    seed = rng.state & 0xFFFF
    a = rand_uniform(Rng(seed), [64], 0.0, 1.0)
    b = rand_uniform(Rng(seed), [64], 0.0, 1.0)
    in_range = (a.data >= 0).all() and (a.data < 1).all()
    return float(np.abs(a.data - b.data).max() + (0 if in_range else 1)), 0.0


def check_rng_seed_variation(rng: Rng):
    seed = rng.state & 0xFFFF
    a = rand_uniform(Rng(seed), [64], 0.0, 1.0)
    b = rand_uniform(Rng(seed + 1), [64], 0.0, 1.0)
    return (1.0 if np.array_equal(a.data, b.data) else 0.0), 0.0


def check_op_purity(rng: Rng):
    x = rand_uniform(rng, [2, 8, 6, 6], -2.0, 2.0)
    spec = ops.ConvSpec(8, 8, 3, 3, pad_h=1, pad_w=1)
    w = rand_uniform(rng, spec.weight_dims, -1.0, 1.0)
    b = rand_uniform(rng, (8,), -1.0, 1.0)
    worst = 0.0
    for fn in (lambda: ops.conv2d(x, spec, w, b),
               lambda: ops.softmax(x, 1),
               lambda: ops.silu(x),
               lambda: ops.maxpool2d(x, 5, 1, 2)):
        r1, r2 = fn(), fn()
        if not np.array_equal(r1.data, r2.data):
            worst = 1.0
    return worst, 0.0


def check_op_finiteness(rng: Rng):
    x = rand_uniform(rng, [2, 8, 6, 6], -3.0, 3.0)
    spec = ops.ConvSpec(8, 8, 3, 3, pad_h=1, pad_w=1)
    w = rand_uniform(rng, spec.weight_dims, -1.0, 1.0)
    outs = [ops.conv2d(x, spec, w, rand_uniform(rng, (8,), -1, 1)),
            ops.softmax(x, 1), ops.silu(x), ops.sigmoid(x),
            ops.global_avg_pool(x), ops.maxpool2d(x, 5, 1, 2),
            ops.upsample2x(x), ops.channel_shuffle(x, 4)]
    bad = sum(0 if np.isfinite(o.data).all() else 1 for o in outs)
    return float(bad), 0.0


def check_channel_shuffle_bijection(rng: Rng):
    x = rand_uniform(rng, [2, 12, 5, 5], -1.0, 1.0)
    worst = 0.0
    for g in (1, 2, 3, 4, 6, 12):
        y = ops.channel_shuffle(x, g)
        inv = np.argsort(ops.shuffle_permutation(12, g))
        back = y.data[:, inv]
        worst = max(worst, float(np.abs(back - x.data).max()))
    return worst, 0.0


def check_softmax_normalization(rng: Rng):
    x = rand_uniform(rng, [4, 9, 7], -5.0, 5.0)
    worst = 0.0
    for axis in (0, 1, 2):
        y = ops.softmax(x, axis)
        sums = y.data.sum(axis=axis)
        worst = max(worst, float(np.abs(sums - 1.0).max()))
        if (y.data <= 0).any():
            worst = max(worst, 1.0)
    return worst, 1e-6


def check_softmax_extreme_magnitude(rng: Rng):
    x = ops.mul(rand_uniform(rng, [4, 16], -1.0, 1.0), Tensor.scalar(1e4))
    y = ops.softmax(x, 1)
    return float(np.abs(y.data.sum(axis=1) - 1.0).max()), 1e-6


def check_conv2d_loop_oracle(rng: Rng):
    x = rand_uniform(rng, [2, 8, 9, 9], -1.0, 1.0)
    spec = ops.ConvSpec(8, 8, 3, 3, pad_h=1, pad_w=1)
    w = rand_uniform(rng, spec.weight_dims, -1.0, 1.0)
    b = rand_uniform(rng, (8,), -1.0, 1.0)
    y = ops.conv2d(x, spec, w, b)
    ref = _conv_loops(x.data.astype(np.float64), w.data.astype(np.float64),
                      b.data.astype(np.float64), 1, 1, 1, 1)
    return float(np.abs(y.data - ref).max()), 1e-5


def check_linear_loop_oracle(rng: Rng):
    x = rand_uniform(rng, [4, 16], -1.0, 1.0)
    spec = ops.LinearSpec(16, 8)
    w = rand_uniform(rng, spec.weight_dims, -1.0, 1.0)
    b = rand_uniform(rng, (8,), -1.0, 1.0)
    y = ops.linear(x, spec, w, b)
    ref = _linear_loops(x.data.astype(np.float64), w.data.astype(np.float64),
                        b.data.astype(np.float64))
    return float(np.abs(y.data - ref).max()), 1e-6


def check_gap_loop_oracle(rng: Rng):
    x = rand_uniform(rng, [1, 3, 4, 4], -1.0, 1.0)
    y = ops.global_avg_pool(x)
    ref = _gap_loops(x.data.astype(np.float64))
    return float(np.abs(y.data - ref).max()), 1e-6


def check_cost_totals(rng: Rng):
    cfg = _toy_config()
    model, store = build(cfg, Rng(rng.state & 0xFFFF))
    rep = model.cost(cfg.input_size)
    entry_sum = sum(e.params for e in rep.entries)
    mismatch = abs(rep.total_params - entry_sum)
    mismatch += abs(rep.total_params - store.total_values())
    non_int = sum(0 if isinstance(e.params, int) and isinstance(e.flops, int) else 1
                  for e in rep.entries)
    return float(mismatch + non_int), 0.0


def check_dafm_shape(rng: Rng):
    bad = 0
    for dims, g in (((1, 8, 4, 4), 2), ((2, 16, 6, 5), 4), ((1, 12, 3, 7), 3)):
        cfg = DafmConfig(dims[1], g)
        w = init_dafm(cfg, rng)
        y = dafm_forward(rand_uniform(rng, list(dims), -1, 1), cfg, w)
        bad += 0 if y.dims == dims else 1
    return float(bad), 0.0


def check_dafm_additivity(rng: Rng):
    cfg, w, x = _dafm_fixture(rng)
    whole = dafm_forward(x, cfg, w)
    parts = dafm_local_branch(x, cfg, w).data + dafm_context_branch(x, cfg, w).data
    return float(np.abs(whole.data - parts).max()), 0.0


def check_dafm_residual_identity(rng: Rng):
    cfg, w, x = _dafm_fixture(rng)
    _zero_weights(w.attn_out, skip=())
    y = dafm_context_branch(x, cfg, w)
    return float(np.abs(y.data - x.data).max()), 0.0


def check_dafm_row_stochastic(rng: Rng):
    cfg, w, x = _dafm_fixture(rng)
    n, c, h, wd = x.dims
    qkv = w.qkv_dw(w.qkv_pw(x))
    q = np.transpose(qkv.data[:, :c].reshape(n, c, h * wd), (0, 2, 1))
    k = qkv.data[:, c:2 * c].reshape(n, c, h * wd)
    logits = np.einsum("ncp,npd->ncd", k, q) / abs(float(w.attn_scale.item()))
    scores = ops.softmax(Tensor(logits.astype(np.float32)), 2)
    return float(np.abs(scores.data.sum(axis=2) - 1.0).max()), 1e-6


def check_dafm_attention_cost_scaling(rng: Rng):
    cfg = DafmConfig(16, 4)
    w = init_dafm(cfg, rng)
    lo = dafm_cost(cfg, w, 10, 10).subtotal("dafm.attention")[1]
    hi = dafm_cost(cfg, w, 20, 20).subtotal("dafm.attention")[1]
    # channel-attention flops are linear in HW: doubling H and W gives 4x,
    # a spatial HW x HW map would give 16x
    return float(abs(hi / lo - 4.0)), 0.0


def _oahead_fixture(rng):
    cfg = OaheadConfig(16)
    w = init_oahead(cfg, rng)
    x = rand_uniform(rng, [2, 16, 5, 5], -1.0, 1.0)
    return cfg, w, x


def check_oahead_gate_range(rng: Rng):
    cfg, w, x = _oahead_fixture(rng)
    gate = oahead_gate(x, cfg, w)
    bad = int(((gate.data <= 0.0) | (gate.data >= 1.0)).sum())
    return float(bad), 0.0


def check_oahead_spatial_constancy(rng: Rng):
    cfg, w, x = _oahead_fixture(rng)
    out = oahead_forward(x, cfg, w)
    gate = oahead_gate(x, cfg, w)
    n, c = gate.dims
    expect = x.data * gate.data.reshape(n, c, 1, 1)
    return float(np.abs(out.data - expect).max()), 0.0


def check_oahead_monotone_damping(rng: Rng):
    cfg, w, x = _oahead_fixture(rng)
    out = oahead_forward(x, cfg, w)
    bad = int((np.abs(out.data) > np.abs(x.data)).sum())
    return float(bad), 0.0


def check_dsconv_alpha_simplex(rng: Rng):
    cfg = DsconvConfig(16)
    w = init_dsconv(cfg, rng)
    x = rand_uniform(rng, [3, 16, 5, 5], -2.0, 2.0)
    a = dsconv_branch_weights(x, w)
    worst = float(np.abs(a.data.sum(axis=1) - 1.0).max())
    worst = max(worst, float(max(0.0, -a.data.min())))
    return worst, 1e-6


def check_dsconv_convexity(rng: Rng):
    # 1x1 kernels with shared weights force all three branch outputs equal
    cfg = DsconvConfig(8, square_k=1, strip_m=1)
    w = init_dsconv(cfg, rng)
    for br in (w.vertical, w.horizontal):
        br.dw.weight.data[...] = w.square.dw.weight.data
        br.dw.bias.data[...] = w.square.dw.bias.data
        br.pw.weight.data[...] = w.square.pw.weight.data
        br.pw.bias.data[...] = w.square.pw.bias.data
    x = rand_uniform(rng, [2, 8, 4, 4], -1.0, 1.0)
    f = w.square(x)
    y = dsconv_forward(x, cfg, w)
    return float(np.abs(y.data - f.data).max()), 1e-6


def check_dsconv_shape(rng: Rng):
    bad = 0
    for k, m in ((3, 5), (5, 7), (1, 3)):
        cfg = DsconvConfig(8, k, m)
        w = init_dsconv(cfg, rng)
        x = rand_uniform(rng, [1, 8, 6, 7], -1.0, 1.0)
        y = dsconv_forward(x, cfg, w)
        bad += 0 if y.dims == x.dims else 1
    return float(bad), 0.0


def check_build_determinism(rng: Rng):
    seed = rng.state & 0xFFFF
    _, s1 = build(_toy_config(), Rng(seed))
    _, s2 = build(_toy_config(), Rng(seed))
    return (0.0 if weightstore_to_bytes(s1) == weightstore_to_bytes(s2) else 1.0), 0.0


def check_weightstore_roundtrip(rng: Rng):
    _, store = build(_toy_config(), Rng(rng.state & 0xFFFF))
    blob = weightstore_to_bytes(store)
    again = weightstore_to_bytes(weightstore_from_bytes(blob))
    return (0.0 if blob == again else 1.0), 0.0


def check_manifest_completeness(rng: Rng):
    model, store = build(_toy_config(), Rng(rng.state & 0xFFFF))
    x = rand_uniform(rng, [1, 3, 64, 64], -1.0, 1.0)
    tape = Tape()
    model.forward(x, tape)
    known = {id(t) for _, t in store.entries}
    known.add(id(x))
    missing = sum(1 for tid in tape.leaf_ids()
                  if id(tape.tensor(tid)) not in known)
    return float(missing), 0.0


def check_output_strides(rng: Rng):
    model, _ = build(_toy_config(), Rng(rng.state & 0xFFFF))
    bad = 0
    for s in (64, 96):
        outs = model.forward(rand_uniform(rng, [1, 3, s, s], -1.0, 1.0))
        for (cls, box), stride in zip(outs, (8, 16, 32)):
            want_hw = (s // stride, s // stride)
            if cls.dims != (1, 6) + want_hw or box.dims != (1, 64) + want_hw:
                bad += 1
    return float(bad), 0.0


def check_toy_forward_finite(rng: Rng):
    model, store = build(_toy_config(), Rng(rng.state & 0xFFFF))
    for path, t in store.entries:
        if path.endswith(".bias"):
            t.data[...] = 0.0
    outs = model.forward(Tensor.zeros((1, 3, 64, 64)))
    bad = sum(0 if (np.isfinite(c.data).all() and np.isfinite(b.data).all()) else 1
              for c, b in outs)
    return float(bad), 0.0


def check_cost_orderings(rng: Rng):
    base = cost_report(ModelConfig.baseline())
    full = cost_report(ModelConfig.daonet())
    dafm_only = cost_report(ModelConfig(dafm=True))
    oahead_only = cost_report(ModelConfig(oahead=True))
    dsconv_only = cost_report(ModelConfig(dsconv=True))
    bad = 0
    bad += 0 if full.total_params < base.total_params else 1
    bad += 0 if full.total_flops < base.total_flops else 1
    bad += 0 if dafm_only.total_params > base.total_params else 1
    bad += 0 if dsconv_only.total_params < base.total_params else 1
    bad += 0 if oahead_only.total_flops < base.total_flops else 1
    return float(bad), 0.0


_CHECKS = [
    ("rng-determinism", check_rng_determinism),
    ("rng-seed-variation", check_rng_seed_variation),
    ("op-purity", check_op_purity),
    ("op-finiteness", check_op_finiteness),
    ("channel-shuffle-bijection", check_channel_shuffle_bijection),
    ("softmax-normalization", check_softmax_normalization),
    ("softmax-extreme-magnitude", check_softmax_extreme_magnitude),
    ("conv2d-loop-oracle", check_conv2d_loop_oracle),
    ("linear-loop-oracle", check_linear_loop_oracle),
    ("gap-loop-oracle", check_gap_loop_oracle),
    ("cost-totals-consistency", check_cost_totals),
    ("dafm-shape-preservation", check_dafm_shape),
    ("dafm-additivity", check_dafm_additivity),
    ("dafm-residual-identity", check_dafm_residual_identity),
    ("dafm-attention-row-stochastic", check_dafm_row_stochastic),
    ("dafm-attention-cost-scaling", check_dafm_attention_cost_scaling),
    ("oahead-gate-range", check_oahead_gate_range),
    ("oahead-gate-spatial-constancy", check_oahead_spatial_constancy),
    ("oahead-monotone-damping", check_oahead_monotone_damping),
    ("dsconv-alpha-simplex", check_dsconv_alpha_simplex),
    ("dsconv-convexity", check_dsconv_convexity),
    ("dsconv-shape-preservation", check_dsconv_shape),
    ("build-determinism", check_build_determinism),
    ("weightstore-roundtrip", check_weightstore_roundtrip),
    ("manifest-completeness", check_manifest_completeness),
    ("output-stride-contract", check_output_strides),
    ("toy-forward-finite", check_toy_forward_finite),
    ("cost-orderings", check_cost_orderings),
]

CHECK_NAMES = [name for name, _ in _CHECKS]


def run_checks(seed: int = 0) -> list[CheckResult]:
    results = []
    for idx, (name, fn) in enumerate(_CHECKS):
        rng = Rng(seed * 10007 + idx)
        t0 = time.perf_counter()
        measured, threshold = fn(rng)
        elapsed = int((time.perf_counter() - t0) * 1000)
        results.append(CheckResult(name, measured, threshold, elapsed))
    return results
